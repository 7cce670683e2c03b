#pragma once

// Miniature promptable segmenter: ViT image encoder with low-rank adapters on
// the attention projections, a box prompt encoder and a two-way attention mask
// decoder producing K candidate masks with confidence scores.

#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sammix/autograd.hpp"
#include "sammix/grid.hpp"
#include "sammix/params.hpp"
#include "sammix/promptgen.hpp"

namespace sammix::seg {

struct SegnetConfig {
    std::size_t image_size = 256;
    std::size_t patch_size = 16;
    std::size_t dim = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;

    std::size_t lora_rank = 8;
    double lora_scale = 1.0;
    double lora_init_std = 0.02;
    /// Subset of {"q","k","v","o"} carrying an adapter.
    std::set<std::string> lora_targets{"q", "v"};

    std::size_t num_masks = 3;
    std::size_t decoder_depth = 1;
    std::size_t decoder_heads = 2;
    /// Channels of the full-resolution mask feature map.
    std::size_t mask_channels = 16;
    double fourier_scale = 1.0;

    /// Seed of the frozen weights. They stand in for pretrained weights, so every run shares them.
    std::uint64_t base_seed = 20240501;

    bool train_prompt_encoder = true;
    bool train_decoder = true;

    std::size_t grid_size() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid_size() * grid_size(); }
    void validate() const;
};

/// Low-rank update: y = W x + scale * B (A x).
struct LoraAdapter {
    ag::Var A; // [r, d_in]
    ag::Var B; // [d_out, r]
    std::size_t rank = 0;
    double scale = 1.0;

    std::size_t trainable_count() const { return A.numel() + B.numel(); }
};

struct Projection {
    ag::Var weight; // [d_out, d_in], frozen
    ag::Var bias;   // [d_out], frozen
    std::optional<LoraAdapter> lora;
};

struct EncoderBlock {
    ag::Var ln1_g, ln1_b, ln2_g, ln2_b;
    Projection q, k, v, o;
    ag::Var mlp1_w, mlp1_b, mlp2_w, mlp2_b;
};

struct Attention {
    ag::Var q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    std::size_t heads = 1;
};

struct DecoderLayer {
    Attention self_attn, token_to_image, image_to_token;
    ag::Var ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b, ln4_g, ln4_b;
    ag::Var mlp1_w, mlp1_b, mlp2_w, mlp2_b;
};

struct SegnetParams {
    SegnetConfig config;

    // Image encoder (frozen base apart from adapters).
    ag::Var patch_w, patch_b, pos_embed;
    std::vector<EncoderBlock> blocks;
    ag::Var neck_ln_g, neck_ln_b;

    // Prompt encoder.
    ag::Var fourier;                       // [2, dim/2], frozen
    ag::Var corner_tl, corner_br, no_prompt; // [1, dim]

    // Mask decoder.
    ag::Var score_token, mask_tokens; // [1,dim], [K,dim]
    std::vector<DecoderLayer> layers;
    Attention final_attn;
    ag::Var final_ln_g, final_ln_b;
    ag::Var up_w, up_b;           // dense -> mask_channels
    ag::Var refine1_w, refine1_b; // [C, 2, 3, 3] on (image, box raster)
    ag::Var refine2_w, refine2_b; // [C, C, 3, 3]
    ag::Var hyper1_w, hyper1_b, hyper2_w, hyper2_b;
    ag::Var score1_w, score1_b, score2_w, score2_b;

    static SegnetParams init(const SegnetConfig& config, std::mt19937_64& rng);
    ParamList named(const std::string& prefix = "segnet.") const;

    /// Adapter A/B matrices only.
    ParamList lora_params() const;
    /// Encoder weights that never train.
    ParamList frozen_base_params() const;
    /// Zeroes every adapter B, making the encoder equal its frozen base.
    void reset_lora_updates();
};

// ---------------------------------------------------------------- operations

/// W x + scale * B (A x) for a single vector.
std::vector<double> lora_apply(std::span<const double> x, const ag::Var& w_base, const LoraAdapter& adapter);
/// Batched projection over the rows of x[n, d_in].
ag::Var project(const ag::Var& x, const Projection& proj);

/// Dense embeddings [num_patches, dim].
ag::Var image_encode(const ImageGrid& image, const SegnetParams& params);
ag::Var image_encode(const ag::Var& image, const SegnetParams& params);

struct PromptEmbedding {
    ag::Var sparse; // [2 * boxes (or 1), dim]
    std::vector<prompt::PromptCoords> coords;
};

/// Two tokens per box (top-left, bottom-right); a single no-prompt token when empty.
PromptEmbedding prompt_encode(const std::vector<prompt::PromptCoords>& coords, const SegnetParams& params);

struct SegForward {
    ag::Var masks;  // [K, H*W], sigmoid probabilities
    ag::Var scores; // [K]
};

SegForward mask_decode(const ag::Var& dense, const PromptEmbedding& prompts, const ag::Var& image,
                       const SegnetParams& params);

/// Encode + prompt + decode in one call.
SegForward segment(const ag::Var& image, const std::vector<prompt::PromptCoords>& coords, const SegnetParams& params);

struct SegPrediction {
    std::vector<Grid<double>> masks;
    std::vector<double> scores;
};

SegPrediction to_prediction(const SegForward& fwd, std::size_t height, std::size_t width);

/// Decodes each box separately, keeps each decode's best mask and takes the pixelwise maximum.
SegPrediction segment_per_box(const ag::Var& image, const std::vector<prompt::PromptCoords>& coords,
                              const SegnetParams& params);

double dice_loss(std::span<const double> pred, const BinaryMask& gt, double eps = 1e-6);
ag::Var dice_loss(const ag::Var& pred, const BinaryMask& gt, double eps = 1e-6);

struct Selection {
    std::size_t index = 0;
    double score = 0.0;
};
/// Highest score; the lowest index wins ties.
Selection select_best_mask(std::span<const double> scores);
std::pair<Grid<double>, double> select_best_mask(const SegPrediction& pred);

/// Rasterised union of the prompt boxes at H x W.
std::vector<double> box_raster(const std::vector<prompt::PromptCoords>& coords, std::size_t height, std::size_t width);

} // namespace sammix::seg
