#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "sammix/dataio.hpp"
#include "sammix/metrics.hpp"
#include "sammix/model.hpp"
#include "sammix/promptgen.hpp"

namespace sammix::train {

enum class Mode { sam_mix_e2e, sam_pp_two_stage, cls_only };
enum class LrSchedule { constant, cosine_warm_restart };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);
std::string to_string(LrSchedule s);
LrSchedule schedule_from_string(const std::string& s);

struct TrainConfig {
    Mode mode = Mode::sam_mix_e2e;
    std::size_t n_labeled = 50;
    std::size_t epochs = 10;
    double lr = 1e-3;
    double lr_min = 0.0;
    std::size_t batch_size = 30;
    double lambda_seg = 1.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
    prompt::ThresholdConfig threshold;
    std::uint64_t seed = 0;
    /// Seeds of the repeated-runs harness.
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    /// Seed used to draw the labelled subset.
    std::uint64_t split_seed = 17;
    LrSchedule lr_schedule = LrSchedule::constant;
    std::size_t restart_period = 10;

    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    /// Substitute the ground-truth bounding box when a labelled sample yields no CAM box.
    bool gt_box_fallback = true;
    /// Weight of the squared error between predicted scores and achieved Dice.
    double score_loss_weight = 1.0;
    double dice_eps = 1e-6;
    /// Decode each box separately at inference and take the union of the selected masks.
    bool per_box_decode = false;
    bool single_threaded = true;
    /// Validation every this many epochs (0 disables it).
    std::size_t eval_every = 1;

    void validate() const;
};

/// Learning rate at a fractional epoch.
double lr_at(double epoch_fraction, const TrainConfig& config);
/// One cosine cycle: lr_min + (lr_max - lr_min)(1 + cos(pi t / period)) / 2.
double cosine_lr(double t, double period, double lr_max, double lr_min);

/// Adam with decoupled weight decay. Parameters without a gradient this step are left untouched.
class AdamW {
  public:
    struct Moments {
        std::vector<double> m, v;
        std::uint64_t steps = 0;
    };

    explicit AdamW(const TrainConfig& config);
    void step(const ParamList& params, double lr);

    std::map<std::string, Moments>& moments() { return moments_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }

  private:
    double beta1_, beta2_, eps_, weight_decay_;
    std::map<std::string, Moments> moments_;
};

struct StepRecord {
    double l_cls = 0.0;
    double l_seg = 0.0;
    double l_dice = 0.0;
    double total = 0.0;
    std::size_t n_gated = 0;
    double lr = 0.0;
};

struct SegLoss {
    ag::Var total; // dice of the best candidate + weighted score regression
    ag::Var dice;
    std::size_t best_index = 0;
};

/// Supervises the candidate with the lowest Dice loss; scores regress toward each candidate's soft Dice.
SegLoss segmentation_loss(const seg::SegForward& fwd, const BinaryMask& gt, const TrainConfig& config);

/// Which branches a step optimises.
enum class Phase { joint, classifier_only, segmenter_only };

struct TrainState {
    ModelState model;
    AdamW optimizer;
    std::size_t epoch = 0; // completed epochs
    std::uint64_t steps = 0;
    std::mt19937_64 rng;
    double running_l_cls = 0.0;
    double running_l_seg = 0.0;

    TrainState(ModelState m, const TrainConfig& config);
};

struct StepOptions {
    Phase phase = Phase::joint;
    /// Fixed prompts per sample id (two-stage protocol); overrides CAM boxes when present.
    const std::map<std::string, std::vector<prompt::BoxPrompt>>* fixed_boxes = nullptr;
    /// Skip the optimizer update (gradient inspection).
    bool apply_update = true;
    /// Position in the schedule; negative means the state's epoch counter.
    double epoch_fraction = -1.0;
};

/// One optimisation step over `batch`. Gradients are left in the parameters.
StepRecord train_step(const std::vector<const data::Sample*>& batch, const std::set<std::string>& labeled_ids,
                      TrainState& state, const TrainConfig& config, const StepOptions& options = {});

struct EpochLog {
    std::size_t epoch = 0;
    double l_cls = 0.0;
    double l_seg = 0.0;
    double total = 0.0;
    std::optional<double> val_dice;
    std::optional<double> val_hd;
    double lr = 0.0;
    std::string stage;
};

nlohmann::json to_json(const EpochLog& e);
nlohmann::json to_json(const std::vector<EpochLog>& log);

struct TrainResult {
    ModelState best;
    std::vector<EpochLog> log;
    std::optional<double> best_val_dice;
};

struct TrainOptions {
    const data::Dataset* val = nullptr;
    /// Writes best/ (model), last/ (train state), log.json and events.jsonl here when set.
    std::optional<std::filesystem::path> out_dir;
    /// Continue from a saved state instead of initialising.
    TrainState* resume = nullptr;
    /// Receives the state after the final epoch.
    std::optional<TrainState>* final_state = nullptr;
    /// Model to start from instead of a fresh initialisation.
    const ModelState* initial_model = nullptr;
};

/// End-to-end joint training (or classifier-only in cls_only mode).
TrainResult train(const data::Dataset& train_set, const ModelConfig& model_config, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Classifier first, then the segmenter on precomputed, fixed boxes.
TrainResult train_two_stage(const data::Dataset& train_set, const ModelConfig& model_config, const TrainConfig& config,
                            const TrainOptions& options = {});

/// Dispatches on config.mode.
TrainResult run_training(const data::Dataset& train_set, const ModelConfig& model_config, const TrainConfig& config,
                         const TrainOptions& options = {});

struct Diagnostics {
    std::array<double, 2> logits{};
    int predicted_class = 0;
    CamGrid cam;
    std::vector<prompt::BoxPrompt> boxes;
    std::vector<double> scores;
    std::optional<std::size_t> selected;
};

struct Prediction {
    BinaryMask mask;
    Diagnostics diagnostics;
};

Prediction predict(const ImageGrid& image, const ModelState& model, const prompt::ThresholdConfig& threshold,
                   bool per_box_decode = false);

/// Dice/Hausdorff of predict() over every sample carrying a mask.
metrics::EvalReport evaluate(const data::Dataset& dataset, const ModelState& model, const TrainConfig& config,
                             const std::string& model_name = "model", const std::string& domain = "in_domain",
                             std::optional<double> hd_percentile = {});

/// CAM-derived boxes for one image under the classifier only.
std::vector<prompt::BoxPrompt> cam_boxes(const ImageGrid& image, const cls::ClassifierParams& classifier,
                                         const prompt::ThresholdConfig& threshold);

void save_train_state(const TrainState& state, const TrainConfig& config, const std::filesystem::path& dir);
TrainState load_train_state(const std::filesystem::path& dir, const TrainConfig& config);

} // namespace sammix::train
