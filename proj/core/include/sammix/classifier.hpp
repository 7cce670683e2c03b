#pragma once

#include <cstdint>
#include <vector>

#include "sammix/autograd.hpp"
#include "sammix/grid.hpp"
#include "sammix/params.hpp"

namespace sammix::cls {

struct ClassifierConfig {
    std::size_t image_size = 256;
    std::vector<std::size_t> channels{16, 32, 64, 64};
    std::vector<std::size_t> strides{2, 2, 2, 1};
    std::size_t kernel = 3;
    /// Zero padding of every conv; 0 makes the encoder padding-free (the skip path is centre-cropped).
    std::size_t padding = 1;
    bool residual = true;

    /// Spatial size of f_last; throws ConfigError when a stage would vanish.
    std::size_t feature_size() const;
    void validate() const;
};

struct ConvStage {
    ag::Var down_w, down_b; // strided conv
    ag::Var res_w, res_b;   // residual conv, undefined when residual=false
    std::size_t stride = 1;
};

/// Residual conv encoder followed by global average pooling and a 2-way linear head.
struct ClassifierParams {
    ClassifierConfig config;
    std::vector<ConvStage> stages;
    ag::Var fc_weights; // [2, D]
    ag::Var fc_bias;    // [2]

    static ClassifierParams init(const ClassifierConfig& config, std::mt19937_64& rng);
    ParamList named(const std::string& prefix = "classifier.") const;
    std::size_t feature_channels() const { return config.channels.back(); }
};

struct ClassifierOutput {
    ag::Var logits; // [2]
    ag::Var f_last; // [D, h, w]
};

/// Image tensor of shape [1, H, W] from a grid.
ag::Var image_tensor(const ImageGrid& image);

ClassifierOutput classifier_forward(const ag::Var& image, const ClassifierParams& params);
inline ClassifierOutput classifier_forward(const ImageGrid& image, const ClassifierParams& params) {
    return classifier_forward(image_tensor(image), params);
}

/// Differentiable focal loss; see ag::focal_loss.
ag::Var focal_loss(const ag::Var& logits, int label, double alpha = 0.25, double gamma = 2.0);
/// Scalar evaluation used by tests and logging.
double focal_loss_value(double logit0, double logit1, int label, double alpha, double gamma);

/// CAM for `class_index` at out_h x out_w: weighted channel sum, rectified,
/// bilinearly upsampled (aligned corners) and divided by its maximum (all zero if max is 0).
CamGrid compute_cam(const ag::Var& f_last, const ag::Var& fc_weights, int class_index, std::size_t out_h,
                    std::size_t out_w);

/// Raw weighted sum before rectification/resizing, shape h x w.
Grid<double> cam_weighted_sum(const ag::Var& f_last, const ag::Var& fc_weights, int class_index);

/// Softmax probability of class 1.
double positive_probability(const ag::Var& logits);

} // namespace sammix::cls
