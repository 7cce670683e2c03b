#include "sammix/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sammix/error.hpp"

namespace sammix::cls {

std::size_t ClassifierConfig::feature_size() const {
    std::size_t s = image_size;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (s + 2 * padding < kernel) throw ConfigError("classifier stage " + std::to_string(i) + " input too small");
        s = (s + 2 * padding - kernel) / strides[i] + 1;
        if (residual) {
            if (s + 2 * padding < kernel) throw ConfigError("classifier stage " + std::to_string(i) + " residual too small");
            s = s + 2 * padding - kernel + 1;
        }
    }
    return s;
}

void ClassifierConfig::validate() const {
    if (channels.empty()) throw ConfigError("classifier needs at least one stage");
    if (channels.size() != strides.size()) throw ConfigError("classifier channels and strides differ in length");
    if (kernel < 1) throw ConfigError("classifier kernel must be positive");
    for (auto c : channels) {
        if (c < 1) throw ConfigError("classifier channel counts must be positive");
    }
    for (auto s : strides) {
        if (s < 1) throw ConfigError("classifier strides must be positive");
    }
    (void)feature_size();
}

ClassifierParams ClassifierParams::init(const ClassifierConfig& config, std::mt19937_64& rng) {
    config.validate();
    ClassifierParams p;
    p.config = config;
    std::size_t in = 1;
    const auto k = config.kernel;
    for (std::size_t i = 0; i < config.channels.size(); ++i) {
        const auto out = config.channels[i];
        ConvStage st;
        st.stride = config.strides[i];
        st.down_w = normal_param({out, in, k, k}, std::sqrt(2.0 / static_cast<double>(in * k * k)), rng, true);
        st.down_b = zeros_param({out}, true);
        if (config.residual) {
            st.res_w = normal_param({out, out, k, k}, 0.5 * std::sqrt(2.0 / static_cast<double>(out * k * k)), rng, true);
            st.res_b = zeros_param({out}, true);
        }
        p.stages.push_back(std::move(st));
        in = out;
    }
    p.fc_weights = normal_param({2, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng, true);
    p.fc_bias = zeros_param({2}, true);
    return p;
}

ParamList ClassifierParams::named(const std::string& prefix) const {
    ParamList out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto base = prefix + "stage" + std::to_string(i) + ".";
        out.push_back({base + "down.weight", stages[i].down_w});
        out.push_back({base + "down.bias", stages[i].down_b});
        if (stages[i].res_w.defined()) {
            out.push_back({base + "res.weight", stages[i].res_w});
            out.push_back({base + "res.bias", stages[i].res_b});
        }
    }
    out.push_back({prefix + "fc.weight", fc_weights});
    out.push_back({prefix + "fc.bias", fc_bias});
    return out;
}

ag::Var image_tensor(const ImageGrid& image) {
    std::vector<double> v(image.storage().begin(), image.storage().end());
    return ag::Var::constant({1, image.height(), image.width()}, std::move(v));
}

ClassifierOutput classifier_forward(const ag::Var& image, const ClassifierParams& params) {
    const auto& cfg = params.config;
    if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != cfg.image_size || image.dim(2) != cfg.image_size) {
        throw ConfigError("classifier expects a 1x" + std::to_string(cfg.image_size) + "x" +
                          std::to_string(cfg.image_size) + " image");
    }
    for (double v : image.value()) {
        if (!std::isfinite(v)) throw ArgumentError("classifier input contains non-finite values");
    }
    ag::Var x = image;
    for (const auto& st : params.stages) {
        auto y = ag::gelu(ag::conv2d(x, st.down_w, st.down_b, st.stride, cfg.padding));
        if (st.res_w.defined()) {
            auto r = ag::conv2d(y, st.res_w, st.res_b, 1, cfg.padding);
            y = ag::gelu(ag::add(ag::center_crop(y, r.dim(1), r.dim(2)), r));
        }
        x = y;
    }
    if (x.dim(0) != params.fc_weights.dim(1)) throw ConfigError("final stage width does not match fc weights");
    auto pooled = ag::reshape(ag::global_avg_pool(x), {1, x.dim(0)});
    auto logits = ag::reshape(ag::linear(pooled, params.fc_weights, params.fc_bias), {2});
    return {logits, x};
}

ag::Var focal_loss(const ag::Var& logits, int label, double alpha, double gamma) {
    return ag::focal_loss(logits, label, alpha, gamma);
}

double focal_loss_value(double logit0, double logit1, int label, double alpha, double gamma) {
    ag::NoGradGuard guard;
    return ag::focal_loss(ag::Var::constant({2}, {logit0, logit1}), label, alpha, gamma).item();
}

Grid<double> cam_weighted_sum(const ag::Var& f_last, const ag::Var& fc_weights, int class_index) {
    if (f_last.rank() != 3) throw ArgumentError("CAM expects feature maps of shape [D,h,w]");
    if (class_index < 0 || static_cast<std::size_t>(class_index) >= fc_weights.dim(0)) {
        throw ArgumentError("CAM class index out of range");
    }
    const auto d = f_last.dim(0), h = f_last.dim(1), w = f_last.dim(2);
    if (fc_weights.rank() != 2 || fc_weights.dim(1) != d) {
        throw ArgumentError("CAM channel mismatch: features have " + std::to_string(d) + " channels, fc weights " +
                            std::to_string(fc_weights.rank() == 2 ? fc_weights.dim(1) : 0));
    }
    Grid<double> g(h, w, 0.0);
    const auto fv = f_last.value();
    const auto wv = fc_weights.value();
    for (std::size_t c = 0; c < d; ++c) {
        const double wc = wv[static_cast<std::size_t>(class_index) * d + c];
        if (!std::isfinite(wc)) throw ArgumentError("CAM weights are not finite");
        for (std::size_t i = 0; i < h * w; ++i) g.storage()[i] += wc * fv[c * h * w + i];
    }
    for (double v : g.storage()) {
        if (!std::isfinite(v)) throw ArgumentError("CAM of non-finite feature maps");
    }
    return g;
}

CamGrid compute_cam(const ag::Var& f_last, const ag::Var& fc_weights, int class_index, std::size_t out_h,
                    std::size_t out_w) {
    auto raw = cam_weighted_sum(f_last, fc_weights, class_index);
    std::vector<double> rect(raw.storage());
    for (auto& v : rect) v = std::max(v, 0.0);
    ag::NoGradGuard guard;
    auto up = ag::upsample_bilinear(ag::Var::constant({1, raw.height(), raw.width()}, std::move(rect)), out_h, out_w);
    CamGrid cam(out_h, out_w, std::vector<double>(up.value().begin(), up.value().end()));
    const double mx = grid_max(cam);
    if (mx > 0.0) {
        for (auto& v : cam.storage()) v = std::min(v / mx, 1.0);
    } else {
        std::fill(cam.storage().begin(), cam.storage().end(), 0.0);
    }
    return cam;
}

double positive_probability(const ag::Var& logits) {
    const auto l = logits.value();
    const double z = l[1] - l[0];
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

} // namespace sammix::cls
