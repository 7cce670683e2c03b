#include "sammix/config.hpp"

#include <fstream>
#include <functional>
#include <type_traits>

#include "sammix/error.hpp"

namespace sammix {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Field {
    std::string key;
    std::function<json(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const json&)> set;
};

template <class T>
T convert(const std::string& key, const json& v) {
    auto bad = [&](const char* want) {
        return ConfigError("config key '" + key + "' expects " + want + ", got " + v.dump());
    };
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw bad("a boolean");
        return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<T>(v.get<std::int64_t>());
        throw bad("a non-negative integer");
    } else if constexpr (std::is_same_v<T, int>) {
        if (!v.is_number_integer()) throw bad("an integer");
        return v.get<int>();
    } else if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw bad("a number");
        return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw bad("a string");
        return v.get<std::string>();
    } else {
        if (!v.is_array()) throw bad("an array");
        T out;
        for (const auto& item : v) out.insert(out.end(), convert<typename T::value_type>(key, item));
        return out;
    }
}

template <class Acc>
Field plain(std::string key, Acc acc) {
    Field f;
    f.key = key;
    f.get = [acc](const ExperimentConfig& c) { return json(acc(c)); };
    f.set = [acc, key](ExperimentConfig& c, const json& v) {
        using T = std::remove_cvref_t<decltype(acc(c))>;
        acc(c) = convert<T>(key, v);
    };
    return f;
}

template <class Acc, class ToStr, class FromStr>
Field named_enum(std::string key, Acc acc, ToStr to_str, FromStr from_str) {
    Field f;
    f.key = key;
    f.get = [acc, to_str](const ExperimentConfig& c) { return json(std::string(to_str(acc(c)))); };
    f.set = [acc, from_str, key](ExperimentConfig& c, const json& v) {
        try {
            acc(c) = from_str(convert<std::string>(key, v));
        } catch (const ArgumentError& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
    };
    return f;
}

std::string threshold_mode_name(prompt::ThresholdMode m) {
    return m == prompt::ThresholdMode::relative ? "relative" : "absolute";
}

prompt::ThresholdMode threshold_mode_from(const std::string& s) {
    if (s == "relative") return prompt::ThresholdMode::relative;
    if (s == "absolute") return prompt::ThresholdMode::absolute;
    throw ArgumentError("unknown threshold mode '" + s + "' (relative|absolute)");
}

#define SAMMIX_REF(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> t;
        Field version;
        version.key = "version";
        version.get = [](const ExperimentConfig&) { return json(kConfigVersion); };
        version.set = [](ExperimentConfig&, const json& v) {
            if (!v.is_number_integer() || v.get<int>() != kConfigVersion) {
                throw ConfigError("unsupported config version " + v.dump() + " (expected " +
                                  std::to_string(kConfigVersion) + ")");
            }
        };
        t.push_back(version);

        Field size;
        size.key = "model.image_size";
        size.get = [](const ExperimentConfig& c) { return json(c.model.image_size()); };
        size.set = [](ExperimentConfig& c, const json& v) {
            c.model.set_image_size(convert<std::size_t>("model.image_size", v));
        };
        t.push_back(size);

        t.push_back(plain("classifier.channels", SAMMIX_REF(model.classifier.channels)));
        t.push_back(plain("classifier.strides", SAMMIX_REF(model.classifier.strides)));
        t.push_back(plain("classifier.kernel", SAMMIX_REF(model.classifier.kernel)));
        t.push_back(plain("classifier.padding", SAMMIX_REF(model.classifier.padding)));
        t.push_back(plain("classifier.residual", SAMMIX_REF(model.classifier.residual)));

        t.push_back(plain("segnet.patch_size", SAMMIX_REF(model.segnet.patch_size)));
        t.push_back(plain("segnet.dim", SAMMIX_REF(model.segnet.dim)));
        t.push_back(plain("segnet.depth", SAMMIX_REF(model.segnet.depth)));
        t.push_back(plain("segnet.heads", SAMMIX_REF(model.segnet.heads)));
        t.push_back(plain("segnet.mlp_ratio", SAMMIX_REF(model.segnet.mlp_ratio)));
        t.push_back(plain("segnet.lora_rank", SAMMIX_REF(model.segnet.lora_rank)));
        t.push_back(plain("segnet.lora_scale", SAMMIX_REF(model.segnet.lora_scale)));
        t.push_back(plain("segnet.lora_init_std", SAMMIX_REF(model.segnet.lora_init_std)));
        t.push_back(plain("segnet.lora_targets", SAMMIX_REF(model.segnet.lora_targets)));
        t.push_back(plain("segnet.num_masks", SAMMIX_REF(model.segnet.num_masks)));
        t.push_back(plain("segnet.decoder_depth", SAMMIX_REF(model.segnet.decoder_depth)));
        t.push_back(plain("segnet.decoder_heads", SAMMIX_REF(model.segnet.decoder_heads)));
        t.push_back(plain("segnet.mask_channels", SAMMIX_REF(model.segnet.mask_channels)));
        t.push_back(plain("segnet.fourier_scale", SAMMIX_REF(model.segnet.fourier_scale)));
        t.push_back(plain("segnet.base_seed", SAMMIX_REF(model.segnet.base_seed)));
        t.push_back(plain("segnet.train_prompt_encoder", SAMMIX_REF(model.segnet.train_prompt_encoder)));
        t.push_back(plain("segnet.train_decoder", SAMMIX_REF(model.segnet.train_decoder)));

        t.push_back(plain("promptgen.omega", SAMMIX_REF(trainer.threshold.omega)));
        t.push_back(named_enum("promptgen.threshold_mode", SAMMIX_REF(trainer.threshold.mode), threshold_mode_name,
                               threshold_mode_from));
        t.push_back(plain("promptgen.connectivity", SAMMIX_REF(trainer.threshold.connectivity)));
        t.push_back(plain("promptgen.min_area_px", SAMMIX_REF(trainer.threshold.min_area_px)));
        t.push_back(plain("promptgen.max_boxes", SAMMIX_REF(trainer.threshold.max_boxes)));
        t.push_back(plain("promptgen.merge_boxes", SAMMIX_REF(trainer.threshold.merge_boxes)));

        auto mode_to = [](train::Mode m) { return train::to_string(m); };
        auto mode_from = [](const std::string& s) { return train::mode_from_string(s); };
        t.push_back(named_enum("trainer.mode", SAMMIX_REF(trainer.mode), mode_to, mode_from));
        t.push_back(plain("trainer.n_labeled", SAMMIX_REF(trainer.n_labeled)));
        t.push_back(plain("trainer.epochs", SAMMIX_REF(trainer.epochs)));
        t.push_back(plain("trainer.lr", SAMMIX_REF(trainer.lr)));
        t.push_back(plain("trainer.lr_min", SAMMIX_REF(trainer.lr_min)));
        t.push_back(plain("trainer.batch_size", SAMMIX_REF(trainer.batch_size)));
        t.push_back(plain("trainer.lambda_seg", SAMMIX_REF(trainer.lambda_seg)));
        t.push_back(plain("trainer.focal_alpha", SAMMIX_REF(trainer.focal_alpha)));
        t.push_back(plain("trainer.focal_gamma", SAMMIX_REF(trainer.focal_gamma)));
        t.push_back(plain("trainer.seed", SAMMIX_REF(trainer.seed)));
        t.push_back(plain("trainer.seeds", SAMMIX_REF(trainer.seeds)));
        t.push_back(plain("trainer.split_seed", SAMMIX_REF(trainer.split_seed)));
        t.push_back(named_enum(
            "trainer.lr_schedule", SAMMIX_REF(trainer.lr_schedule),
            [](train::LrSchedule s) { return train::to_string(s); },
            [](const std::string& s) { return train::schedule_from_string(s); }));
        t.push_back(plain("trainer.restart_period", SAMMIX_REF(trainer.restart_period)));
        t.push_back(plain("trainer.weight_decay", SAMMIX_REF(trainer.weight_decay)));
        t.push_back(plain("trainer.beta1", SAMMIX_REF(trainer.beta1)));
        t.push_back(plain("trainer.beta2", SAMMIX_REF(trainer.beta2)));
        t.push_back(plain("trainer.adam_eps", SAMMIX_REF(trainer.adam_eps)));
        t.push_back(plain("trainer.gt_box_fallback", SAMMIX_REF(trainer.gt_box_fallback)));
        t.push_back(plain("trainer.score_loss_weight", SAMMIX_REF(trainer.score_loss_weight)));
        t.push_back(plain("trainer.dice_eps", SAMMIX_REF(trainer.dice_eps)));
        t.push_back(plain("trainer.per_box_decode", SAMMIX_REF(trainer.per_box_decode)));
        t.push_back(plain("trainer.single_threaded", SAMMIX_REF(trainer.single_threaded)));
        t.push_back(plain("trainer.eval_every", SAMMIX_REF(trainer.eval_every)));

        Field hd;
        hd.key = "metrics.hd_percentile";
        hd.get = [](const ExperimentConfig& c) { return c.hd_percentile ? json(*c.hd_percentile) : json(nullptr); };
        hd.set = [](ExperimentConfig& c, const json& v) {
            if (v.is_null()) {
                c.hd_percentile.reset();
            } else {
                c.hd_percentile = convert<double>("metrics.hd_percentile", v);
            }
        };
        t.push_back(hd);

        t.push_back(plain("data.window_width", SAMMIX_REF(data.window_width)));
        t.push_back(plain("data.window_center", SAMMIX_REF(data.window_center)));
        t.push_back(plain("data.middle_fraction", SAMMIX_REF(data.middle_fraction)));

        Field modes;
        modes.key = "matrix.modes";
        modes.get = [](const ExperimentConfig& c) {
            json arr = json::array();
            for (auto m : c.matrix.modes) arr.push_back(train::to_string(m));
            return arr;
        };
        modes.set = [](ExperimentConfig& c, const json& v) {
            std::vector<train::Mode> out;
            for (const auto& name : convert<std::vector<std::string>>("matrix.modes", v)) {
                try {
                    out.push_back(train::mode_from_string(name));
                } catch (const ArgumentError& e) {
                    throw ConfigError(std::string("config key 'matrix.modes': ") + e.what());
                }
            }
            c.matrix.modes = std::move(out);
        };
        t.push_back(modes);
        t.push_back(plain("matrix.n_labeled", SAMMIX_REF(matrix.n_labeled)));
        return t;
    }();
    return table;
}

#undef SAMMIX_REF

const Field& field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return f;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

bool is_model_key(const std::string& key) {
    return key.starts_with("model.") || key.starts_with("classifier.") || key.starts_with("segnet.");
}

} // namespace

void ExperimentConfig::validate() const {
    model.validate();
    trainer.validate();
    if (hd_percentile && !(*hd_percentile > 0.0 && *hd_percentile <= 100.0)) {
        throw ConfigError("metrics.hd_percentile must lie in (0, 100]");
    }
    if (!(data.window_width > 0.0)) throw ConfigError("data.window_width must be positive");
    if (!(data.middle_fraction > 0.0 && data.middle_fraction <= 1.0)) {
        throw ConfigError("data.middle_fraction must lie in (0, 1]");
    }
    if (matrix.modes.empty() || matrix.n_labeled.empty()) throw ConfigError("matrix axes must be non-empty");
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

json to_json(const ExperimentConfig& config) {
    json j = json::object();
    for (const auto& f : fields()) j[f.key] = f.get(config);
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    // Apply in table order so that the result does not depend on key order in the file.
    for (const auto& [k, v] : j.items()) field(k);
    for (const auto& f : fields()) {
        if (j.contains(f.key)) f.set(c, j.at(f.key));
    }
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void set_value(ExperimentConfig& config, const std::string& key, const json& value) { field(key).set(config, value); }

void apply_override(ExperimentConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const auto key = assignment.substr(0, eq);
    const auto text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set_value(config, key, value);
}

void write_snapshot(const ExperimentConfig& config, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::ofstream out(dir / "config.resolved.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "config.resolved.json").string());
    out << to_json(config).dump(2) << "\n";
}

json model_config_to_json(const ModelConfig& config) {
    ExperimentConfig c;
    c.model = config;
    json j = json::object();
    for (const auto& f : fields()) {
        if (is_model_key(f.key)) j[f.key] = f.get(c);
    }
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    if (!j.is_object()) throw FormatError("model config must be a JSON object");
    ExperimentConfig c;
    for (const auto& [k, v] : j.items()) {
        if (!is_model_key(k)) throw FormatError("unexpected model config key '" + k + "'");
    }
    try {
        for (const auto& f : fields()) {
            if (j.contains(f.key)) f.set(c, j.at(f.key));
        }
    } catch (const ConfigError& e) {
        throw FormatError(e.what());
    }
    return c.model;
}

} // namespace sammix
