#pragma once

// Flat experiment configuration addressed by dotted keys ("trainer.lr",
// "segnet.lora_rank", ...). Files hold a single JSON object; keys that are not
// listed by config_keys() are rejected.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sammix/model.hpp"
#include "sammix/trainer.hpp"

namespace sammix {

inline constexpr int kConfigVersion = 1;

struct DataConfig {
    double window_width = 400.0;
    double window_center = 40.0;
    double middle_fraction = 0.3;
};

struct MatrixConfig {
    std::vector<train::Mode> modes{train::Mode::sam_pp_two_stage, train::Mode::sam_mix_e2e};
    std::vector<std::size_t> n_labeled{0, 5, 50, 100};
};

struct ExperimentConfig {
    ModelConfig model;
    train::TrainConfig trainer;
    std::optional<double> hd_percentile;
    DataConfig data;
    MatrixConfig matrix;

    void validate() const;
};

/// Every accepted key, in snapshot order.
std::vector<std::string> config_keys();

nlohmann::json to_json(const ExperimentConfig& config);
/// Starts from defaults and applies every key of `j`; unknown keys, bad types and
/// unsupported versions throw ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies "key=value"; the value is parsed as JSON, falling back to a bare string.
void apply_override(ExperimentConfig& config, const std::string& assignment);
void set_value(ExperimentConfig& config, const std::string& key, const nlohmann::json& value);

/// Writes `<dir>/config.resolved.json`.
void write_snapshot(const ExperimentConfig& config, const std::filesystem::path& dir);

/// Model-only subset (the "model.", "classifier." and "segnet." keys) stored in checkpoints.
nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

} // namespace sammix
