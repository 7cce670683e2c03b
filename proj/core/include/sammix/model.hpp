#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sammix/classifier.hpp"
#include "sammix/segnet.hpp"

namespace sammix {

struct ModelConfig {
    cls::ClassifierConfig classifier;
    seg::SegnetConfig segnet;

    void set_image_size(std::size_t size) {
        classifier.image_size = size;
        segnet.image_size = size;
    }
    std::size_t image_size() const { return classifier.image_size; }
    void validate() const;
};

/// Every parameter of the joint model.
struct ModelState {
    cls::ClassifierParams classifier;
    seg::SegnetParams segnet;

    static ModelState init(const ModelConfig& config, std::uint64_t seed);
    ParamList parameters() const;
    /// Independent copy; the original's tensors are shared by plain copies.
    ModelState clone() const;
    ModelConfig config() const { return {classifier.config, segnet.config}; }
};

// ---------------------------------------------------------------- archives

/// Named f64 tensors plus free-form metadata.
struct TensorArchive {
    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::vector<double> values;
        bool trainable = false;
    };
    std::vector<Entry> entries;
    nlohmann::json meta = nlohmann::json::object();

    const Entry* find(const std::string& name) const;
};

inline constexpr int kCheckpointFormatVersion = 1;

/// `<dir>/manifest.json` (names, shapes, dtype, offsets, trainable flags, meta) + `<dir>/tensors.bin`.
void save_archive(const TensorArchive& archive, const std::filesystem::path& dir);
TensorArchive load_archive(const std::filesystem::path& dir);

TensorArchive to_archive(const ParamList& params);
/// Copies archive values into `params` by name; missing entries or shape mismatches throw FormatError.
void restore_params(const TensorArchive& archive, const ParamList& params);

/// Checkpoint holding the model and its config.
void save_model(const ModelState& model, const std::filesystem::path& dir, const nlohmann::json& extra_meta = {});
ModelState load_model(const std::filesystem::path& dir);

} // namespace sammix
