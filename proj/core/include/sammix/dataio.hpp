#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sammix/grid.hpp"

namespace sammix::data {

/// S x H x W voxel block, row-major with slices outermost.
struct RawVolume {
    std::size_t slices = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> voxels;
    std::array<double, 3> spacing{1.0, 1.0, 1.0}; // (slice, row, column) in mm

    float at(std::size_t s, std::size_t y, std::size_t x) const { return voxels[(s * height + y) * width + x]; }
    Grid<float> slice(std::size_t s) const;

    /// Throws DataIntegrityError on S < 1, H/W < 8, payload mismatch, non-finite voxels
    /// or non-positive spacing.
    void validate() const;
};

struct Sample {
    std::string id;
    ImageGrid image;
    std::optional<BinaryMask> seg_label;
    int cls_label = 0;
};

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct Dataset {
    Split split = Split::train;
    std::vector<Sample> samples;
    std::set<std::string> labeled_ids;

    const Sample* find(std::string_view id) const;
    bool is_labeled(std::string_view id) const { return labeled_ids.count(std::string(id)) != 0; }

    /// Checks the Sample and labeled_ids invariants; throws DataIntegrityError.
    void validate() const;
};

inline constexpr int kDatasetFormatVersion = 1;

// ---------------------------------------------------------------- preprocessing

/// Linear HU window onto [0,1] with clamping.
RawVolume window_level(const RawVolume& volume, double width, double center);
float window_level_value(float hu, double width, double center);

/// Contiguous, centered slice window covering `fraction` of the volume.
std::vector<std::size_t> extract_middle_slices(std::size_t num_slices, double fraction);
inline std::vector<std::size_t> extract_middle_slices(const RawVolume& volume, double fraction) {
    return extract_middle_slices(volume.slices, fraction);
}

enum class ResizeMode { bilinear, nearest };

/// Bilinear uses aligned corners; nearest samples the source pixel containing the
/// target pixel centre. Bilinear on a mask is rejected so masks stay binary.
ImageGrid resize_grid(const ImageGrid& grid, std::size_t height, std::size_t width, ResizeMode mode);
BinaryMask resize_grid(const BinaryMask& grid, std::size_t height, std::size_t width, ResizeMode mode);

int derive_class_label(const BinaryMask& mask);

/// Keeps segmentation supervision on `n_labeled` positive samples drawn globally with `seed`.
Dataset split_supervision(const Dataset& dataset, std::size_t n_labeled, std::uint64_t seed);

// ---------------------------------------------------------------- on-disk format

/// Writes `<dir>/split.json`, `<dir>/images/<id>.f32` and `<dir>/masks/<id>.u8`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Raw float32 little-endian helpers shared with the checkpoint code.
void write_f32_file(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_file(const std::filesystem::path& path, std::size_t expected_count);

} // namespace sammix::data
