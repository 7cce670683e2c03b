#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "sammix/grid.hpp"

namespace sammix::prompt {

enum class ThresholdMode { relative, absolute };

struct ThresholdConfig {
    /// Relative mode: tau = omega * max(cam). Absolute mode: tau = omega.
    double omega = 0.5;
    ThresholdMode mode = ThresholdMode::relative;
    int connectivity = 8;
    std::size_t min_area_px = 9;
    std::size_t max_boxes = 3;
    /// Replace the per-region boxes by their common bounding box.
    bool merge_boxes = false;

    void validate() const;
};

struct BoxPrompt {
    int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
    std::size_t area_px = 0;

    friend bool operator==(const BoxPrompt&, const BoxPrompt&) = default;
};

struct Region {
    int id = 0; // 1-based label in the label grid
    std::size_t area_px = 0;
    int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

struct RegionLabels {
    Grid<int> labels; // 0 = background
    std::vector<Region> regions; // area descending, ties by (y_min, x_min)
};

/// Normalised corner pair (x_min/W, y_min/H, x_max/W, y_max/H).
using PromptCoords = std::array<double, 4>;

BinaryMask threshold_cam(const CamGrid& cam, const ThresholdConfig& cfg);
RegionLabels label_regions(const BinaryMask& mask, int connectivity);
std::vector<BoxPrompt> extract_boxes(const RegionLabels& regions, const ThresholdConfig& cfg);
std::vector<PromptCoords> boxes_to_prompt_coords(const std::vector<BoxPrompt>& boxes, std::size_t height,
                                                 std::size_t width);
/// Inverse of boxes_to_prompt_coords for in-range coordinates (rounds to the nearest pixel).
std::vector<BoxPrompt> prompt_coords_to_boxes(const std::vector<PromptCoords>& coords, std::size_t height,
                                              std::size_t width);

/// threshold -> regions -> boxes, honouring merge_boxes.
std::vector<BoxPrompt> boxes_from_cam(const CamGrid& cam, const ThresholdConfig& cfg);

/// Tight box around every foreground pixel, or nothing for an empty mask.
std::vector<BoxPrompt> mask_bounding_box(const BinaryMask& mask);
BoxPrompt merge(const std::vector<BoxPrompt>& boxes);

/// [{id, x_min, y_min, x_max, y_max, area}, ...]
nlohmann::json boxes_to_json(const std::vector<BoxPrompt>& boxes);

} // namespace sammix::prompt
