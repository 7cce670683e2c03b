#include "sammix/promptgen.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace sammix::prompt {

void ThresholdConfig::validate() const {
    if (mode == ThresholdMode::relative && !(omega > 0.0 && omega <= 1.0)) {
        throw ConfigError("relative threshold factor must lie in (0, 1]");
    }
    if (mode == ThresholdMode::absolute && !(omega >= 0.0 && omega <= 1.0)) {
        throw ConfigError("absolute threshold must lie in [0, 1]");
    }
    if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity must be 4 or 8");
    if (max_boxes < 1) throw ConfigError("max_boxes must be positive");
}

BinaryMask threshold_cam(const CamGrid& cam, const ThresholdConfig& cfg) {
    cfg.validate();
    for (double v : cam.storage()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("CAM values must lie in [0,1]");
    }
    BinaryMask mask(cam.height(), cam.width(), 0);
    const double mx = grid_max(cam);
    if (mx <= 0.0) return mask;
    const double tau = cfg.mode == ThresholdMode::relative ? cfg.omega * mx : cfg.omega;
    for (std::size_t i = 0; i < cam.size(); ++i) mask.storage()[i] = cam.storage()[i] >= tau ? 1 : 0;
    return mask;
}

RegionLabels label_regions(const BinaryMask& mask, int connectivity) {
    if (connectivity != 4 && connectivity != 8) throw ArgumentError("connectivity must be 4 or 8");
    const auto h = static_cast<int>(mask.height()), w = static_cast<int>(mask.width());
    RegionLabels out{Grid<int>(mask.height(), mask.width(), 0), {}};

    // Two-pass labelling with union-find over provisional labels.
    std::vector<int> parent{0};
    auto find = [&parent](int a) {
        while (parent[static_cast<std::size_t>(a)] != a) {
            parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
            a = parent[static_cast<std::size_t>(a)];
        }
        return a;
    };
    auto unite = [&](int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    };
    auto& lab = out.labels;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask(static_cast<std::size_t>(y), static_cast<std::size_t>(x))) continue;
            int neighbours[4];
            int n = 0;
            auto take = [&](int yy, int xx) {
                if (yy < 0 || xx < 0 || xx >= w) return;
                const int l = lab(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                if (l) neighbours[n++] = l;
            };
            take(y, x - 1);
            take(y - 1, x);
            if (connectivity == 8) {
                take(y - 1, x - 1);
                take(y - 1, x + 1);
            }
            int label;
            if (n == 0) {
                label = static_cast<int>(parent.size());
                parent.push_back(label);
            } else {
                label = *std::min_element(neighbours, neighbours + n);
                for (int i = 0; i < n; ++i) unite(label, neighbours[i]);
            }
            lab(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = label;
        }
    }

    std::vector<int> root_to_region(parent.size(), -1);
    std::vector<Region> regions;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int& l = lab(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            if (!l) continue;
            const int root = find(l);
            int& r = root_to_region[static_cast<std::size_t>(root)];
            if (r < 0) {
                r = static_cast<int>(regions.size());
                regions.push_back({0, 0, x, y, x, y});
            }
            auto& reg = regions[static_cast<std::size_t>(r)];
            ++reg.area_px;
            reg.x_min = std::min(reg.x_min, x);
            reg.x_max = std::max(reg.x_max, x);
            reg.y_min = std::min(reg.y_min, y);
            reg.y_max = std::max(reg.y_max, y);
            l = r + 1;
        }
    }

    std::vector<std::size_t> order(regions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Regions are numbered by their first pixel in raster order, which settles the remaining ties.
    std::stable_sort(order.begin(), order.end(), [&regions](std::size_t a, std::size_t b) {
        const auto& ra = regions[a];
        const auto& rb = regions[b];
        if (ra.area_px != rb.area_px) return ra.area_px > rb.area_px;
        if (ra.y_min != rb.y_min) return ra.y_min < rb.y_min;
        return ra.x_min < rb.x_min;
    });
    std::vector<int> remap(regions.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        remap[order[rank]] = static_cast<int>(rank) + 1;
        Region r = regions[order[rank]];
        r.id = static_cast<int>(rank) + 1;
        out.regions.push_back(r);
    }
    for (auto& l : lab.storage()) {
        if (l) l = remap[static_cast<std::size_t>(l - 1)];
    }
    return out;
}

std::vector<BoxPrompt> extract_boxes(const RegionLabels& regions, const ThresholdConfig& cfg) {
    std::vector<BoxPrompt> boxes;
    for (const auto& r : regions.regions) {
        if (r.area_px < cfg.min_area_px) continue;
        if (boxes.size() >= cfg.max_boxes) break;
        boxes.push_back({r.x_min, r.y_min, r.x_max, r.y_max, r.area_px});
    }
    return boxes;
}

BoxPrompt merge(const std::vector<BoxPrompt>& boxes) {
    if (boxes.empty()) throw ArgumentError("cannot merge an empty box list");
    BoxPrompt m = boxes.front();
    m.area_px = 0;
    for (const auto& b : boxes) {
        m.x_min = std::min(m.x_min, b.x_min);
        m.y_min = std::min(m.y_min, b.y_min);
        m.x_max = std::max(m.x_max, b.x_max);
        m.y_max = std::max(m.y_max, b.y_max);
        m.area_px += b.area_px;
    }
    return m;
}

std::vector<BoxPrompt> boxes_from_cam(const CamGrid& cam, const ThresholdConfig& cfg) {
    auto boxes = extract_boxes(label_regions(threshold_cam(cam, cfg), cfg.connectivity), cfg);
    if (cfg.merge_boxes && boxes.size() > 1) return {merge(boxes)};
    return boxes;
}

std::vector<BoxPrompt> mask_bounding_box(const BinaryMask& mask) {
    BoxPrompt b{static_cast<int>(mask.width()), static_cast<int>(mask.height()), -1, -1, 0};
    for (std::size_t y = 0; y < mask.height(); ++y) {
        for (std::size_t x = 0; x < mask.width(); ++x) {
            if (!mask(y, x)) continue;
            b.x_min = std::min(b.x_min, static_cast<int>(x));
            b.y_min = std::min(b.y_min, static_cast<int>(y));
            b.x_max = std::max(b.x_max, static_cast<int>(x));
            b.y_max = std::max(b.y_max, static_cast<int>(y));
            ++b.area_px;
        }
    }
    if (b.area_px == 0) return {};
    return {b};
}

std::vector<PromptCoords> boxes_to_prompt_coords(const std::vector<BoxPrompt>& boxes, std::size_t height,
                                                 std::size_t width) {
    const auto h = static_cast<int>(height), w = static_cast<int>(width);
    std::vector<PromptCoords> out;
    out.reserve(boxes.size());
    for (const auto& b : boxes) {
        if (b.x_min < 0 || b.y_min < 0 || b.x_min > b.x_max || b.y_min > b.y_max || b.x_max >= w || b.y_max >= h) {
            throw ArgumentError("box (" + std::to_string(b.x_min) + "," + std::to_string(b.y_min) + "," +
                                std::to_string(b.x_max) + "," + std::to_string(b.y_max) + ") outside " +
                                std::to_string(width) + "x" + std::to_string(height) + " image");
        }
        out.push_back({b.x_min / static_cast<double>(width), b.y_min / static_cast<double>(height),
                       b.x_max / static_cast<double>(width), b.y_max / static_cast<double>(height)});
    }
    return out;
}

std::vector<BoxPrompt> prompt_coords_to_boxes(const std::vector<PromptCoords>& coords, std::size_t height,
                                              std::size_t width) {
    std::vector<BoxPrompt> out;
    for (const auto& c : coords) {
        BoxPrompt b;
        b.x_min = static_cast<int>(std::lround(c[0] * static_cast<double>(width)));
        b.y_min = static_cast<int>(std::lround(c[1] * static_cast<double>(height)));
        b.x_max = static_cast<int>(std::lround(c[2] * static_cast<double>(width)));
        b.y_max = static_cast<int>(std::lround(c[3] * static_cast<double>(height)));
        b.area_px = static_cast<std::size_t>((b.x_max - b.x_min + 1) * (b.y_max - b.y_min + 1));
        out.push_back(b);
    }
    return out;
}

nlohmann::json boxes_to_json(const std::vector<BoxPrompt>& boxes) {
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& b = boxes[i];
        arr.push_back({{"id", i},
                       {"x_min", b.x_min},
                       {"y_min", b.y_min},
                       {"x_max", b.x_max},
                       {"y_max", b.y_max},
                       {"area", b.area_px}});
    }
    return arr;
}

} // namespace sammix::prompt
