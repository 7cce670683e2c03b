#pragma once

// Independent scalar reference implementations used to cross-check the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "sammix/grid.hpp"
#include "sammix/promptgen.hpp"

namespace sammix::oracle {

inline BinaryMask threshold(const CamGrid& cam, double omega) {
    double mx = 0.0;
    for (std::size_t y = 0; y < cam.height(); ++y) {
        for (std::size_t x = 0; x < cam.width(); ++x) mx = std::max(mx, cam(y, x));
    }
    BinaryMask m(cam.height(), cam.width(), 0);
    if (mx == 0.0) return m;
    for (std::size_t y = 0; y < cam.height(); ++y) {
        for (std::size_t x = 0; x < cam.width(); ++x) m(y, x) = cam(y, x) >= omega * mx ? 1 : 0;
    }
    return m;
}

struct OracleRegion {
    std::vector<std::pair<int, int>> pixels; // (y, x)
};

inline void flood(const BinaryMask& m, Grid<int>& lab, int y, int x, int id, int connectivity, OracleRegion& r) {
    const int h = static_cast<int>(m.height()), w = static_cast<int>(m.width());
    if (y < 0 || x < 0 || y >= h || x >= w) return;
    if (!m(y, x) || lab(y, x)) return;
    lab(y, x) = id;
    r.pixels.emplace_back(y, x);
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            if (connectivity == 4 && dy != 0 && dx != 0) continue;
            flood(m, lab, y + dy, x + dx, id, connectivity, r);
        }
    }
}

/// Recursive flood fill in raster order of seeds. Labels are raster-discovery order (1-based).
inline std::pair<Grid<int>, std::vector<OracleRegion>> flood_fill(const BinaryMask& m, int connectivity) {
    Grid<int> lab(m.height(), m.width(), 0);
    std::vector<OracleRegion> regions;
    for (std::size_t y = 0; y < m.height(); ++y) {
        for (std::size_t x = 0; x < m.width(); ++x) {
            if (m(y, x) && !lab(y, x)) {
                regions.emplace_back();
                flood(m, lab, static_cast<int>(y), static_cast<int>(x), static_cast<int>(regions.size()),
                      connectivity, regions.back());
            }
        }
    }
    return {std::move(lab), std::move(regions)};
}

/// Box by scanning the pixel list for extreme coordinates.
inline prompt::BoxPrompt scan_box(const OracleRegion& r) {
    prompt::BoxPrompt b{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1, r.pixels.size()};
    for (auto [y, x] : r.pixels) {
        if (x < b.x_min) b.x_min = x;
        if (y < b.y_min) b.y_min = y;
        if (x > b.x_max) b.x_max = x;
        if (y > b.y_max) b.y_max = y;
    }
    return b;
}

/// Flood-fill labels renumbered by rank: area descending, then (y_min, x_min), then discovery order.
inline Grid<int> ranked_labels(const BinaryMask& m, int connectivity) {
    auto [lab, regions] = flood_fill(m, connectivity);
    std::vector<std::size_t> order(regions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto ba = scan_box(regions[a]), bb = scan_box(regions[b]);
        return std::make_tuple(-static_cast<long>(ba.area_px), ba.y_min, ba.x_min) <
               std::make_tuple(-static_cast<long>(bb.area_px), bb.y_min, bb.x_min);
    });
    std::vector<int> rank(regions.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = static_cast<int>(r) + 1;
    for (auto& l : lab.storage()) {
        if (l) l = rank[static_cast<std::size_t>(l - 1)];
    }
    return lab;
}

/// Boxes ordered by area desc then (y_min, x_min), filtered by min area and capped.
inline std::vector<prompt::BoxPrompt> boxes(const BinaryMask& m, int connectivity, std::size_t min_area,
                                            std::size_t max_boxes) {
    auto [lab, regions] = flood_fill(m, connectivity);
    std::vector<prompt::BoxPrompt> all;
    for (const auto& r : regions) all.push_back(scan_box(r));
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        return std::make_tuple(-static_cast<long>(a.area_px), a.y_min, a.x_min) <
               std::make_tuple(-static_cast<long>(b.area_px), b.y_min, b.x_min);
    });
    std::vector<prompt::BoxPrompt> out;
    for (const auto& b : all) {
        if (b.area_px < min_area) continue;
        if (out.size() >= max_boxes) break;
        out.push_back(b);
    }
    return out;
}

/// True when both label grids induce the same partition of the foreground.
inline bool same_partition(const Grid<int>& a, const Grid<int>& b) {
    if (a.height() != b.height() || a.width() != b.width()) return false;
    std::map<int, int> ab, ba;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const int la = a.storage()[i], lb = b.storage()[i];
        if ((la == 0) != (lb == 0)) return false;
        if (la == 0) continue;
        auto [ia, na] = ab.emplace(la, lb);
        auto [ib, nb] = ba.emplace(lb, la);
        if (ia->second != lb || ib->second != la) return false;
    }
    return true;
}

inline std::size_t count_and(const BinaryMask& a, const BinaryMask& b) {
    std::size_t n = 0;
    for (std::size_t y = 0; y < a.height(); ++y) {
        for (std::size_t x = 0; x < a.width(); ++x) n += (a(y, x) && b(y, x)) ? 1 : 0;
    }
    return n;
}

inline std::size_t count(const BinaryMask& a) {
    std::size_t n = 0;
    for (std::size_t y = 0; y < a.height(); ++y) {
        for (std::size_t x = 0; x < a.width(); ++x) n += a(y, x) ? 1 : 0;
    }
    return n;
}

/// Hand-count Dice with the both-empty convention.
inline double dice(const BinaryMask& p, const BinaryMask& g) {
    const auto np = count(p), ng = count(g);
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(count_and(p, g)) / static_cast<double>(np + ng);
}

inline std::vector<std::pair<int, int>> boundary(const BinaryMask& m) {
    const int h = static_cast<int>(m.height()), w = static_cast<int>(m.width());
    auto fg = [&](int y, int x) { return y >= 0 && x >= 0 && y < h && x < w && m(y, x) != 0; };
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) out.emplace_back(y, x);
        }
    }
    return out;
}

/// All-pairs symmetric boundary Hausdorff; -1 when exactly one mask is empty, 0 when both are.
inline double hausdorff(const BinaryMask& a, const BinaryMask& b) {
    const auto ba = boundary(a), bb = boundary(b);
    if (ba.empty() && bb.empty()) return 0.0;
    if (ba.empty() || bb.empty()) return -1.0;
    auto directed = [](const auto& from, const auto& to) {
        double worst = 0.0;
        for (auto [y1, x1] : from) {
            double best = std::numeric_limits<double>::infinity();
            for (auto [y2, x2] : to) {
                const double d = std::sqrt(static_cast<double>((y1 - y2) * (y1 - y2) + (x1 - x2) * (x1 - x2)));
                best = std::min(best, d);
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    return std::max(directed(ba, bb), directed(bb, ba));
}

} // namespace sammix::oracle
