#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sammix/error.hpp"
#include "sammix/promptgen.hpp"
#include "test_support.hpp"

using namespace sammix;
using namespace sammix::prompt;

namespace {

ThresholdConfig cfg_with(double omega, int connectivity = 8, std::size_t min_area = 0, std::size_t max_boxes = 100) {
    ThresholdConfig c;
    c.omega = omega;
    c.connectivity = connectivity;
    c.min_area_px = min_area;
    c.max_boxes = max_boxes;
    return c;
}

} // namespace

TEST(Threshold, PinnedExamples) {
    EXPECT_EQ(threshold_cam(CamGrid(4, 4, 0.0), cfg_with(0.5)), BinaryMask(4, 4, 0));
    CamGrid cam(1, 5, 0.0);
    cam.storage() = {0.8, 0.4, 0.39999, 0.1, 0.6};
    const auto m = threshold_cam(cam, cfg_with(0.5));
    EXPECT_EQ(m.storage(), (std::vector<std::uint8_t>{1, 1, 0, 0, 1}));

    auto abs = cfg_with(0.5);
    abs.mode = ThresholdMode::absolute;
    EXPECT_EQ(threshold_cam(cam, abs).storage(), (std::vector<std::uint8_t>{1, 0, 0, 0, 1}));
}

TEST(Threshold, MatchesOracleOnRandomCams) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 300; ++i) {
        const auto cam = support::random_cam(8, 8, rng);
        const double omega = 0.1 + 0.9 * (i % 10) / 9.0;
        EXPECT_EQ(threshold_cam(cam, cfg_with(omega)), oracle::threshold(cam, omega)) << i;
    }
}

TEST(Threshold, ScaleConsistentAndMonotoneInOmega) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        auto cam = support::random_cam(10, 10, rng);
        CamGrid scaled = cam;
        for (auto& v : scaled.storage()) v *= 0.5; // powers of two keep the comparison exact
        EXPECT_EQ(threshold_cam(cam, cfg_with(0.5)), threshold_cam(scaled, cfg_with(0.5)));
        BinaryMask prev = threshold_cam(cam, cfg_with(0.05));
        for (double omega = 0.1; omega <= 1.0; omega += 0.05) {
            const auto cur = threshold_cam(cam, cfg_with(omega));
            for (std::size_t k = 0; k < cur.size(); ++k) EXPECT_LE(cur.storage()[k], prev.storage()[k]);
            prev = cur;
        }
    }
}

TEST(Threshold, RejectsOutOfRangeInputs) {
    EXPECT_THROW(threshold_cam(CamGrid(2, 2, 1.5), cfg_with(0.5)), ArgumentError);
    EXPECT_THROW(threshold_cam(CamGrid(2, 2, 0.5), cfg_with(0.0)), ConfigError);
    EXPECT_THROW(threshold_cam(CamGrid(2, 2, 0.5), cfg_with(0.5, 6)), ConfigError);
}

TEST(LabelRegions, ConnectivityExamples) {
    BinaryMask diag(3, 3, 0);
    diag(0, 0) = 1;
    diag(1, 1) = 1;
    EXPECT_EQ(label_regions(diag, 4).regions.size(), 2u);
    EXPECT_EQ(label_regions(diag, 8).regions.size(), 1u);
    const auto full = label_regions(BinaryMask(5, 7, 1), 4);
    ASSERT_EQ(full.regions.size(), 1u);
    EXPECT_EQ(full.regions[0].area_px, 35u);
    EXPECT_TRUE(label_regions(BinaryMask(5, 7, 0), 8).regions.empty());
}

TEST(LabelRegions, MatchesFloodFillOracle) {
    std::mt19937_64 rng(3);
    for (int seed = 0; seed < 1000; ++seed) {
        const auto m = support::random_mask(16, 16, 0.2 + 0.4 * (seed % 5) / 4.0, rng);
        for (int conn : {4, 8}) {
            const auto got = label_regions(m, conn);
            auto [olab, oreg] = oracle::flood_fill(m, conn);
            ASSERT_TRUE(oracle::same_partition(got.labels, olab)) << seed << " conn " << conn;
            ASSERT_EQ(got.labels, oracle::ranked_labels(m, conn)) << seed << " conn " << conn;
            ASSERT_EQ(got.regions.size(), oreg.size());
            for (const auto& r : got.regions) {
                std::size_t area = 0;
                for (int v : got.labels.storage()) area += v == r.id;
                EXPECT_EQ(area, r.area_px);
            }
        }
    }
}

TEST(ExtractBoxes, PinnedExamples) {
    BinaryMask point(8, 6, 0);
    point(5, 3) = 1;
    const auto b = extract_boxes(label_regions(point, 8), cfg_with(0.5));
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b[0], (BoxPrompt{3, 5, 3, 5, 1}));
    const auto full = extract_boxes(label_regions(BinaryMask(8, 6, 1), 8), cfg_with(0.5));
    ASSERT_EQ(full.size(), 1u);
    EXPECT_EQ(full[0], (BoxPrompt{0, 0, 5, 7, 48}));
    EXPECT_TRUE(extract_boxes(RegionLabels{}, cfg_with(0.5)).empty());
}

TEST(ExtractBoxes, MatchesScanOracleWithFilters) {
    std::mt19937_64 rng(4);
    for (int seed = 0; seed < 500; ++seed) {
        const auto m = support::random_mask(16, 16, 0.35, rng);
        const std::size_t min_area = seed % 4, max_boxes = 1 + seed % 5;
        const int conn = seed % 2 ? 4 : 8;
        const auto got = extract_boxes(label_regions(m, conn), cfg_with(0.5, conn, min_area, max_boxes));
        EXPECT_EQ(got, oracle::boxes(m, conn, min_area, max_boxes)) << seed;
        EXPECT_LE(got.size(), max_boxes);
    }
}

TEST(ExtractBoxes, BoxesAreTight) {
    std::mt19937_64 rng(5);
    for (int seed = 0; seed < 200; ++seed) {
        const auto m = support::random_mask(12, 12, 0.3, rng);
        const auto regions = label_regions(m, 8);
        for (const auto& r : regions.regions) {
            auto hits = [&](auto pred) {
                for (std::size_t y = 0; y < 12; ++y) {
                    for (std::size_t x = 0; x < 12; ++x) {
                        if (regions.labels(y, x) == r.id && pred(static_cast<int>(y), static_cast<int>(x))) return true;
                    }
                }
                return false;
            };
            EXPECT_TRUE(hits([&](int y, int) { return y == r.y_min; }));
            EXPECT_TRUE(hits([&](int y, int) { return y == r.y_max; }));
            EXPECT_TRUE(hits([&](int, int x) { return x == r.x_min; }));
            EXPECT_TRUE(hits([&](int, int x) { return x == r.x_max; }));
            EXPECT_FALSE(hits([&](int y, int x) { return y < r.y_min || y > r.y_max || x < r.x_min || x > r.x_max; }));
        }
    }
}

TEST(BoxesFromCam, MergeFlagGivesCommonBox) {
    CamGrid cam(10, 10, 0.0);
    for (int y = 1; y < 4; ++y) {
        for (int x = 1; x < 4; ++x) cam(y, x) = 1.0;
    }
    for (int y = 6; y < 9; ++y) {
        for (int x = 5; x < 9; ++x) cam(y, x) = 0.9;
    }
    auto cfg = cfg_with(0.5, 8, 0, 3);
    EXPECT_EQ(boxes_from_cam(cam, cfg).size(), 2u);
    cfg.merge_boxes = true;
    const auto merged = boxes_from_cam(cam, cfg);
    ASSERT_EQ(merged.size(), 1u);
    EXPECT_EQ(merged[0], (BoxPrompt{1, 1, 8, 8, 21}));
}

TEST(MaskBoundingBox, TightOrEmpty) {
    EXPECT_TRUE(mask_bounding_box(BinaryMask(4, 4, 0)).empty());
    BinaryMask m(6, 6, 0);
    m(1, 4) = m(3, 2) = 1;
    EXPECT_EQ(mask_bounding_box(m), (std::vector<BoxPrompt>{{2, 1, 4, 3, 2}}));
}

TEST(PromptCoords, NormalisationAndRoundTrip) {
    const auto c = boxes_to_prompt_coords({{0, 0, 255, 255, 1}}, 256, 256);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0], (PromptCoords{0.0, 0.0, 0.99609375, 0.99609375}));
    EXPECT_TRUE(boxes_to_prompt_coords({}, 256, 256).empty());

    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> u(0, 63);
    for (int i = 0; i < 200; ++i) {
        int x0 = u(rng), x1 = u(rng), y0 = u(rng), y1 = u(rng);
        if (x0 > x1) std::swap(x0, x1);
        if (y0 > y1) std::swap(y0, y1);
        const BoxPrompt b{x0, y0, x1, y1, 0};
        const auto coords = boxes_to_prompt_coords({b}, 64, 64);
        const auto back = prompt_coords_to_boxes(coords, 64, 64);
        EXPECT_EQ(back[0].x_min, x0);
        EXPECT_EQ(back[0].y_max, y1);
        const auto again = boxes_to_prompt_coords(back, 64, 64);
        for (int k = 0; k < 4; ++k) EXPECT_NEAR(again[0][k], coords[0][k], 1e-9);
    }
}

TEST(PromptCoords, OutOfBoundsRejected) {
    EXPECT_THROW(boxes_to_prompt_coords({{0, 0, 64, 10, 1}}, 64, 64), ArgumentError);
    EXPECT_THROW(boxes_to_prompt_coords({{-1, 0, 3, 3, 1}}, 64, 64), ArgumentError);
    EXPECT_THROW(boxes_to_prompt_coords({{5, 0, 3, 3, 1}}, 64, 64), ArgumentError);
}

TEST(BoxesJson, RecordFields) {
    const auto j = boxes_to_json({{1, 2, 3, 4, 9}});
    ASSERT_EQ(j.size(), 1u);
    EXPECT_EQ(j[0]["id"], 0);
    EXPECT_EQ(j[0]["x_min"], 1);
    EXPECT_EQ(j[0]["y_max"], 4);
    EXPECT_EQ(j[0]["area"], 9);
}
