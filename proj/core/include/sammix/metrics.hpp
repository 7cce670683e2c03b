#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sammix/grid.hpp"

namespace sammix::metrics {

/// Hausdorff value recorded when exactly one of the masks is empty.
inline constexpr double kHausdorffUndefined = -1.0;

double dice_score(const BinaryMask& pred, const BinaryMask& gt);

/// Foreground pixels with at least one background 4-neighbour; outside the grid counts as background.
std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& mask);

/// Symmetric boundary Hausdorff distance in pixels. With `percentile` in (0,100) the
/// directed distances are summarised by that percentile instead of the maximum.
/// Both empty -> 0; exactly one empty -> kHausdorffUndefined.
double hausdorff_distance(const BinaryMask& pred, const BinaryMask& gt, std::optional<double> percentile = {});

struct SampleScore {
    std::string id;
    double dice = 0.0;
    double hausdorff_px = 0.0;
};

struct EvalReport {
    std::string model;
    std::string domain = "in_domain"; // or "cross_domain"
    std::uint64_t seed = 0;
    std::vector<SampleScore> samples;

    double mean_dice() const;
    double std_dice() const;
    /// Over defined Hausdorff values only.
    double mean_hausdorff() const;
    double std_hausdorff() const;
    std::size_t hausdorff_excluded() const;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
    std::string formatted() const;
};

struct Aggregate {
    MeanStd dice;
    MeanStd hausdorff;
    std::size_t runs = 0;
};

/// Mean and sample std (n-1; zero for one run) of the per-run means.
Aggregate aggregate_runs(const std::vector<EvalReport>& reports);
MeanStd mean_std(const std::vector<double>& values);
/// "m ± s" with three decimals.
std::string format_mean_std(double mean, double std);

struct Quartiles {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};
/// Linear interpolation between closest ranks: position (n-1) * q.
Quartiles quartiles(std::vector<double> values);

/// Writes per_sample.csv, summary.json and boxplot.csv under `out_dir`.
void export_report(const std::vector<EvalReport>& reports, const std::filesystem::path& out_dir);

/// Rebuilds reports from a per_sample.csv written by export_report, grouped by (model, domain, seed)
/// in order of first appearance.
std::vector<EvalReport> read_per_sample_csv(const std::filesystem::path& path);

inline constexpr const char* kPerSampleCsvHeader = "model,domain,seed,id,dice,hausdorff_px";
inline constexpr const char* kBoxplotCsvHeader = "model,domain,n,min,q1,median,q3,max";

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Grey image, green tint over the ground truth, red predicted boundary.
Grid<Rgb> render_overlay(const ImageGrid& image, const BinaryMask& gt, const BinaryMask& pred);
/// Binary PPM (P6).
void write_ppm(const Grid<Rgb>& img, const std::filesystem::path& path);

} // namespace sammix::metrics
