#include "sammix/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

namespace sammix::metrics {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_pair(const BinaryMask& a, const BinaryMask& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ArgumentError(std::string(op) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                            std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                            std::to_string(b.width()));
    }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

/// 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    std::size_t k = 0;
    std::size_t first = n;
    for (std::size_t q = 0; q < n; ++q) {
        if (f[q] < kInf) {
            first = q;
            break;
        }
    }
    if (first == n) {
        std::fill(d, d + n, kInf);
        return;
    }
    v[0] = first;
    z[0] = -kInf;
    z[1] = kInf;
    for (std::size_t q = first + 1; q < n; ++q) {
        if (!(f[q] < kInf)) continue;
        const double qd = static_cast<double>(q);
        double s;
        while (true) {
            const double vk = static_cast<double>(v[k]);
            s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const double qd = static_cast<double>(q);
        while (z[k + 1] < qd) ++k;
        const double diff = qd - static_cast<double>(v[k]);
        d[q] = diff * diff + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest seed pixel.
std::vector<double> squared_distance_to(const std::vector<std::pair<int, int>>& seeds, std::size_t h, std::size_t w) {
    std::vector<double> grid(h * w, kInf);
    for (const auto& [y, x] : seeds) grid[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = 0.0;
    std::vector<std::size_t> v;
    std::vector<double> z;
    std::vector<double> col_in(h), col_out(h), row_out(w);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) col_in[y] = grid[y * w + x];
        edt_1d(col_in.data(), col_out.data(), h, v, z);
        for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = col_out[y];
    }
    for (std::size_t y = 0; y < h; ++y) {
        edt_1d(grid.data() + y * w, row_out.data(), w, v, z);
        std::copy(row_out.begin(), row_out.end(), grid.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
    return grid;
}

double percentile_linear(std::vector<double> v, double pct) {
    std::sort(v.begin(), v.end());
    const double pos = (static_cast<double>(v.size()) - 1.0) * pct / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string fmt(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

/// Shortest text that parses back to the same double.
std::string exact(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, r.ptr};
}

} // namespace

double dice_score(const BinaryMask& pred, const BinaryMask& gt) {
    check_pair(pred, gt, "dice_score");
    std::size_t inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.storage()[i] != 0, g = gt.storage()[i] != 0;
        np += p;
        ng += g;
        inter += p && g;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& mask) {
    std::vector<std::pair<int, int>> out;
    const auto h = static_cast<int>(mask.height()), w = static_cast<int>(mask.width());
    auto fg = [&](int y, int x) {
        return y >= 0 && x >= 0 && y < h && x < w && mask(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!fg(y, x)) continue;
            if (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)) out.emplace_back(y, x);
        }
    }
    return out;
}

double hausdorff_distance(const BinaryMask& pred, const BinaryMask& gt, std::optional<double> percentile) {
    check_pair(pred, gt, "hausdorff_distance");
    if (percentile && !(*percentile > 0.0 && *percentile <= 100.0)) {
        throw ArgumentError("hausdorff percentile must lie in (0, 100]");
    }
    const auto bp = boundary_pixels(pred);
    const auto bg = boundary_pixels(gt);
    if (bp.empty() && bg.empty()) return 0.0;
    if (bp.empty() || bg.empty()) return kHausdorffUndefined;
    const auto h = pred.height(), w = pred.width();
    const auto to_gt = squared_distance_to(bg, h, w);
    const auto to_pred = squared_distance_to(bp, h, w);
    auto directed = [&](const std::vector<std::pair<int, int>>& from, const std::vector<double>& dist) {
        std::vector<double> d;
        d.reserve(from.size());
        for (const auto& [y, x] : from) d.push_back(std::sqrt(dist[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)]));
        return d;
    };
    const auto dpg = directed(bp, to_gt);
    const auto dgp = directed(bg, to_pred);
    if (!percentile || *percentile == 100.0) {
        return std::max(*std::max_element(dpg.begin(), dpg.end()), *std::max_element(dgp.begin(), dgp.end()));
    }
    return std::max(percentile_linear(dpg, *percentile), percentile_linear(dgp, *percentile));
}

// ---------------------------------------------------------------- aggregation

MeanStd mean_std(const std::vector<double>& values) {
    if (values.empty()) return {};
    double s = 0.0;
    for (double v : values) s += v;
    const double m = s / static_cast<double>(values.size());
    if (values.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::string format_mean_std(double mean, double std) { return fmt(mean, 3) + " ± " + fmt(std, 3); }

std::string MeanStd::formatted() const { return format_mean_std(mean, std); }

namespace {
std::vector<double> dice_values(const EvalReport& r) {
    std::vector<double> v;
    for (const auto& s : r.samples) v.push_back(s.dice);
    return v;
}
std::vector<double> hd_values(const EvalReport& r) {
    std::vector<double> v;
    for (const auto& s : r.samples) {
        if (s.hausdorff_px >= 0.0) v.push_back(s.hausdorff_px);
    }
    return v;
}
} // namespace

double EvalReport::mean_dice() const { return mean_std(dice_values(*this)).mean; }
double EvalReport::std_dice() const { return mean_std(dice_values(*this)).std; }
double EvalReport::mean_hausdorff() const { return mean_std(hd_values(*this)).mean; }
double EvalReport::std_hausdorff() const { return mean_std(hd_values(*this)).std; }
std::size_t EvalReport::hausdorff_excluded() const { return samples.size() - hd_values(*this).size(); }

Aggregate aggregate_runs(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ArgumentError("aggregate_runs: no reports");
    std::vector<double> d, h;
    for (const auto& r : reports) {
        d.push_back(r.mean_dice());
        h.push_back(r.mean_hausdorff());
    }
    return {mean_std(d), mean_std(h), reports.size()};
}

Quartiles quartiles(std::vector<double> values) {
    if (values.empty()) throw ArgumentError("quartiles of an empty set");
    std::sort(values.begin(), values.end());
    return {values.front(), percentile_linear(values, 25.0), percentile_linear(values, 50.0),
            percentile_linear(values, 75.0), values.back()};
}

void export_report(const std::vector<EvalReport>& reports, const fs::path& out_dir) {
    if (reports.empty()) throw ArgumentError("export_report: no reports");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create " + out_dir.string());

    std::ofstream csv(out_dir / "per_sample.csv", std::ios::trunc | std::ios::binary);
    if (!csv) throw IoError("cannot write " + (out_dir / "per_sample.csv").string());
    csv << kPerSampleCsvHeader << "\n";

    std::vector<std::pair<std::string, std::string>> groups;
    std::map<std::pair<std::string, std::string>, std::vector<const EvalReport*>> grouped;
    json runs = json::array();
    for (const auto& r : reports) {
        for (const auto& s : r.samples) {
            csv << r.model << ',' << r.domain << ',' << r.seed << ',' << s.id << ',' << exact(s.dice) << ','
                << exact(s.hausdorff_px) << "\n";
        }
        const auto key = std::make_pair(r.model, r.domain);
        if (!grouped.count(key)) groups.push_back(key);
        grouped[key].push_back(&r);
        runs.push_back({{"model", r.model},
                        {"domain", r.domain},
                        {"seed", r.seed},
                        {"n", r.samples.size()},
                        {"mean_dice", r.mean_dice()},
                        {"std_dice", r.std_dice()},
                        {"mean_hausdorff", r.mean_hausdorff()},
                        {"std_hausdorff", r.std_hausdorff()},
                        {"hausdorff_excluded", r.hausdorff_excluded()}});
    }
    if (!csv) throw IoError("short write to per_sample.csv");

    std::ofstream box(out_dir / "boxplot.csv", std::ios::trunc | std::ios::binary);
    if (!box) throw IoError("cannot write " + (out_dir / "boxplot.csv").string());
    box << kBoxplotCsvHeader << "\n";
    json aggregates = json::array();
    json boxplot = json::array();
    for (const auto& key : groups) {
        std::vector<EvalReport> members;
        std::vector<double> pooled;
        for (const auto* r : grouped[key]) {
            members.push_back(*r);
            for (const auto& s : r->samples) pooled.push_back(s.dice);
        }
        const auto agg = aggregate_runs(members);
        aggregates.push_back({{"model", key.first},
                              {"domain", key.second},
                              {"runs", agg.runs},
                              {"dice", {{"mean", agg.dice.mean}, {"std", agg.dice.std}, {"formatted", agg.dice.formatted()}}},
                              {"hausdorff",
                               {{"mean", agg.hausdorff.mean},
                                {"std", agg.hausdorff.std},
                                {"formatted", agg.hausdorff.formatted()}}}});
        if (pooled.empty()) continue;
        const auto q = quartiles(pooled);
        box << key.first << ',' << key.second << ',' << pooled.size() << ',' << fmt(q.min, 6) << ',' << fmt(q.q1, 6)
            << ',' << fmt(q.median, 6) << ',' << fmt(q.q3, 6) << ',' << fmt(q.max, 6) << "\n";
        boxplot.push_back({{"model", key.first},
                           {"domain", key.second},
                           {"n", pooled.size()},
                           {"min", q.min},
                           {"q1", q.q1},
                           {"median", q.median},
                           {"q3", q.q3},
                           {"max", q.max}});
    }
    json summary{{"format", "sammix-eval-summary"},
                 {"version", 1},
                 {"runs", runs},
                 {"aggregates", aggregates},
                 {"boxplot", boxplot}};
    std::ofstream js(out_dir / "summary.json", std::ios::trunc | std::ios::binary);
    if (!js) throw IoError("cannot write " + (out_dir / "summary.json").string());
    js << summary.dump(2) << "\n";
}

std::vector<EvalReport> read_per_sample_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kPerSampleCsvHeader) {
        throw FormatError(path.string() + ": unexpected header");
    }
    std::vector<EvalReport> reports;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            cols.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cols.size() != 6) throw FormatError(path.string() + ":" + std::to_string(row) + ": expected 6 columns");
        SampleScore s;
        std::uint64_t seed = 0;
        try {
            seed = std::stoull(cols[2]);
            s.id = cols[3];
            s.dice = std::stod(cols[4]);
            s.hausdorff_px = std::stod(cols[5]);
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(row) + ": malformed number");
        }
        auto it = std::find_if(reports.begin(), reports.end(), [&](const EvalReport& r) {
            return r.model == cols[0] && r.domain == cols[1] && r.seed == seed;
        });
        if (it == reports.end()) {
            reports.push_back({cols[0], cols[1], seed, {}});
            it = std::prev(reports.end());
        }
        it->samples.push_back(std::move(s));
    }
    return reports;
}

// ---------------------------------------------------------------- overlays

Grid<Rgb> render_overlay(const ImageGrid& image, const BinaryMask& gt, const BinaryMask& pred) {
    if (!image.same_shape(Grid<float>(gt.height(), gt.width())) || !gt.same_shape(pred)) {
        throw ArgumentError("render_overlay: image, ground truth and prediction must share a shape");
    }
    Grid<Rgb> out(image.height(), image.width());
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double gray = std::clamp(static_cast<double>(image.storage()[i]), 0.0, 1.0) * 255.0;
        Rgb px{static_cast<std::uint8_t>(std::lround(gray)), static_cast<std::uint8_t>(std::lround(gray)),
               static_cast<std::uint8_t>(std::lround(gray))};
        if (gt.storage()[i]) {
            px.r = static_cast<std::uint8_t>(std::lround(gray * 0.5));
            px.g = static_cast<std::uint8_t>(std::lround(gray * 0.5 + 127.0));
            px.b = static_cast<std::uint8_t>(std::lround(gray * 0.5));
        }
        out.storage()[i] = px;
    }
    for (const auto& [y, x] : boundary_pixels(pred)) {
        out(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = Rgb{255, 0, 0};
    }
    return out;
}

void write_ppm(const Grid<Rgb>& img, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
    for (const auto& px : img.storage()) {
        const char rgb[3] = {static_cast<char>(px.r), static_cast<char>(px.g), static_cast<char>(px.b)};
        out.write(rgb, 3);
    }
    if (!out) throw IoError("short write to " + path.string());
}

} // namespace sammix::metrics
