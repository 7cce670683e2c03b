#include "sammix/phantom.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace sammix::data {
namespace fs = std::filesystem;
using nlohmann::json;

PhantomConfig PhantomConfig::cross_domain() {
    PhantomConfig c;
    c.body_hu = 45.0;
    c.organ_hu = 105.0;
    c.noise_sigma_hu = 28.0;
    c.distractor_hu = {-40.0, 260.0};
    return c;
}

namespace {

struct Blob {
    double cx, cy, radius, hu;
    std::size_t z0, z1; // inclusive slice range
};

std::mt19937_64 volume_rng(std::uint64_t seed, std::uint64_t volume) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(volume), 0x5a4du};
    return std::mt19937_64(seq);
}

} // namespace

PhantomVolume make_phantom_volume(const PhantomConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    const auto S = cfg.slices;
    const auto N = cfg.raw_size;
    const double n = static_cast<double>(N);
    const double mid = n / 2.0;

    const double body_a = uniform(cfg.body_axis_min, cfg.body_axis_max) * n;
    const double body_b = uniform(cfg.body_axis_min, cfg.body_axis_max) * n * 0.85;

    const double organ_a = uniform(cfg.organ_axis_min, cfg.organ_axis_max) * n;
    const double organ_b = uniform(cfg.organ_axis_min, cfg.organ_axis_max) * n * 0.8;
    const double theta = uniform(0.0, std::numbers::pi);
    const double organ_cx = mid + uniform(-cfg.organ_offset_max, cfg.organ_offset_max) * n;
    const double organ_cy = mid + uniform(-cfg.organ_offset_max, cfg.organ_offset_max) * n;
    const double drift_x = uniform(-0.03, 0.03) * n;
    const double drift_y = uniform(-0.03, 0.03) * n;
    const double band = uniform(cfg.band_fraction_min, cfg.band_fraction_max) * static_cast<double>(S);
    const double half_band = band / 2.0;
    double zc = uniform(cfg.band_center_min, cfg.band_center_max) * static_cast<double>(S);
    zc = std::clamp(zc, half_band - 0.5, static_cast<double>(S) - half_band - 0.5);

    const auto n_blobs = static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(
        cfg.distractors_min, cfg.distractors_max)(rng));
    std::vector<Blob> blobs;
    const double organ_reach = std::max(organ_a, organ_b) + 0.04 * n;
    for (std::size_t i = 0, attempts = 0; i < n_blobs && attempts < 200; ++attempts) {
        Blob b;
        b.radius = uniform(cfg.distractor_radius_min, cfg.distractor_radius_max) * n;
        const double ang = uniform(0.0, 2.0 * std::numbers::pi);
        const double rr = uniform(0.0, 0.8);
        b.cx = mid + std::cos(ang) * rr * (body_a - b.radius);
        b.cy = mid + std::sin(ang) * rr * (body_b - b.radius);
        if (std::hypot(b.cx - organ_cx, b.cy - organ_cy) < organ_reach + b.radius + 2.0) continue;
        b.hu = cfg.distractor_hu[std::uniform_int_distribution<std::size_t>(0, cfg.distractor_hu.size() - 1)(rng)];
        const auto len = static_cast<std::size_t>(uniform(0.3, 1.0) * static_cast<double>(S));
        b.z0 = std::uniform_int_distribution<std::size_t>(0, S - std::max<std::size_t>(len, 1))(rng);
        b.z1 = std::min(S - 1, b.z0 + std::max<std::size_t>(len, 1) - 1);
        blobs.push_back(b);
        ++i;
    }

    PhantomVolume out;
    out.volume.slices = S;
    out.volume.height = N;
    out.volume.width = N;
    out.volume.spacing = cfg.spacing;
    out.volume.voxels.assign(S * N * N, 0.0f);
    out.organ.assign(S * N * N, 0);

    const double ct = std::cos(theta), st = std::sin(theta);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma_hu);
    for (std::size_t z = 0; z < S; ++z) {
        const double t = (static_cast<double>(z) - zc) / half_band;
        const bool organ_here = std::abs(t) < 1.0;
        const double profile = organ_here ? std::pow(1.0 - std::pow(std::abs(t), 4.0), 0.25) : 0.0;
        const double ocx = organ_cx + drift_x * t;
        const double ocy = organ_cy + drift_y * t;
        for (std::size_t y = 0; y < N; ++y) {
            for (std::size_t x = 0; x < N; ++x) {
                const double px = static_cast<double>(x) + 0.5;
                const double py = static_cast<double>(y) + 0.5;
                double hu = cfg.air_hu;
                const double bx = (px - mid) / body_a, by = (py - mid) / body_b;
                if (bx * bx + by * by <= 1.0) hu = cfg.body_hu;
                bool organ = false;
                if (organ_here) {
                    const double dx = px - ocx, dy = py - ocy;
                    const double u = (dx * ct + dy * st) / (organ_a * profile);
                    const double v = (-dx * st + dy * ct) / (organ_b * profile);
                    organ = u * u + v * v <= 1.0;
                }
                if (organ) hu = cfg.organ_hu;
                for (const auto& b : blobs) {
                    if (z < b.z0 || z > b.z1) continue;
                    if (std::hypot(px - b.cx, py - b.cy) <= b.radius) {
                        hu = b.hu;
                        organ = false;
                    }
                }
                const auto idx = (z * N + y) * N + x;
                out.volume.voxels[idx] = static_cast<float>(hu + noise(rng));
                out.organ[idx] = organ ? 1 : 0;
            }
        }
    }
    return out;
}

std::vector<Sample> preprocess_volume(const RawVolume& volume, const std::vector<std::uint8_t>& organ,
                                      std::size_t volume_index, const PhantomConfig& cfg) {
    if (organ.size() != volume.voxels.size()) throw DataIntegrityError("label volume does not match voxel volume");
    const RawVolume windowed = window_level(volume, cfg.window_width, cfg.window_center);
    std::vector<Sample> out;
    const auto plane = volume.height * volume.width;
    for (auto z : extract_middle_slices(windowed, cfg.middle_fraction)) {
        Sample s;
        std::ostringstream id;
        id << 'v' << std::setw(3) << std::setfill('0') << volume_index << "_s" << std::setw(3) << std::setfill('0') << z;
        s.id = id.str();
        s.image = resize_grid(windowed.slice(z), cfg.image_size, cfg.image_size, ResizeMode::bilinear);
        std::vector<std::uint8_t> m(organ.begin() + static_cast<std::ptrdiff_t>(z * plane),
                                    organ.begin() + static_cast<std::ptrdiff_t>((z + 1) * plane));
        s.seg_label = resize_grid(BinaryMask(volume.height, volume.width, std::move(m)), cfg.image_size,
                                  cfg.image_size, ResizeMode::nearest);
        s.cls_label = derive_class_label(*s.seg_label);
        out.push_back(std::move(s));
    }
    return out;
}

PhantomSplits generate_phantom_splits(std::size_t n_volumes, std::uint64_t seed, const PhantomConfig& cfg) {
    if (n_volumes < 1) throw ArgumentError("at least one phantom volume is required");
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n_volumes) * cfg.test_fraction));
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n_volumes) * cfg.val_fraction));
    const auto n_train = n_volumes - n_test - n_val;

    PhantomSplits splits;
    splits.train.split = Split::train;
    splits.val.split = Split::val;
    splits.test.split = Split::test;
    for (std::size_t v = 0; v < n_volumes; ++v) {
        auto rng = volume_rng(seed, v);
        const auto phantom = make_phantom_volume(cfg, rng());
        Dataset& target = v < n_train ? splits.train : (v < n_train + n_val ? splits.val : splits.test);
        for (auto& s : preprocess_volume(phantom.volume, phantom.organ, v, cfg)) {
            target.labeled_ids.insert(s.id);
            target.samples.push_back(std::move(s));
        }
    }
    return splits;
}

PhantomSplits generate_phantoms(std::size_t n_volumes, std::uint64_t seed, const fs::path& out_dir,
                                const PhantomConfig& cfg, bool write_raw) {
    auto splits = generate_phantom_splits(n_volumes, seed, cfg);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());
    save_dataset(splits.train, out_dir / "train");
    save_dataset(splits.val, out_dir / "val");
    save_dataset(splits.test, out_dir / "test");
    if (write_raw) {
        fs::create_directories(out_dir / "raw", ec);
        if (ec) throw IoError("cannot create " + (out_dir / "raw").string());
        for (std::size_t v = 0; v < n_volumes; ++v) {
            auto rng = volume_rng(seed, v);
            std::ostringstream stem;
            stem << 'v' << std::setw(3) << std::setfill('0') << v;
            save_raw_volume(make_phantom_volume(cfg, rng()), out_dir / "raw" / stem.str());
        }
    }
    return splits;
}

void save_raw_volume(const PhantomVolume& pv, const fs::path& stem) {
    pv.volume.validate();
    const auto& v = pv.volume;
    json header{{"format", "sammix-raw-volume"},
                {"version", 1},
                {"shape", {v.slices, v.height, v.width}},
                {"spacing", {v.spacing[0], v.spacing[1], v.spacing[2]}},
                {"has_labels", !pv.organ.empty()}};
    {
        std::ofstream out(fs::path(stem).concat(".json"), std::ios::trunc);
        if (!out) throw IoError("cannot write " + stem.string() + ".json");
        out << header.dump(2) << "\n";
    }
    write_f32_file(fs::path(stem).concat(".f32"), v.voxels);
    if (!pv.organ.empty()) {
        std::ofstream out(fs::path(stem).concat(".labels.u8"), std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + stem.string() + ".labels.u8");
        out.write(reinterpret_cast<const char*>(pv.organ.data()), static_cast<std::streamsize>(pv.organ.size()));
    }
}

PhantomVolume load_raw_volume(const fs::path& stem) {
    json header;
    {
        std::ifstream in(fs::path(stem).concat(".json"));
        if (!in) throw IoError("cannot open " + stem.string() + ".json");
        try {
            in >> header;
        } catch (const json::exception& e) {
            throw FormatError(stem.string() + ".json: malformed header: " + e.what());
        }
    }
    PhantomVolume pv;
    try {
        if (header.value("format", "") != "sammix-raw-volume") throw FormatError(stem.string() + ": not a raw volume");
        if (header.at("version").get<int>() != 1) throw VersionError(stem.string() + ": unsupported raw volume version");
        const auto shape = header.at("shape").get<std::vector<std::size_t>>();
        const auto spacing = header.at("spacing").get<std::vector<double>>();
        if (shape.size() != 3 || spacing.size() != 3) throw FormatError(stem.string() + ": shape/spacing must have 3 entries");
        pv.volume.slices = shape[0];
        pv.volume.height = shape[1];
        pv.volume.width = shape[2];
        pv.volume.spacing = {spacing[0], spacing[1], spacing[2]};
        pv.volume.voxels = read_f32_file(fs::path(stem).concat(".f32"), shape[0] * shape[1] * shape[2]);
        if (header.at("has_labels").get<bool>()) {
            std::ifstream in(fs::path(stem).concat(".labels.u8"), std::ios::binary);
            if (!in) throw IoError("cannot open " + stem.string() + ".labels.u8");
            pv.organ.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
            if (pv.organ.size() != pv.volume.voxels.size()) {
                throw ShapeMismatchError(stem.string() + ".labels.u8: label payload does not match shape");
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(stem.string() + ".json: malformed header: " + e.what());
    }
    pv.volume.validate();
    return pv;
}

} // namespace sammix::data
