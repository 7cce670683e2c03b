#include "sammix/dataio.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace sammix::data {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kDatasetFormatName = "sammix-dataset";

std::uint32_t to_little(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
    return v;
}

std::vector<char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const char* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(data, static_cast<std::streamsize>(n));
    if (!out) throw IoError("short write to " + path.string());
}

bool valid_id(const std::string& id) {
    if (id.empty() || id == "." || id == "..") return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

} // namespace

// ---------------------------------------------------------------- types

Grid<float> RawVolume::slice(std::size_t s) const {
    if (s >= slices) throw ArgumentError("slice index " + std::to_string(s) + " out of range");
    const auto n = height * width;
    std::vector<float> data(voxels.begin() + static_cast<std::ptrdiff_t>(s * n),
                            voxels.begin() + static_cast<std::ptrdiff_t>((s + 1) * n));
    return Grid<float>(height, width, std::move(data));
}

void RawVolume::validate() const {
    if (slices < 1) throw DataIntegrityError("volume has no slices");
    if (height < 8 || width < 8) throw DataIntegrityError("volume in-plane size must be at least 8x8");
    if (voxels.size() != slices * height * width) throw DataIntegrityError("volume payload does not match its shape");
    for (double s : spacing) {
        if (!(s > 0.0) || !std::isfinite(s)) throw DataIntegrityError("voxel spacing must be positive");
    }
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        if (!std::isfinite(voxels[i])) {
            throw DataIntegrityError("non-finite voxel at flat index " + std::to_string(i));
        }
    }
}

std::string_view to_string(Split split) {
    switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw FormatError("unknown split '" + std::string(name) + "'");
}

const Sample* Dataset::find(std::string_view id) const {
    for (const auto& s : samples) {
        if (s.id == id) return &s;
    }
    return nullptr;
}

void Dataset::validate() const {
    std::set<std::string> ids;
    for (const auto& s : samples) {
        if (!ids.insert(s.id).second) throw DataIntegrityError("duplicate sample id " + s.id);
        if (s.cls_label != 0 && s.cls_label != 1) throw DataIntegrityError(s.id + ": class label must be 0 or 1");
        for (float v : s.image.storage()) {
            if (!(v >= 0.0f && v <= 1.0f)) throw DataIntegrityError(s.id + ": image value outside [0,1]");
        }
        if (s.seg_label) {
            if (!s.seg_label->same_shape(s.image)) throw DataIntegrityError(s.id + ": mask shape differs from image");
            for (auto v : s.seg_label->storage()) {
                if (v > 1) throw DataIntegrityError(s.id + ": mask value outside {0,1}");
            }
            if (derive_class_label(*s.seg_label) != s.cls_label) {
                throw DataIntegrityError(s.id + ": class label disagrees with segmentation mask");
            }
        }
    }
    for (const auto& id : labeled_ids) {
        const Sample* s = find(id);
        if (!s) throw DataIntegrityError("labeled id " + id + " has no sample");
        if (!s->seg_label) throw DataIntegrityError("labeled id " + id + " has no segmentation mask");
    }
}

// ---------------------------------------------------------------- preprocessing

float window_level_value(float hu, double width, double center) {
    const double lo = center - width / 2.0;
    const double v = (static_cast<double>(hu) - lo) / width;
    return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

RawVolume window_level(const RawVolume& volume, double width, double center) {
    if (!(width > 0.0)) throw ArgumentError("window width must be positive");
    volume.validate();
    RawVolume out = volume;
    for (auto& v : out.voxels) v = window_level_value(v, width, center);
    return out;
}

std::vector<std::size_t> extract_middle_slices(std::size_t num_slices, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ArgumentError("slice fraction must lie in (0, 1]");
    const auto count = static_cast<std::size_t>(std::llround(static_cast<double>(num_slices) * fraction));
    if (count == 0) throw ArgumentError("volume too short: " + std::to_string(num_slices) + " slices at fraction " +
                                        std::to_string(fraction) + " leaves none");
    // Left margin equals the right margin or exceeds it by one.
    const auto start = (num_slices - count + 1) / 2;
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
    return idx;
}

namespace {

void check_resize_args(std::size_t src_h, std::size_t src_w, std::size_t h, std::size_t w) {
    if (h < 1 || w < 1) throw ArgumentError("resize target must be at least 1x1");
    if (src_h < 2 || src_w < 2) throw ArgumentError("resize source must be at least 2x2");
}

template <class T>
Grid<T> resize_nearest(const Grid<T>& g, std::size_t h, std::size_t w) {
    Grid<T> out(h, w);
    for (std::size_t y = 0; y < h; ++y) {
        const auto sy = std::min(g.height() - 1, (2 * y + 1) * g.height() / (2 * h));
        for (std::size_t x = 0; x < w; ++x) {
            const auto sx = std::min(g.width() - 1, (2 * x + 1) * g.width() / (2 * w));
            out(y, x) = g(sy, sx);
        }
    }
    return out;
}

} // namespace

ImageGrid resize_grid(const ImageGrid& grid, std::size_t height, std::size_t width, ResizeMode mode) {
    check_resize_args(grid.height(), grid.width(), height, width);
    if (mode == ResizeMode::nearest) return resize_nearest(grid, height, width);
    ImageGrid out(height, width);
    const auto sh = grid.height(), sw = grid.width();
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = height > 1 ? static_cast<double>(y) * static_cast<double>(sh - 1) / static_cast<double>(height - 1) : 0.0;
        const auto y0 = std::min(static_cast<std::size_t>(fy), sh - 1);
        const auto y1 = std::min(y0 + 1, sh - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double fx = width > 1 ? static_cast<double>(x) * static_cast<double>(sw - 1) / static_cast<double>(width - 1) : 0.0;
            const auto x0 = std::min(static_cast<std::size_t>(fx), sw - 1);
            const auto x1 = std::min(x0 + 1, sw - 1);
            const double tx = fx - static_cast<double>(x0);
            const double top = (1 - tx) * grid(y0, x0) + tx * grid(y0, x1);
            const double bot = (1 - tx) * grid(y1, x0) + tx * grid(y1, x1);
            out(y, x) = static_cast<float>((1 - ty) * top + ty * bot);
        }
    }
    return out;
}

BinaryMask resize_grid(const BinaryMask& grid, std::size_t height, std::size_t width, ResizeMode mode) {
    check_resize_args(grid.height(), grid.width(), height, width);
    if (mode != ResizeMode::nearest) throw ArgumentError("masks must be resized with nearest-neighbour sampling");
    return resize_nearest(grid, height, width);
}

int derive_class_label(const BinaryMask& mask) {
    std::uint8_t m = 0;
    for (auto v : mask.storage()) m = std::max(m, v);
    return m > 0 ? 1 : 0;
}

Dataset split_supervision(const Dataset& dataset, std::size_t n_labeled, std::uint64_t seed) {
    std::vector<std::string> eligible;
    for (const auto& s : dataset.samples) {
        if (s.cls_label == 1 && s.seg_label) eligible.push_back(s.id);
    }
    if (n_labeled > eligible.size()) {
        throw ArgumentError("requested " + std::to_string(n_labeled) + " labeled slices but only " +
                            std::to_string(eligible.size()) + " positive slices are eligible");
    }
    std::mt19937_64 rng(seed);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    Dataset out = dataset;
    out.labeled_ids.clear();
    out.labeled_ids.insert(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(n_labeled));
    return out;
}

// ---------------------------------------------------------------- on-disk format

void write_f32_file(const fs::path& path, std::span<const float> values) {
    std::vector<char> buf(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = to_little(std::bit_cast<std::uint32_t>(values[i]));
        std::memcpy(buf.data() + 4 * i, &bits, 4);
    }
    write_bytes(path, buf.data(), buf.size());
}

std::vector<float> read_f32_file(const fs::path& path, std::size_t expected_count) {
    const auto bytes = read_bytes(path);
    if (bytes.size() != expected_count * 4) {
        throw ShapeMismatchError(path.string() + ": expected " + std::to_string(expected_count * 4) + " bytes, found " +
                                 std::to_string(bytes.size()));
    }
    std::vector<float> out(expected_count);
    for (std::size_t i = 0; i < expected_count; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + 4 * i, 4);
        out[i] = std::bit_cast<float>(to_little(bits));
    }
    return out;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
    dataset.validate();
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
    fs::create_directories(dir / "masks", ec);
    if (ec) throw IoError("cannot create " + (dir / "masks").string() + ": " + ec.message());

    json samples = json::array();
    for (const auto& s : dataset.samples) {
        if (!valid_id(s.id)) throw ArgumentError("sample id '" + s.id + "' is not a portable file name");
        const auto image_rel = "images/" + s.id + ".f32";
        write_f32_file(dir / image_rel, s.image.values());
        json rec{{"id", s.id},
                 {"height", s.image.height()},
                 {"width", s.image.width()},
                 {"cls_label", s.cls_label},
                 {"image", image_rel},
                 {"mask", nullptr}};
        if (s.seg_label) {
            const auto mask_rel = "masks/" + s.id + ".u8";
            const auto& m = s.seg_label->storage();
            write_bytes(dir / mask_rel, reinterpret_cast<const char*>(m.data()), m.size());
            rec["mask"] = mask_rel;
        }
        samples.push_back(std::move(rec));
    }
    json header{{"format", kDatasetFormatName},
                {"version", kDatasetFormatVersion},
                {"split", std::string(to_string(dataset.split))},
                {"samples", std::move(samples)},
                {"labeled_ids", json(std::vector<std::string>(dataset.labeled_ids.begin(), dataset.labeled_ids.end()))}};
    const auto text = header.dump(2) + "\n";
    write_bytes(dir / "split.json", text.data(), text.size());
}

Dataset load_dataset(const fs::path& dir) {
    const auto header_path = dir / "split.json";
    if (!fs::exists(header_path)) throw IoError("no split.json in " + dir.string());
    json header;
    try {
        const auto bytes = read_bytes(header_path);
        header = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw FormatError(header_path.string() + ": malformed header: " + e.what());
    }

    Dataset ds;
    try {
        if (!header.is_object() || header.value("format", "") != kDatasetFormatName) {
            throw FormatError(header_path.string() + ": not a sammix dataset header");
        }
        const int version = header.at("version").get<int>();
        if (version != kDatasetFormatVersion) {
            throw VersionError(header_path.string() + ": unsupported dataset format version " + std::to_string(version));
        }
        ds.split = split_from_string(header.at("split").get<std::string>());
        for (const auto& rec : header.at("samples")) {
            Sample s;
            s.id = rec.at("id").get<std::string>();
            if (!valid_id(s.id)) throw FormatError("sample id '" + s.id + "' is not a portable file name");
            const auto h = rec.at("height").get<std::size_t>();
            const auto w = rec.at("width").get<std::size_t>();
            s.cls_label = rec.at("cls_label").get<int>();
            s.image = ImageGrid(h, w, read_f32_file(dir / rec.at("image").get<std::string>(), h * w));
            const auto& mask = rec.at("mask");
            if (!mask.is_null()) {
                const auto mask_path = dir / mask.get<std::string>();
                if (!fs::exists(mask_path)) throw DataIntegrityError(s.id + ": mask file missing: " + mask_path.string());
                auto bytes = read_bytes(mask_path);
                if (bytes.size() != h * w) {
                    throw ShapeMismatchError(mask_path.string() + ": expected " + std::to_string(h * w) + " bytes, found " +
                                             std::to_string(bytes.size()));
                }
                std::vector<std::uint8_t> m(bytes.begin(), bytes.end());
                s.seg_label = BinaryMask(h, w, std::move(m));
            }
            ds.samples.push_back(std::move(s));
        }
        for (const auto& id : header.at("labeled_ids")) ds.labeled_ids.insert(id.get<std::string>());
    } catch (const json::exception& e) {
        throw FormatError(header_path.string() + ": malformed header: " + e.what());
    }
    ds.validate();
    return ds;
}

} // namespace sammix::data
