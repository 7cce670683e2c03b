#include "sammix/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "sammix/config.hpp"
#include "sammix/error.hpp"

namespace sammix {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormatName = "sammix-checkpoint";

std::uint64_t to_little(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
    return v;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

} // namespace

void ModelConfig::validate() const {
    classifier.validate();
    segnet.validate();
    if (classifier.image_size != segnet.image_size) {
        throw ConfigError("classifier and segmenter image sizes differ: " + std::to_string(classifier.image_size) +
                          " vs " + std::to_string(segnet.image_size));
    }
}

ModelState ModelState::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::seed_seq seq{seed, std::uint64_t{0x5a4d}};
    std::array<std::uint64_t, 2> seeds{};
    seq.generate(seeds.begin(), seeds.end());
    std::mt19937_64 cls_rng(seeds[0]);
    std::mt19937_64 seg_rng(seeds[1]);
    ModelState m;
    m.classifier = cls::ClassifierParams::init(config.classifier, cls_rng);
    m.segnet = seg::SegnetParams::init(config.segnet, seg_rng);
    return m;
}

ParamList ModelState::parameters() const {
    auto out = classifier.named();
    auto seg = segnet.named();
    out.insert(out.end(), std::make_move_iterator(seg.begin()), std::make_move_iterator(seg.end()));
    return out;
}

ModelState ModelState::clone() const {
    auto copy = init(config(), 0);
    restore_params(to_archive(parameters()), copy.parameters());
    return copy;
}

const TensorArchive::Entry* TensorArchive::find(const std::string& name) const {
    for (const auto& e : entries) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

void save_archive(const TensorArchive& archive, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    json entries = json::array();
    std::vector<char> blob;
    std::size_t offset = 0;
    for (const auto& e : archive.entries) {
        std::size_t n = 1;
        for (auto d : e.shape) n *= d;
        if (n != e.values.size()) {
            throw ShapeMismatchError(e.name + ": shape " + shape_str(e.shape) + " does not hold " +
                                     std::to_string(e.values.size()) + " values");
        }
        entries.push_back(
            {{"name", e.name}, {"shape", e.shape}, {"offset", offset}, {"count", n}, {"trainable", e.trainable}});
        blob.resize(blob.size() + 8 * n);
        char* dst = blob.data() + 8 * offset;
        for (std::size_t i = 0; i < n; ++i) {
            const auto bits = to_little(std::bit_cast<std::uint64_t>(e.values[i]));
            std::memcpy(dst + 8 * i, &bits, 8);
        }
        offset += n;
    }
    json manifest{{"format", kCheckpointFormatName},
                  {"version", kCheckpointFormatVersion},
                  {"dtype", "f64-le"},
                  {"total_values", offset},
                  {"entries", std::move(entries)},
                  {"meta", archive.meta}};

    std::ofstream bin(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot write " + (dir / "tensors.bin").string());
    bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!bin) throw IoError("short write to " + (dir / "tensors.bin").string());

    std::ofstream man(dir / "manifest.json", std::ios::trunc);
    if (!man) throw IoError("cannot write " + (dir / "manifest.json").string());
    man << manifest.dump(2) << "\n";
}

TensorArchive load_archive(const fs::path& dir) {
    const auto man_path = dir / "manifest.json";
    std::ifstream man(man_path);
    if (!man) throw IoError("cannot open " + man_path.string());
    json manifest;
    try {
        manifest = json::parse(man);
    } catch (const json::exception& e) {
        throw FormatError(man_path.string() + ": " + e.what());
    }
    TensorArchive archive;
    std::size_t total = 0;
    try {
        if (manifest.at("format").get<std::string>() != kCheckpointFormatName) {
            throw FormatError(man_path.string() + ": not a checkpoint manifest");
        }
        const int version = manifest.at("version").get<int>();
        if (version != kCheckpointFormatVersion) {
            throw VersionError(man_path.string() + ": unsupported checkpoint version " + std::to_string(version));
        }
        if (manifest.at("dtype").get<std::string>() != "f64-le") throw FormatError(man_path.string() + ": bad dtype");
        total = manifest.at("total_values").get<std::size_t>();
        archive.meta = manifest.value("meta", json::object());
        for (const auto& rec : manifest.at("entries")) {
            TensorArchive::Entry e;
            e.name = rec.at("name").get<std::string>();
            e.shape = rec.at("shape").get<std::vector<std::size_t>>();
            e.trainable = rec.at("trainable").get<bool>();
            const auto offset = rec.at("offset").get<std::size_t>();
            const auto count = rec.at("count").get<std::size_t>();
            std::size_t n = 1;
            for (auto d : e.shape) n *= d;
            if (n != count || offset + count > total) throw FormatError(man_path.string() + ": bad entry " + e.name);
            e.values.resize(count);
            archive.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw FormatError(man_path.string() + ": " + e.what());
    }

    const auto bin_path = dir / "tensors.bin";
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("cannot open " + bin_path.string());
    std::vector<char> blob{std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>()};
    if (blob.size() != 8 * total) {
        throw ShapeMismatchError(bin_path.string() + ": expected " + std::to_string(8 * total) + " bytes, found " +
                                 std::to_string(blob.size()));
    }
    std::size_t offset = 0;
    for (std::size_t k = 0; k < archive.entries.size(); ++k) {
        auto& e = archive.entries[k];
        const auto declared = manifest["entries"][k]["offset"].get<std::size_t>();
        if (declared != offset) throw FormatError(man_path.string() + ": non-contiguous offset for " + e.name);
        for (std::size_t i = 0; i < e.values.size(); ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, blob.data() + 8 * (offset + i), 8);
            e.values[i] = std::bit_cast<double>(to_little(bits));
        }
        offset += e.values.size();
    }
    return archive;
}

TensorArchive to_archive(const ParamList& params) {
    TensorArchive a;
    a.entries.reserve(params.size());
    for (const auto& p : params) {
        const auto v = p.var.value();
        a.entries.push_back({p.name, p.var.shape(), {v.begin(), v.end()}, p.trainable()});
    }
    return a;
}

void restore_params(const TensorArchive& archive, const ParamList& params) {
    for (const auto& p : params) {
        const auto* e = archive.find(p.name);
        if (!e) throw FormatError("checkpoint is missing parameter " + p.name);
        if (e->shape != p.var.shape()) {
            throw FormatError("parameter " + p.name + " has shape " + shape_str(e->shape) + " in the checkpoint, " +
                              shape_str(p.var.shape()) + " in the model");
        }
        auto v = p.var;
        std::copy(e->values.begin(), e->values.end(), v.mutable_value().begin());
    }
}

void save_model(const ModelState& model, const fs::path& dir, const json& extra_meta) {
    auto archive = to_archive(model.parameters());
    archive.meta = json::object();
    archive.meta["kind"] = "model";
    archive.meta["model_config"] = model_config_to_json(model.config());
    if (extra_meta.is_object()) {
        for (const auto& [k, v] : extra_meta.items()) archive.meta[k] = v;
    }
    save_archive(archive, dir);
}

ModelState load_model(const fs::path& dir) {
    const auto archive = load_archive(dir);
    if (!archive.meta.contains("model_config")) throw FormatError(dir.string() + ": checkpoint has no model config");
    const auto config = model_config_from_json(archive.meta.at("model_config"));
    auto model = ModelState::init(config, 0);
    restore_params(archive, model.parameters());
    return model;
}

} // namespace sammix
