#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "sammix/dataio.hpp"
#include "sammix/error.hpp"
#include "sammix/phantom.hpp"
#include "sammix/trainer.hpp"

namespace sammix::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
};

void add_common(CLI::App* sub, Common& c, bool out_required = true) {
    sub->add_option("--config", c.config_path, "JSON config file (flat dotted keys)");
    sub->add_option("--set", c.overrides, "Override a config key, key=value (repeatable)");
    auto* o = sub->add_option("--out", c.out, "Output location");
    if (out_required) o->required();
}

ExperimentConfig resolve(const Common& c) {
    auto config = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
    for (const auto& o : c.overrides) apply_override(config, o);
    config.validate();
    return config;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

void write_u8(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create " + dir.string());
}

void check_image_size(const data::Dataset& d, const ExperimentConfig& config, const std::string& what) {
    const auto size = config.model.image_size();
    for (const auto& s : d.samples) {
        if (s.image.height() != size || s.image.width() != size) {
            throw ConfigError(what + " holds " + std::to_string(s.image.height()) + "x" +
                              std::to_string(s.image.width()) + " images but model.image_size is " +
                              std::to_string(size));
        }
    }
}

std::string table(const std::vector<metrics::EvalReport>& reports) {
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::vector<metrics::EvalReport>> groups;
    for (const auto& r : reports) {
        const auto key = std::make_pair(r.model, r.domain);
        if (!groups.count(key)) keys.push_back(key);
        groups[key].push_back(r);
    }
    std::ostringstream t;
    t << "| model | domain | runs | Dice | HD (px) |\n|---|---|---|---|---|\n";
    for (const auto& key : keys) {
        const auto agg = metrics::aggregate_runs(groups[key]);
        t << "| " << key.first << " | " << key.second << " | " << agg.runs << " | " << agg.dice.formatted() << " | "
          << agg.hausdorff.formatted() << " |\n";
    }
    return t.str();
}

bool finished_run(const fs::path& dir) {
    return fs::exists(dir / "best" / "manifest.json") && fs::exists(dir / "eval" / "per_sample.csv");
}

// ---------------------------------------------------------------- subcommands

int cmd_synth(const Common& c, std::uint64_t seed, std::size_t n, bool cross_domain, bool raw, std::ostream& out) {
    const auto config = resolve(c);
    auto pc = cross_domain ? data::PhantomConfig::cross_domain() : data::PhantomConfig{};
    pc.image_size = config.model.image_size();
    pc.window_width = config.data.window_width;
    pc.window_center = config.data.window_center;
    pc.middle_fraction = config.data.middle_fraction;
    const auto splits = data::generate_phantoms(n, seed, c.out, pc, raw);
    write_snapshot(config, c.out);
    out << "wrote " << splits.train.samples.size() << " train, " << splits.val.samples.size() << " val, "
        << splits.test.samples.size() << " test slices to " << c.out << "\n";
    return kExitOk;
}

int cmd_preprocess(const Common& c, const std::string& input, const std::string& split, std::ostream& out) {
    const auto config = resolve(c);
    data::PhantomConfig pc;
    pc.image_size = config.model.image_size();
    pc.window_width = config.data.window_width;
    pc.window_center = config.data.window_center;
    pc.middle_fraction = config.data.middle_fraction;

    std::vector<fs::path> stems;
    for (const auto& entry : fs::directory_iterator(input)) {
        if (entry.path().extension() == ".json") stems.push_back(fs::path(entry.path()).replace_extension());
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw DataIntegrityError("no raw volumes (*.json headers) in " + input);

    data::Dataset d;
    d.split = data::split_from_string(split);
    for (std::size_t i = 0; i < stems.size(); ++i) {
        const auto pv = data::load_raw_volume(stems[i]);
        pv.volume.validate();
        if (pv.organ.empty()) throw DataIntegrityError(stems[i].string() + ": volume carries no labels");
        for (auto& s : data::preprocess_volume(pv.volume, pv.organ, i, pc)) {
            d.labeled_ids.insert(s.id);
            d.samples.push_back(std::move(s));
        }
    }
    data::save_dataset(d, c.out);
    write_snapshot(config, c.out);
    out << "preprocessed " << stems.size() << " volumes into " << d.samples.size() << " slices\n";
    return kExitOk;
}

int cmd_split(const Common& c, const std::string& dataset, std::ostream& out) {
    const auto config = resolve(c);
    const auto d = data::load_dataset(dataset);
    const auto split = data::split_supervision(d, config.trainer.n_labeled, config.trainer.split_seed);
    data::save_dataset(split, c.out);
    write_snapshot(config, c.out);
    out << "kept supervision on " << split.labeled_ids.size() << " of " << split.samples.size() << " slices\n";
    return kExitOk;
}

int cmd_train(const Common& c, const std::string& train_dir, const std::string& val_dir, bool resume,
              std::ostream& out) {
    const auto config = resolve(c);
    const fs::path dir = c.out;
    ensure_dir(dir);
    write_snapshot(config, dir);
    const auto full = data::load_dataset(train_dir);
    check_image_size(full, config, train_dir);
    const auto train_set = data::split_supervision(full, config.trainer.n_labeled, config.trainer.split_seed);
    std::optional<data::Dataset> val;
    if (!val_dir.empty()) {
        val = data::load_dataset(val_dir);
        check_image_size(*val, config, val_dir);
    }
    train::TrainOptions options;
    options.out_dir = dir;
    options.val = val ? &*val : nullptr;
    std::optional<train::TrainState> resumed;
    if (resume && fs::exists(dir / "last" / "manifest.json")) {
        resumed.emplace(train::load_train_state(dir / "last", config.trainer));
        options.resume = &*resumed;
        out << "resuming after epoch " << resumed->epoch << "\n";
    }
    const auto result = train::run_training(train_set, config.model, config.trainer, options);
    out << "trained " << train::to_string(config.trainer.mode) << " for " << result.log.size() << " epochs";
    if (result.best_val_dice) out << ", best val Dice " << std::fixed << std::setprecision(4) << *result.best_val_dice;
    out << "\n";
    return kExitOk;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, const std::string& dataset,
                 const std::string& domain, const std::string& model_name, std::ostream& out) {
    const auto config = resolve(c);
    if (domain != "in_domain" && domain != "cross_domain") {
        throw ConfigError("--domain must be in_domain or cross_domain, got '" + domain + "'");
    }
    const auto model = load_model(checkpoint);
    const auto d = data::load_dataset(dataset);
    auto run_config = config;
    run_config.model = model.config();
    check_image_size(d, run_config, dataset);
    const auto report = train::evaluate(d, model, config.trainer, model_name, domain, config.hd_percentile);
    metrics::export_report({report}, c.out);
    write_snapshot(config, c.out);
    out << model_name << " " << domain << " Dice " << metrics::format_mean_std(report.mean_dice(), report.std_dice())
        << " HD " << metrics::format_mean_std(report.mean_hausdorff(), report.std_hausdorff()) << " ("
        << report.samples.size() << " slices, " << report.hausdorff_excluded() << " HD excluded)\n";
    return kExitOk;
}

json diagnostics_json(const std::string& id, const train::Prediction& p) {
    std::size_t fg = 0;
    for (auto v : p.mask.storage()) fg += v;
    return {{"id", id},
            {"logits", {p.diagnostics.logits[0], p.diagnostics.logits[1]}},
            {"predicted_class", p.diagnostics.predicted_class},
            {"boxes", prompt::boxes_to_json(p.diagnostics.boxes)},
            {"scores", p.diagnostics.scores},
            {"selected", p.diagnostics.selected ? json(*p.diagnostics.selected) : json(nullptr)},
            {"foreground_px", fg}};
}

int cmd_predict(const Common& c, const std::string& checkpoint, const std::string& dataset, const std::string& id,
                const std::string& image_path, std::size_t size, std::ostream& out) {
    const auto config = resolve(c);
    const auto model = load_model(checkpoint);
    std::vector<std::pair<std::string, ImageGrid>> inputs;
    if (!image_path.empty()) {
        if (!dataset.empty()) throw ConfigError("--image and --dataset are mutually exclusive");
        if (size == 0) throw ConfigError("--image needs --size");
        inputs.emplace_back(fs::path(image_path).stem().string(),
                            ImageGrid(size, size, data::read_f32_file(image_path, size * size)));
    } else if (!dataset.empty()) {
        const auto d = data::load_dataset(dataset);
        for (const auto& s : d.samples) {
            if (id.empty() || s.id == id) inputs.emplace_back(s.id, s.image);
        }
        if (inputs.empty()) throw ArgumentError("no sample '" + id + "' in " + dataset);
    } else {
        throw ConfigError("predict needs --dataset or --image");
    }
    const fs::path dir = c.out;
    ensure_dir(dir);
    std::size_t positive = 0;
    for (const auto& [name, image] : inputs) {
        const auto p = train::predict(image, model, config.trainer.threshold, config.trainer.per_box_decode);
        write_u8(dir / (name + ".mask.u8"), p.mask.storage());
        std::vector<float> cam(p.diagnostics.cam.storage().begin(), p.diagnostics.cam.storage().end());
        data::write_f32_file(dir / (name + ".cam.f32"), cam);
        write_text(dir / (name + ".json"), diagnostics_json(name, p).dump(2) + "\n");
        positive += metrics::dice_score(p.mask, BinaryMask(p.mask.height(), p.mask.width(), 0)) < 1.0;
    }
    write_snapshot(config, dir);
    out << "predicted " << inputs.size() << " slices, " << positive << " with a non-empty mask\n";
    return kExitOk;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs, std::ostream& out) {
    const auto config = resolve(c);
    std::vector<metrics::EvalReport> reports;
    for (const auto& in : inputs) {
        const fs::path p = fs::is_directory(in) ? fs::path(in) / "per_sample.csv" : fs::path(in);
        auto r = metrics::read_per_sample_csv(p);
        reports.insert(reports.end(), r.begin(), r.end());
    }
    if (reports.empty()) throw ArgumentError("report: inputs hold no samples");
    metrics::export_report(reports, c.out);
    const auto t = table(reports);
    write_text(fs::path(c.out) / "table.md", t);
    write_snapshot(config, c.out);
    out << t;
    return kExitOk;
}

int cmd_overlay(const Common& c, const std::string& dataset, const std::string& id, const std::string& checkpoint,
                const std::string& pred_path, std::ostream& out) {
    const auto config = resolve(c);
    const auto d = data::load_dataset(dataset);
    const auto* s = d.find(id);
    if (!s) throw ArgumentError("no sample '" + id + "' in " + dataset);
    const BinaryMask gt = s->seg_label ? *s->seg_label : BinaryMask(s->image.height(), s->image.width(), 0);
    BinaryMask pred;
    if (!checkpoint.empty() == !pred_path.empty()) throw ConfigError("overlay needs exactly one of --checkpoint, --pred");
    if (!checkpoint.empty()) {
        pred = train::predict(s->image, load_model(checkpoint), config.trainer.threshold, config.trainer.per_box_decode)
                   .mask;
    } else {
        std::ifstream in(pred_path, std::ios::binary);
        if (!in) throw IoError("cannot open " + pred_path);
        std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        if (bytes.size() != gt.size()) throw ShapeMismatchError(pred_path + ": mask size does not match the image");
        pred = BinaryMask(gt.height(), gt.width(), std::move(bytes));
    }
    const fs::path path = c.out;
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    metrics::write_ppm(metrics::render_overlay(s->image, gt, pred), path);
    write_snapshot(config, path.has_parent_path() ? path.parent_path() : fs::path("."));
    out << "wrote " << path.string() << "\n";
    return kExitOk;
}

int cmd_matrix(const Common& c, const std::string& data_dir, const std::string& cross_dir, std::ostream& out) {
    const auto config = resolve(c);
    RunPaths paths{fs::path(data_dir) / "train", fs::path(data_dir) / "val", fs::path(data_dir) / "test", {}};
    if (!cross_dir.empty()) paths.cross_test = fs::path(cross_dir) / "test";
    const auto cells = experiment_matrix(config, paths, c.out, out);
    std::size_t failed = 0;
    for (const auto& cell : cells) failed += !cell.errors.empty();
    out << cells.size() << " cells, " << failed << " with failures\n";
    return failed == cells.size() ? kExitRuntime : kExitOk;
}

} // namespace

std::string cell_name(train::Mode mode, std::size_t n_labeled) {
    switch (mode) {
    case train::Mode::sam_mix_e2e: return "SAM-Mix-" + std::to_string(n_labeled);
    case train::Mode::sam_pp_two_stage: return "SAM-PP-" + std::to_string(n_labeled);
    case train::Mode::cls_only: return "CLS-" + std::to_string(n_labeled);
    }
    return "?";
}

std::vector<metrics::EvalReport> run_single(const ExperimentConfig& config, const RunPaths& paths, const fs::path& dir,
                                            const std::string& model_name, std::ostream& log) {
    if (finished_run(dir)) {
        log << model_name << " seed " << config.trainer.seed << ": reusing " << dir.string() << "\n";
        return metrics::read_per_sample_csv(dir / "eval" / "per_sample.csv");
    }
    ensure_dir(dir);
    write_snapshot(config, dir);
    const auto full = data::load_dataset(paths.train);
    check_image_size(full, config, paths.train.string());
    const auto train_set = data::split_supervision(full, config.trainer.n_labeled, config.trainer.split_seed);
    std::optional<data::Dataset> val;
    if (!paths.val.empty() && fs::exists(paths.val / "split.json")) val = data::load_dataset(paths.val);

    train::TrainOptions options;
    options.out_dir = dir;
    options.val = val ? &*val : nullptr;
    const auto result = train::run_training(train_set, config.model, config.trainer, options);

    std::vector<metrics::EvalReport> reports;
    const auto test = data::load_dataset(paths.test);
    reports.push_back(
        train::evaluate(test, result.best, config.trainer, model_name, "in_domain", config.hd_percentile));
    if (!paths.cross_test.empty()) {
        const auto cross = data::load_dataset(paths.cross_test);
        reports.push_back(
            train::evaluate(cross, result.best, config.trainer, model_name, "cross_domain", config.hd_percentile));
    }
    metrics::export_report(reports, dir / "eval");
    log << model_name << " seed " << config.trainer.seed << ": test Dice " << std::fixed << std::setprecision(3)
        << reports.front().mean_dice() << "\n";
    return reports;
}

std::vector<CellResult> experiment_matrix(const ExperimentConfig& config, const RunPaths& paths,
                                          const fs::path& out_dir, std::ostream& log) {
    config.validate();
    ensure_dir(out_dir);
    write_snapshot(config, out_dir);
    std::vector<CellResult> cells;
    std::vector<metrics::EvalReport> all;
    json summary = json::array();
    for (auto mode : config.matrix.modes) {
        for (auto n : config.matrix.n_labeled) {
            CellResult cell;
            cell.name = cell_name(mode, n);
            for (auto seed : config.trainer.seeds) {
                auto cfg = config;
                cfg.trainer.mode = mode;
                cfg.trainer.n_labeled = n;
                cfg.trainer.seed = seed;
                const auto dir = out_dir / cell.name / ("seed-" + std::to_string(seed));
                try {
                    auto r = run_single(cfg, paths, dir, cell.name, log);
                    cell.reports.insert(cell.reports.end(), r.begin(), r.end());
                } catch (const std::exception& e) {
                    cell.errors.push_back("seed " + std::to_string(seed) + ": " + e.what());
                    log << cell.name << " seed " << seed << " failed: " << e.what() << "\n";
                }
            }
            json entry{{"cell", cell.name},
                       {"mode", train::to_string(mode)},
                       {"n_labeled", n},
                       {"runs", cell.reports.size()},
                       {"errors", cell.errors}};
            if (!cell.reports.empty()) entry["table"] = table(cell.reports);
            summary.push_back(std::move(entry));
            all.insert(all.end(), cell.reports.begin(), cell.reports.end());
            cells.push_back(std::move(cell));
        }
    }
    write_text(out_dir / "matrix.json", summary.dump(2) + "\n");
    if (!all.empty()) {
        metrics::export_report(all, out_dir / "report");
        const auto t = table(all);
        write_text(out_dir / "table.md", t);
        log << t;
    }
    return cells;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"sammix: CAM-prompted segmentation experiments", "sammix"};
    app.require_subcommand(1);

    Common synth_c, pre_c, split_c, train_c, eval_c, pred_c, rep_c, ovl_c, mat_c;
    std::uint64_t seed = 0;
    std::size_t n_volumes = 0, image_size = 0;
    bool cross = false, raw = false, resume = false;
    std::string input, split_name = "train", dataset, train_dir, val_dir, checkpoint, domain = "in_domain",
                        model_name = "model", id, image_path, pred_path, data_dir, cross_dir;
    std::vector<std::string> inputs;

    auto* synth = app.add_subcommand("synth-data", "Generate a phantom dataset (train/val/test splits)");
    add_common(synth, synth_c);
    synth->add_option("--seed", seed, "Generator seed")->required();
    synth->add_option("--n", n_volumes, "Number of phantom volumes")->required()->check(CLI::PositiveNumber);
    synth->add_flag("--cross-domain", cross, "Use the shifted-contrast generator");
    synth->add_flag("--raw", raw, "Also write raw HU volumes under <out>/raw");

    auto* pre = app.add_subcommand("preprocess", "Window, slice-select and resize raw volumes into a dataset");
    add_common(pre, pre_c);
    pre->add_option("--input", input, "Directory of raw volumes")->required();
    pre->add_option("--split", split_name, "Split tag (train|val|test)");

    auto* split = app.add_subcommand("split", "Keep segmentation supervision on trainer.n_labeled positive slices");
    add_common(split, split_c);
    split->add_option("--dataset", dataset, "Dataset directory")->required();

    auto* trn = app.add_subcommand("train", "Train according to trainer.mode");
    add_common(trn, train_c);
    trn->add_option("--train", train_dir, "Training dataset directory")->required();
    trn->add_option("--val", val_dir, "Validation dataset directory");
    trn->add_flag("--resume", resume, "Continue from <out>/last when present");

    auto* ev = app.add_subcommand("evaluate", "Dice/Hausdorff of a checkpoint on a dataset");
    add_common(ev, eval_c);
    ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    ev->add_option("--dataset", dataset, "Dataset directory")->required();
    ev->add_option("--domain", domain, "in_domain or cross_domain");
    ev->add_option("--model-name", model_name, "Model label used in the reports");

    auto* pr = app.add_subcommand("predict", "Masks and diagnostics for dataset slices or a raw image");
    add_common(pr, pred_c);
    pr->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    pr->add_option("--dataset", dataset, "Dataset directory");
    pr->add_option("--id", id, "Only this sample");
    pr->add_option("--image", image_path, "Raw float32 little-endian square image");
    pr->add_option("--size", image_size, "Side length of --image");

    auto* rep = app.add_subcommand("report", "Aggregate evaluation outputs into one report");
    add_common(rep, rep_c);
    rep->add_option("--inputs", inputs, "Evaluation directories or per_sample.csv files")->required();

    auto* ovl = app.add_subcommand("overlay", "Render ground truth and predicted contour as a PPM image");
    add_common(ovl, ovl_c);
    ovl->add_option("--dataset", dataset, "Dataset directory")->required();
    ovl->add_option("--id", id, "Sample id")->required();
    ovl->add_option("--checkpoint", checkpoint, "Checkpoint to predict with");
    ovl->add_option("--pred", pred_path, "Precomputed mask (.u8)");

    auto* mat = app.add_subcommand("matrix", "Run every mode x n_labeled x seed cell");
    add_common(mat, mat_c);
    mat->add_option("--data", data_dir, "Directory holding train/val/test")->required();
    mat->add_option("--cross-data", cross_dir, "Directory holding a cross-domain test split");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(synth_c, seed, n_volumes, cross, raw, out);
        if (*pre) return cmd_preprocess(pre_c, input, split_name, out);
        if (*split) return cmd_split(split_c, dataset, out);
        if (*trn) return cmd_train(train_c, train_dir, val_dir, resume, out);
        if (*ev) return cmd_evaluate(eval_c, checkpoint, dataset, domain, model_name, out);
        if (*pr) return cmd_predict(pred_c, checkpoint, dataset, id, image_path, image_size, out);
        if (*rep) return cmd_report(rep_c, inputs, out);
        if (*ovl) return cmd_overlay(ovl_c, dataset, id, checkpoint, pred_path, out);
        if (*mat) return cmd_matrix(mat_c, data_dir, cross_dir, out);
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << "\nRun with --help for more information.\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

} // namespace sammix::cli
