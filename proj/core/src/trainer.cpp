#include "sammix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sammix/config.hpp"
#include "sammix/error.hpp"

namespace sammix::train {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Mode m) {
    switch (m) {
    case Mode::sam_mix_e2e: return "sam_mix_e2e";
    case Mode::sam_pp_two_stage: return "sam_pp_two_stage";
    case Mode::cls_only: return "cls_only";
    }
    return "?";
}

Mode mode_from_string(const std::string& s) {
    if (s == "sam_mix_e2e") return Mode::sam_mix_e2e;
    if (s == "sam_pp_two_stage") return Mode::sam_pp_two_stage;
    if (s == "cls_only") return Mode::cls_only;
    throw ArgumentError("unknown mode '" + s + "' (sam_mix_e2e|sam_pp_two_stage|cls_only)");
}

std::string to_string(LrSchedule s) { return s == LrSchedule::constant ? "constant" : "cosine_warm_restart"; }

LrSchedule schedule_from_string(const std::string& s) {
    if (s == "constant") return LrSchedule::constant;
    if (s == "cosine_warm_restart") return LrSchedule::cosine_warm_restart;
    throw ArgumentError("unknown lr schedule '" + s + "' (constant|cosine_warm_restart)");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("trainer.epochs must be at least 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("trainer.lr must be positive");
    if (!(lr_min >= 0.0) || lr_min > lr) throw ConfigError("trainer.lr_min must lie in [0, lr]");
    if (batch_size < 1) throw ConfigError("trainer.batch_size must be at least 1");
    if (!(lambda_seg >= 0.0) || !std::isfinite(lambda_seg)) throw ConfigError("trainer.lambda_seg must be >= 0");
    if (!(focal_alpha > 0.0)) throw ConfigError("trainer.focal_alpha must be positive");
    if (!(focal_gamma >= 0.0)) throw ConfigError("trainer.focal_gamma must be >= 0");
    if (lr_schedule == LrSchedule::cosine_warm_restart && restart_period < 1) {
        throw ConfigError("trainer.restart_period must be at least 1");
    }
    if (seeds.empty()) throw ConfigError("trainer.seeds must not be empty");
    if (!(weight_decay >= 0.0)) throw ConfigError("trainer.weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("trainer.beta1/beta2 must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("trainer.adam_eps must be positive");
    if (!(score_loss_weight >= 0.0)) throw ConfigError("trainer.score_loss_weight must be >= 0");
    if (!(dice_eps > 0.0)) throw ConfigError("trainer.dice_eps must be positive");
    threshold.validate();
}

double cosine_lr(double t, double period, double lr_max, double lr_min) {
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / period));
}

double lr_at(double epoch_fraction, const TrainConfig& config) {
    if (config.lr_schedule == LrSchedule::constant) return config.lr;
    const auto period = static_cast<double>(config.restart_period);
    const double t = std::fmod(std::max(epoch_fraction, 0.0), period);
    return cosine_lr(t, period, config.lr, config.lr_min);
}

// ---------------------------------------------------------------- optimizer

AdamW::AdamW(const TrainConfig& config)
    : beta1_(config.beta1), beta2_(config.beta2), eps_(config.adam_eps), weight_decay_(config.weight_decay) {}

void AdamW::step(const ParamList& params, double lr) {
    for (const auto& p : params) {
        if (!p.trainable()) continue;
        const auto g = p.var.grad();
        if (g.empty()) continue;
        auto& mo = moments_[p.name];
        if (mo.m.size() != g.size()) {
            mo.m.assign(g.size(), 0.0);
            mo.v.assign(g.size(), 0.0);
            mo.steps = 0;
        }
        ++mo.steps;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(mo.steps));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(mo.steps));
        auto var = p.var;
        auto w = var.mutable_value();
        for (std::size_t i = 0; i < g.size(); ++i) {
            mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * g[i];
            mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * g[i] * g[i];
            w[i] -= lr * weight_decay_ * w[i];
            w[i] -= lr * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + eps_);
        }
    }
}

TrainState::TrainState(ModelState m, const TrainConfig& config) : model(std::move(m)), optimizer(config) {
    std::seed_seq seq{config.seed, std::uint64_t{0x7a11}};
    std::array<std::uint64_t, 1> s{};
    seq.generate(s.begin(), s.end());
    rng.seed(s[0]);
}

// ---------------------------------------------------------------- losses

SegLoss segmentation_loss(const seg::SegForward& fwd, const BinaryMask& gt, const TrainConfig& config) {
    const auto k = fwd.masks.dim(0);
    std::vector<ag::Var> dice(k);
    std::vector<double> achieved(k);
    SegLoss out;
    for (std::size_t i = 0; i < k; ++i) {
        dice[i] = seg::dice_loss(ag::slice_rows(fwd.masks, i, 1), gt, config.dice_eps);
        achieved[i] = 1.0 - dice[i].item();
        if (dice[i].item() < dice[out.best_index].item()) out.best_index = i;
    }
    out.dice = dice[out.best_index];
    out.total = out.dice;
    if (config.score_loss_weight > 0.0) {
        auto target = ag::Var::constant({k}, achieved);
        auto mse = ag::mean(ag::square(ag::sub(fwd.scores, target)));
        out.total = ag::add(out.total, ag::scale(mse, config.score_loss_weight));
    }
    return out;
}

std::vector<prompt::BoxPrompt> cam_boxes(const ImageGrid& image, const cls::ClassifierParams& classifier,
                                         const prompt::ThresholdConfig& threshold) {
    ag::NoGradGuard guard;
    auto out = cls::classifier_forward(image, classifier);
    auto cam = cls::compute_cam(out.f_last, classifier.fc_weights, 1, image.height(), image.width());
    return prompt::boxes_from_cam(cam, threshold);
}

namespace {

void check_finite(double v, const std::string& what, const std::string& id) {
    if (!std::isfinite(v)) {
        json dump{{"event", "divergence"}, {"quantity", what}, {"sample", id}, {"value", std::to_string(v)}};
        throw DivergenceError("non-finite " + what + " on sample " + id + ": " + dump.dump());
    }
}

} // namespace

StepRecord train_step(const std::vector<const data::Sample*>& batch, const std::set<std::string>& labeled_ids,
                      TrainState& state, const TrainConfig& config, const StepOptions& options) {
    if (batch.empty()) throw ArgumentError("train_step: empty batch");
    const auto params = state.model.parameters();
    clear_grads(params);

    StepRecord rec;
    rec.lr = lr_at(options.epoch_fraction >= 0.0 ? options.epoch_fraction : static_cast<double>(state.epoch), config);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const auto& classifier = state.model.classifier;
    const bool want_seg = options.phase != Phase::classifier_only;

    struct Gated {
        const data::Sample* sample;
        std::vector<prompt::PromptCoords> coords;
        ag::Var image;
    };
    std::vector<Gated> gated;

    for (const auto* s : batch) {
        auto image = cls::image_tensor(s->image);
        const bool labeled = want_seg && s->seg_label && labeled_ids.count(s->id) != 0;
        std::optional<cls::ClassifierOutput> out;
        if (options.phase != Phase::segmenter_only) {
            out = cls::classifier_forward(image, classifier);
            auto lc = cls::focal_loss(out->logits, s->cls_label, config.focal_alpha, config.focal_gamma);
            check_finite(lc.item(), "classification loss", s->id);
            lc.backward(inv_b);
            rec.l_cls += lc.item() * inv_b;
        }
        if (!labeled) continue;

        std::vector<prompt::BoxPrompt> boxes;
        if (options.fixed_boxes) {
            if (auto it = options.fixed_boxes->find(s->id); it != options.fixed_boxes->end()) boxes = it->second;
        } else if (out) {
            // Box coordinates are constants of the step: CAM is read from values only.
            auto cam = cls::compute_cam(out->f_last, classifier.fc_weights, 1, s->image.height(), s->image.width());
            boxes = prompt::boxes_from_cam(cam, config.threshold);
        } else {
            boxes = cam_boxes(s->image, classifier, config.threshold);
        }
        if (boxes.empty() && config.gt_box_fallback) boxes = prompt::mask_bounding_box(*s->seg_label);
        if (boxes.empty()) continue;
        gated.push_back(
            {s, prompt::boxes_to_prompt_coords(boxes, s->image.height(), s->image.width()), std::move(image)});
    }

    rec.n_gated = gated.size();
    if (!gated.empty()) {
        const double inv_n = 1.0 / static_cast<double>(gated.size());
        for (auto& g : gated) {
            auto fwd = seg::segment(g.image, g.coords, state.model.segnet);
            auto loss = segmentation_loss(fwd, *g.sample->seg_label, config);
            check_finite(loss.total.item(), "segmentation loss", g.sample->id);
            if (config.lambda_seg > 0.0) loss.total.backward(config.lambda_seg * inv_n);
            rec.l_seg += loss.total.item() * inv_n;
            rec.l_dice += loss.dice.item() * inv_n;
        }
    }
    rec.total = rec.l_cls + config.lambda_seg * rec.l_seg;
    check_finite(rec.total, "total loss", batch.front()->id);

    if (options.apply_update) {
        state.optimizer.step(params, rec.lr);
        ++state.steps;
    }
    return rec;
}

// ---------------------------------------------------------------- logging

json to_json(const EpochLog& e) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"epoch", e.epoch}, {"stage", e.stage},   {"l_cls", e.l_cls},         {"l_seg", e.l_seg},
            {"total", e.total}, {"lr", e.lr},         {"val_dice", opt(e.val_dice)}, {"val_hd", opt(e.val_hd)}};
}

json to_json(const std::vector<EpochLog>& log) {
    json arr = json::array();
    for (const auto& e : log) arr.push_back(to_json(e));
    return arr;
}

namespace {

class EventSink {
  public:
    explicit EventSink(const std::optional<fs::path>& dir) {
        if (!dir) return;
        std::error_code ec;
        fs::create_directories(*dir, ec);
        if (ec) throw IoError("cannot create " + dir->string() + ": " + ec.message());
        out_.open(*dir / "events.jsonl", std::ios::app);
        if (!out_) throw IoError("cannot write " + (*dir / "events.jsonl").string());
    }
    void emit(const json& event) {
        if (out_.is_open()) out_ << event.dump() << "\n" << std::flush;
    }

  private:
    std::ofstream out_;
};

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

struct EpochLoop {
    const TrainConfig& config;
    const TrainOptions& options;
    EventSink& events;
    TrainResult& result;
    bool track_best = true;

    void run(TrainState& state, const std::vector<const data::Sample*>& pool, const std::set<std::string>& labeled,
             std::size_t epochs, const StepOptions& step_options, const std::string& stage) {
        if (pool.empty()) throw ArgumentError("no training samples for stage " + stage);
        std::vector<std::size_t> order(pool.size());
        const std::size_t n_batches = (pool.size() + config.batch_size - 1) / config.batch_size;
        const std::size_t first = state.epoch;
        for (std::size_t e = first; e < epochs; ++e) {
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), state.rng);
            EpochLog log;
            log.stage = stage;
            log.lr = lr_at(static_cast<double>(e), config);
            for (std::size_t b = 0; b < n_batches; ++b) {
                std::vector<const data::Sample*> batch;
                for (std::size_t i = b * config.batch_size; i < std::min(pool.size(), (b + 1) * config.batch_size);
                     ++i) {
                    batch.push_back(pool[order[i]]);
                }
                auto so = step_options;
                so.epoch_fraction = static_cast<double>(e) + static_cast<double>(b) / static_cast<double>(n_batches);
                const auto rec = train_step(batch, labeled, state, config, so);
                log.l_cls += rec.l_cls / static_cast<double>(n_batches);
                log.l_seg += rec.l_seg / static_cast<double>(n_batches);
            }
            clear_grads(state.model.parameters());
            log.total = log.l_cls + config.lambda_seg * log.l_seg;
            state.epoch = e + 1;
            state.running_l_cls = log.l_cls;
            state.running_l_seg = log.l_seg;
            log.epoch = state.epoch;

            const bool eval_now = options.val && !options.val->samples.empty() && config.eval_every > 0 &&
                                  (state.epoch % config.eval_every == 0 || state.epoch == epochs);
            if (eval_now) {
                const auto report = evaluate(*options.val, state.model, config);
                log.val_dice = report.mean_dice();
                if (report.samples.size() > report.hausdorff_excluded()) log.val_hd = report.mean_hausdorff();
            }
            if (track_best && log.val_dice && (!result.best_val_dice || *log.val_dice > *result.best_val_dice)) {
                result.best_val_dice = log.val_dice;
                result.best = state.model.clone();
                if (options.out_dir) {
                    save_model(result.best, *options.out_dir / "best",
                               {{"epoch", state.epoch}, {"stage", stage}, {"val_dice", *log.val_dice}});
                }
            }
            auto ev = to_json(log);
            ev["event"] = "epoch";
            events.emit(ev);
            result.log.push_back(std::move(log));
        }
    }
};

std::vector<const data::Sample*> all_samples(const data::Dataset& d) {
    std::vector<const data::Sample*> out;
    for (const auto& s : d.samples) out.push_back(&s);
    return out;
}

void finish(TrainResult& result, TrainState& state, const TrainConfig& config, const TrainOptions& options,
            EventSink& events) {
    if (!result.best_val_dice) result.best = state.model.clone();
    if (options.out_dir) {
        if (!result.best_val_dice) save_model(result.best, *options.out_dir / "best", {{"epoch", state.epoch}});
        save_train_state(state, config, *options.out_dir / "last");
        write_json(*options.out_dir / "log.json", to_json(result.log));
    }
    events.emit({{"event", "end"},
                 {"epochs", state.epoch},
                 {"steps", state.steps},
                 {"best_val_dice", result.best_val_dice ? json(*result.best_val_dice) : json(nullptr)}});
    if (options.final_state) options.final_state->emplace(std::move(state));
}

TrainState make_state(const ModelConfig& model_config, const TrainConfig& config, const TrainOptions& options) {
    if (options.resume) return *options.resume;
    if (options.initial_model) return TrainState(options.initial_model->clone(), config);
    return TrainState(ModelState::init(model_config, config.seed), config);
}

template <class F>
void guarded(const TrainOptions& options, EventSink& events, F&& body) {
    try {
        body();
    } catch (const DivergenceError& e) {
        events.emit({{"event", "abort"}, {"reason", e.what()}});
        if (options.out_dir) write_json(*options.out_dir / "divergence.json", {{"error", e.what()}});
        throw;
    }
}

} // namespace

TrainResult train(const data::Dataset& train_set, const ModelConfig& model_config, const TrainConfig& config,
                  const TrainOptions& options) {
    config.validate();
    model_config.validate();
    train_set.validate();
    TrainResult result;
    EventSink events(options.out_dir);
    auto state = make_state(model_config, config, options);
    events.emit({{"event", "start"},
                 {"mode", to_string(config.mode)},
                 {"samples", train_set.samples.size()},
                 {"labeled", train_set.labeled_ids.size()},
                 {"seed", config.seed},
                 {"start_epoch", state.epoch}});
    guarded(options, events, [&] {
        EpochLoop loop{config, options, events, result};
        StepOptions so;
        so.phase = config.mode == Mode::cls_only ? Phase::classifier_only : Phase::joint;
        loop.run(state, all_samples(train_set), train_set.labeled_ids, config.epochs, so,
                 config.mode == Mode::cls_only ? "classifier" : "joint");
    });
    finish(result, state, config, options, events);
    return result;
}

TrainResult train_two_stage(const data::Dataset& train_set, const ModelConfig& model_config, const TrainConfig& config,
                            const TrainOptions& options) {
    config.validate();
    model_config.validate();
    train_set.validate();
    TrainResult result;
    EventSink events(options.out_dir);
    auto state = make_state(model_config, config, options);
    events.emit({{"event", "start"},
                 {"mode", to_string(config.mode)},
                 {"samples", train_set.samples.size()},
                 {"labeled", train_set.labeled_ids.size()},
                 {"seed", config.seed},
                 {"start_epoch", state.epoch}});

    guarded(options, events, [&] {
        // Stage 1 occupies epochs [0, E), stage 2 epochs [E, 2E) of the state's counter.
        EpochLoop stage1{config, options, events, result, false};
        StepOptions so1;
        so1.phase = Phase::classifier_only;
        if (state.epoch < config.epochs) {
            stage1.run(state, all_samples(train_set), train_set.labeled_ids, config.epochs, so1, "classifier");
        }

        std::vector<const data::Sample*> pool;
        for (const auto& s : train_set.samples) {
            if (s.seg_label && train_set.is_labeled(s.id)) pool.push_back(&s);
        }
        if (pool.empty()) {
            events.emit({{"event", "stage_skipped"}, {"stage", "segmenter"}, {"reason", "no labelled samples"}});
            return;
        }
        std::map<std::string, std::vector<prompt::BoxPrompt>> boxes;
        std::size_t fallback = 0;
        for (const auto* s : pool) {
            auto b = cam_boxes(s->image, state.model.classifier, config.threshold);
            if (b.empty() && config.gt_box_fallback) {
                b = prompt::mask_bounding_box(*s->seg_label);
                ++fallback;
            }
            boxes[s->id] = std::move(b);
        }
        events.emit({{"event", "boxes_precomputed"}, {"samples", pool.size()}, {"gt_fallback", fallback}});

        EpochLoop stage2{config, options, events, result, true};
        StepOptions so2;
        so2.phase = Phase::segmenter_only;
        so2.fixed_boxes = &boxes;
        stage2.run(state, pool, train_set.labeled_ids, 2 * config.epochs, so2, "segmenter");
    });
    finish(result, state, config, options, events);
    return result;
}

TrainResult run_training(const data::Dataset& train_set, const ModelConfig& model_config, const TrainConfig& config,
                         const TrainOptions& options) {
    if (config.mode == Mode::sam_pp_two_stage) return train_two_stage(train_set, model_config, config, options);
    return train(train_set, model_config, config, options);
}

// ---------------------------------------------------------------- inference

Prediction predict(const ImageGrid& image, const ModelState& model, const prompt::ThresholdConfig& threshold,
                   bool per_box_decode) {
    ag::NoGradGuard guard;
    Prediction p;
    p.mask = BinaryMask(image.height(), image.width(), 0);
    auto tensor = cls::image_tensor(image);
    auto out = cls::classifier_forward(tensor, model.classifier);
    const auto logits = out.logits.value();
    p.diagnostics.logits = {logits[0], logits[1]};
    p.diagnostics.predicted_class = logits[1] > logits[0] ? 1 : 0;
    p.diagnostics.cam = cls::compute_cam(out.f_last, model.classifier.fc_weights, 1, image.height(), image.width());
    p.diagnostics.boxes = prompt::boxes_from_cam(p.diagnostics.cam, threshold);
    if (p.diagnostics.predicted_class == 0 || p.diagnostics.boxes.empty()) return p;

    const auto coords = prompt::boxes_to_prompt_coords(p.diagnostics.boxes, image.height(), image.width());
    seg::SegPrediction pred;
    if (per_box_decode) {
        pred = seg::segment_per_box(tensor, coords, model.segnet);
    } else {
        pred = seg::to_prediction(seg::segment(tensor, coords, model.segnet), image.height(), image.width());
    }
    p.diagnostics.scores = pred.scores;
    const auto sel = seg::select_best_mask(pred.scores);
    p.diagnostics.selected = sel.index;
    const auto& m = pred.masks[sel.index].storage();
    for (std::size_t i = 0; i < m.size(); ++i) p.mask.storage()[i] = m[i] >= 0.5 ? 1 : 0;
    return p;
}

metrics::EvalReport evaluate(const data::Dataset& dataset, const ModelState& model, const TrainConfig& config,
                             const std::string& model_name, const std::string& domain,
                             std::optional<double> hd_percentile) {
    metrics::EvalReport report;
    report.model = model_name;
    report.domain = domain;
    report.seed = config.seed;
    for (const auto& s : dataset.samples) {
        if (!s.seg_label) continue;
        const auto pred = predict(s.image, model, config.threshold, config.per_box_decode);
        report.samples.push_back({s.id, metrics::dice_score(pred.mask, *s.seg_label),
                                  metrics::hausdorff_distance(pred.mask, *s.seg_label, hd_percentile)});
    }
    return report;
}

// ---------------------------------------------------------------- train state files

void save_train_state(const TrainState& state, const TrainConfig& config, const fs::path& dir) {
    auto archive = to_archive(state.model.parameters());
    json steps = json::object();
    for (const auto& [name, mo] : state.optimizer.moments()) {
        archive.entries.push_back({"adam.m/" + name, {mo.m.size()}, mo.m, false});
        archive.entries.push_back({"adam.v/" + name, {mo.v.size()}, mo.v, false});
        steps[name] = mo.steps;
    }
    std::ostringstream rng;
    rng << state.rng;
    archive.meta = {{"kind", "train_state"},
                    {"model_config", model_config_to_json(state.model.config())},
                    {"epoch", state.epoch},
                    {"steps", state.steps},
                    {"rng", rng.str()},
                    {"running_l_cls", state.running_l_cls},
                    {"running_l_seg", state.running_l_seg},
                    {"adam_steps", steps},
                    {"seed", config.seed},
                    {"mode", to_string(config.mode)}};
    save_archive(archive, dir);
}

TrainState load_train_state(const fs::path& dir, const TrainConfig& config) {
    const auto archive = load_archive(dir);
    const auto& meta = archive.meta;
    if (meta.value("kind", "") != "train_state") throw FormatError(dir.string() + ": not a training state");
    try {
        auto model = ModelState::init(model_config_from_json(meta.at("model_config")), 0);
        restore_params(archive, model.parameters());
        TrainState state(std::move(model), config);
        state.epoch = meta.at("epoch").get<std::size_t>();
        state.steps = meta.at("steps").get<std::uint64_t>();
        state.running_l_cls = meta.at("running_l_cls").get<double>();
        state.running_l_seg = meta.at("running_l_seg").get<double>();
        std::istringstream rng(meta.at("rng").get<std::string>());
        rng >> state.rng;
        if (!rng) throw FormatError(dir.string() + ": bad rng state");
        for (const auto& [name, steps] : meta.at("adam_steps").items()) {
            const auto* m = archive.find("adam.m/" + name);
            const auto* v = archive.find("adam.v/" + name);
            if (!m || !v) throw FormatError(dir.string() + ": missing optimizer moments for " + name);
            state.optimizer.moments()[name] = {m->values, v->values, steps.get<std::uint64_t>()};
        }
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir.string() + ": " + e.what());
    }
}

} // namespace sammix::train
