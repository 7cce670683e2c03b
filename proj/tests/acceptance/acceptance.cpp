// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sammix/classifier.hpp"
#include "sammix/config.hpp"
#include "sammix/dataio.hpp"
#include "sammix/metrics.hpp"
#include "sammix/phantom.hpp"
#include "sammix/promptgen.hpp"
#include "sammix/segnet.hpp"
#include "sammix/trainer.hpp"
#include "test_support.hpp"

using namespace sammix;
using sammix::support::rel_error;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------- 1

Outcome prompt_oracles() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<std::size_t> side(8, 32);
    std::uniform_real_distribution<double> om(0.1, 0.9);
    std::size_t mismatches = 0, boxes_seen = 0;
    const int n = 1200;
    for (int i = 0; i < n; ++i) {
        const auto h = side(rng), w = side(rng);
        const auto cam = support::random_cam(h, w, rng);
        prompt::ThresholdConfig cfg;
        cfg.omega = om(rng);
        cfg.connectivity = i % 2 ? 4 : 8;
        cfg.min_area_px = i % 3;
        cfg.max_boxes = 1 + i % 6;
        const auto mask = prompt::threshold_cam(cam, cfg);
        mismatches += !(mask == oracle::threshold(cam, cfg.omega));
        const auto regions = prompt::label_regions(mask, cfg.connectivity);
        mismatches += !(regions.labels == oracle::ranked_labels(mask, cfg.connectivity));
        const auto boxes = prompt::extract_boxes(regions, cfg);
        mismatches += !(boxes == oracle::boxes(mask, cfg.connectivity, cfg.min_area_px, cfg.max_boxes));
        boxes_seen += boxes.size();
    }
    const double t = seconds_since(t0);
    return {mismatches == 0 && t < 60.0,
            std::to_string(n) + " CAMs 8..32 px, " + std::to_string(boxes_seen) + " boxes, " +
                std::to_string(mismatches) + " mismatches, " + fmt("%.1f s", t)};
}

// ---------------------------------------------------------------- 2

Outcome metric_oracles() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(202);
    double worst = 0.0;
    std::size_t dice_mismatch = 0;
    for (int i = 0; i < 500; ++i) {
        const auto a = support::random_mask(12, 12, 0.05 + 0.1 * (i % 6), rng);
        const auto b = support::random_mask(12, 12, 0.05 + 0.1 * ((i + 3) % 6), rng);
        worst = std::max(worst, std::abs(metrics::hausdorff_distance(a, b) - oracle::hausdorff(a, b)));
        dice_mismatch += metrics::dice_score(a, b) != oracle::dice(a, b);
    }
    const double t = seconds_since(t0);
    return {worst <= 1e-9 && dice_mismatch == 0 && t < 60.0,
            "500 pairs 12x12, max HD error " + fmt("%.2e", worst) + ", Dice mismatches " +
                std::to_string(dice_mismatch) + ", " + fmt("%.1f s", t)};
}

// ---------------------------------------------------------------- 3

Outcome gradient_checks() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(303);
    const double h = 1e-6;

    double focal_err = 0.0;
    std::uniform_real_distribution<double> u(-4.0, 4.0), ga(0.0, 3.0), al(0.1, 1.0);
    for (int i = 0; i < 100; ++i) {
        const double l0 = u(rng), l1 = u(rng), gamma = ga(rng), alpha = al(rng);
        const int label = i % 2;
        auto logits = ag::Var::leaf({2}, {l0, l1}, true);
        cls::focal_loss(logits, label, alpha, gamma).backward();
        const double n0 = (cls::focal_loss_value(l0 + h, l1, label, alpha, gamma) -
                           cls::focal_loss_value(l0 - h, l1, label, alpha, gamma)) / (2 * h);
        const double n1 = (cls::focal_loss_value(l0, l1 + h, label, alpha, gamma) -
                           cls::focal_loss_value(l0, l1 - h, label, alpha, gamma)) / (2 * h);
        focal_err = std::max({focal_err, rel_error(logits.grad()[0], n0), rel_error(logits.grad()[1], n1)});
    }

    double dice_err = 0.0;
    std::uniform_real_distribution<double> p01(0.01, 0.99);
    std::uniform_int_distribution<std::size_t> side(2, 9);
    for (int c = 0; c < 60; ++c) {
        const auto hh = side(rng), ww = side(rng);
        const auto gt = support::random_mask(hh, ww, 0.1 + 0.1 * (c % 6), rng);
        std::vector<double> p(hh * ww);
        for (auto& v : p) v = p01(rng);
        auto x = ag::Var::leaf({p.size()}, p, true);
        seg::dice_loss(x, gt).backward();
        for (std::size_t i = 0; i < p.size(); ++i) {
            auto pp = p, pm = p;
            pp[i] += h;
            pm[i] -= h;
            const double num = (seg::dice_loss(pp, gt) - seg::dice_loss(pm, gt)) / (2 * h);
            dice_err = std::max(dice_err, rel_error(x.grad()[i], num));
        }
    }

    double e2e_fd = 0.0, e2e_manual = 0.0;
    std::size_t scalars = 0;
    const int configs = 50;
    for (int s = 0; s < configs; ++s) {
        const auto r = support::run_grad_check(support::random_grad_case(static_cast<std::uint64_t>(s)), h);
        e2e_fd = std::max(e2e_fd, r.max_err_fd);
        e2e_manual = std::max(e2e_manual, r.max_err_vs_manual);
        scalars += r.checked;
    }
    const double t = seconds_since(t0);
    return {focal_err < 1e-3 && dice_err < 1e-3 && e2e_fd < 1e-3 && e2e_manual < 1e-8 && t < 300.0,
            "focal " + fmt("%.1e", focal_err) + " (100 draws), dice " + fmt("%.1e", dice_err) +
                " (60 configs), end-to-end " + fmt("%.1e", e2e_fd) + " over " + std::to_string(configs) +
                " configs / " + std::to_string(scalars) + " parameters (step vs manual " + fmt("%.1e", e2e_manual) +
                "), " + fmt("%.1f s", t)};
}

// ---------------------------------------------------------------- 4

Outcome lora_contracts() {
    const auto mc = support::desk_model_config();
    auto model = ModelState::init(mc, 404);

    // (a) identity at init: every adapter removed gives the same forward pass.
    auto stripped = model.segnet;
    for (auto& b : stripped.blocks) {
        for (auto* pr : {&b.q, &b.k, &b.v, &b.o}) pr->lora.reset();
    }
    data::PhantomConfig pc;
    pc.image_size = 64;
    const auto splits = data::generate_phantom_splits(4, 404, pc);
    const auto& sample = splits.train.samples.at(splits.train.samples.size() / 2);
    const auto img = cls::image_tensor(sample.image);
    const std::vector<prompt::PromptCoords> coords{{0.2, 0.25, 0.7, 0.8}};
    double diff = 0.0;
    {
        ag::NoGradGuard guard;
        const auto a = seg::segment(img, coords, model.segnet), b = seg::segment(img, coords, stripped);
        for (std::size_t i = 0; i < a.masks.numel(); ++i) diff = std::max(diff, std::abs(a.masks.value()[i] - b.masks.value()[i]));
        for (std::size_t i = 0; i < a.scores.numel(); ++i) diff = std::max(diff, std::abs(a.scores.value()[i] - b.scores.value()[i]));
    }
    const bool a_ok = diff <= 1e-6;

    // (b) adapter size per adapted d=64 projection.
    bool b_ok = mc.segnet.dim == 64 && mc.segnet.lora_rank == 8;
    std::size_t adapted = 0;
    for (const auto& blk : model.segnet.blocks) {
        for (const auto* pr : {&blk.q, &blk.k, &blk.v, &blk.o}) {
            if (!pr->lora) continue;
            ++adapted;
            b_ok = b_ok && pr->lora->trainable_count() == 1024 && pr->weight.numel() == 4096;
        }
    }
    b_ok = b_ok && adapted == 2 * mc.segnet.depth;

    // (c) frozen base after 100 steps.
    train::TrainConfig tc;
    tc.lr = 1e-2;
    const auto ds = data::split_supervision(splits.train, 4, 1);
    std::vector<const data::Sample*> batch;
    for (const auto& s : ds.samples) {
        if (ds.is_labeled(s.id) || batch.size() < 2) batch.push_back(&s);
        if (batch.size() == 4) break;
    }
    std::vector<std::vector<double>> frozen_before, trainable_before;
    for (const auto& p : model.parameters()) {
        (p.trainable() ? trainable_before : frozen_before).emplace_back(p.var.value().begin(), p.var.value().end());
    }
    train::TrainState st(model.clone(), tc);
    std::size_t gated = 0;
    for (int i = 0; i < 100; ++i) gated += train::train_step(batch, ds.labeled_ids, st, tc).n_gated;
    std::vector<std::vector<double>> frozen_after, trainable_after;
    for (const auto& p : st.model.parameters()) {
        (p.trainable() ? trainable_after : frozen_after).emplace_back(p.var.value().begin(), p.var.value().end());
    }
    const bool c_ok = frozen_after == frozen_before && trainable_after != trainable_before && gated > 0;
    return {a_ok && b_ok && c_ok, "(a) max |full - base| " + fmt("%.1e", diff) + (a_ok ? " ok" : " FAIL") +
                                      "; (b) 1024 vs 4096 on " + std::to_string(adapted) + " projections" +
                                      (b_ok ? " ok" : " FAIL") + "; (c) base bit-identical after 100 steps" +
                                      (c_ok ? " ok" : " FAIL")};
}

// ---------------------------------------------------------------- 5

Outcome gating() {
    data::PhantomConfig pc;
    pc.image_size = 64;
    const auto splits = data::generate_phantom_splits(4, 505, pc);
    const auto ds = data::split_supervision(splits.train, 3, 5);
    const auto model = ModelState::init(support::desk_model_config(), 505);
    train::TrainConfig tc;
    std::vector<const data::Sample*> mixed, labeled;
    std::size_t unlabeled = 0;
    for (const auto& s : ds.samples) {
        if (ds.is_labeled(s.id)) {
            mixed.push_back(&s);
            labeled.push_back(&s);
        } else if (unlabeled < 5) {
            mixed.push_back(&s);
            ++unlabeled;
        }
    }
    std::map<std::string, std::vector<prompt::BoxPrompt>> boxes;
    for (const auto* s : labeled) {
        auto b = train::cam_boxes(s->image, model.classifier, tc.threshold);
        boxes[s->id] = b.empty() ? prompt::mask_bounding_box(*s->seg_label) : b;
    }
    train::StepOptions so;
    so.apply_update = false;
    so.fixed_boxes = &boxes;
    train::TrainState a(model.clone(), tc), b(model.clone(), tc);
    train::train_step(mixed, ds.labeled_ids, a, tc, so);
    train::train_step(labeled, ds.labeled_ids, b, tc, so);
    const auto pa = a.model.segnet.named(), pb = b.model.segnet.named();
    std::size_t compared = 0, differing = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (!pa[i].trainable()) continue;
        const auto ga = pa[i].var.grad(), gb = pb[i].var.grad();
        if (ga.size() != gb.size()) {
            ++differing;
            continue;
        }
        for (std::size_t k = 0; k < ga.size(); ++k) {
            ++compared;
            differing += ga[k] != gb[k];
        }
    }
    return {differing == 0 && compared > 0,
            std::to_string(labeled.size()) + " labeled + " + std::to_string(unlabeled) + " unlabeled; " +
                std::to_string(compared) + " segnet gradient entries, " + std::to_string(differing) + " differ"};
}

// ---------------------------------------------------------------- 6

struct OverfitRun {
    ModelState model;
    data::Dataset train_set;
    data::PhantomSplits splits;
};

Outcome overfit(std::optional<OverfitRun>& keep) {
    data::PhantomConfig pc;
    pc.image_size = 64;
    auto splits = data::generate_phantom_splits(10, 11, pc);
    data::Dataset tr;
    std::size_t pos = 0, neg = 0;
    for (const auto& s : splits.train.samples) {
        if (s.cls_label == 1 && pos < 8 && s.id.back() % 2 == 0) {
            tr.samples.push_back(s);
            tr.labeled_ids.insert(s.id);
            ++pos;
        } else if (s.cls_label == 0 && neg < 8) {
            tr.samples.push_back(s);
            ++neg;
        }
    }
    train::TrainConfig tc;
    tc.epochs = 60;
    tc.n_labeled = 8;
    const auto t0 = Clock::now();
    auto res = train::train(tr, support::desk_model_config(), tc);
    const double t = seconds_since(t0);

    data::Dataset labeled;
    for (const auto& s : tr.samples) {
        if (tr.is_labeled(s.id)) labeled.samples.push_back(s);
    }
    const double dice = train::evaluate(labeled, res.best, tc).mean_dice();
    std::size_t empty = 0, negatives = 0;
    for (const auto& s : splits.test.samples) {
        if (s.cls_label != 0) continue;
        ++negatives;
        const auto p = train::predict(s.image, res.best, tc.threshold);
        empty += std::all_of(p.mask.storage().begin(), p.mask.storage().end(), [](auto v) { return v == 0; });
    }
    const double frac = negatives ? static_cast<double>(empty) / static_cast<double>(negatives) : 0.0;
    keep.emplace(OverfitRun{res.best.clone(), tr, std::move(splits)});
    return {pos == 8 && dice >= 0.95 && t < 600.0 && negatives > 0 && frac >= 0.9,
            std::to_string(pos) + " labeled slices, train Dice " + fmt("%.3f", dice) + " after 60 epochs in " +
                fmt("%.0f s", t) + "; held-out organ-free slices empty " + std::to_string(empty) + "/" +
                std::to_string(negatives)};
}

// Moving the prompt box away from the organ must change the mask.
Outcome box_sensitivity(const OverfitRun& run) {
    ag::NoGradGuard guard;
    std::vector<double> agreement;
    for (const auto& s : run.train_set.samples) {
        if (!run.train_set.is_labeled(s.id)) continue;
        const auto gt_box = prompt::mask_bounding_box(*s.seg_label).at(0);
        const int size = static_cast<int>(s.image.width());
        const int bw = gt_box.x_max - gt_box.x_min, bh = gt_box.y_max - gt_box.y_min;
        // Opposite corner of the image, same box size.
        prompt::BoxPrompt moved{0, 0, bw, bh, 0};
        if (gt_box.x_min + gt_box.x_max < size) moved.x_min = size - 1 - bw;
        if (gt_box.y_min + gt_box.y_max < size) moved.y_min = size - 1 - bh;
        moved.x_max = moved.x_min + bw;
        moved.y_max = moved.y_min + bh;
        const bool disjoint = moved.x_min > gt_box.x_max || moved.x_max < gt_box.x_min ||
                              moved.y_min > gt_box.y_max || moved.y_max < gt_box.y_min;
        if (!disjoint) continue;
        const auto img = cls::image_tensor(s.image);
        auto mask_for = [&](const prompt::BoxPrompt& b) {
            const auto coords = prompt::boxes_to_prompt_coords({b}, s.image.height(), s.image.width());
            const auto pred = seg::to_prediction(seg::segment(img, coords, run.model.segnet), s.image.height(),
                                                 s.image.width());
            const auto& m = pred.masks[seg::select_best_mask(pred.scores).index].storage();
            BinaryMask out(s.image.height(), s.image.width(), 0);
            for (std::size_t i = 0; i < m.size(); ++i) out.storage()[i] = m[i] >= 0.5 ? 1 : 0;
            return out;
        };
        agreement.push_back(metrics::dice_score(mask_for(gt_box), mask_for(moved)));
    }
    if (agreement.empty()) return {false, "no labeled slice admits a disjoint box"};
    const auto ms = metrics::mean_std(agreement);
    return {ms.mean < 0.5, "Dice between masks from the organ box and a disjoint box " + ms.formatted() + " over " +
                               std::to_string(agreement.size()) + " slices"};
}

// ---------------------------------------------------------------- 7, 8

struct BudgetRuns {
    std::vector<double> e2e5, e2e50, pp50;
    double seconds_e2e = 0.0, seconds_pp = 0.0;
    std::size_t train_slices = 0, total_slices = 0;
};

BudgetRuns budget_runs() {
    data::PhantomConfig pc;
    pc.image_size = 64;
    const auto splits = data::generate_phantom_splits(20, 3, pc);
    BudgetRuns out;
    out.train_slices = splits.train.samples.size();
    out.total_slices = out.train_slices + splits.val.samples.size() + splits.test.samples.size();
    auto run = [&](train::Mode mode, std::size_t n, std::vector<double>& into, double& seconds) {
        for (std::uint64_t seed : {0, 1, 2}) {
            train::TrainConfig tc;
            tc.mode = mode;
            tc.epochs = 30;
            tc.n_labeled = n;
            tc.seed = seed;
            const auto tr = data::split_supervision(splits.train, n, seed + 100);
            train::TrainOptions opt;
            opt.val = &splits.val;
            const auto t0 = Clock::now();
            const auto res = train::run_training(tr, support::desk_model_config(), tc, opt);
            into.push_back(train::evaluate(splits.test, res.best, tc).mean_dice());
            seconds += seconds_since(t0);
        }
    };
    run(train::Mode::sam_mix_e2e, 5, out.e2e5, out.seconds_e2e);
    run(train::Mode::sam_mix_e2e, 50, out.e2e50, out.seconds_e2e);
    run(train::Mode::sam_pp_two_stage, 50, out.pp50, out.seconds_pp);
    return out;
}

Outcome label_budget(const BudgetRuns& r) {
    const auto a = metrics::mean_std(r.e2e5), b = metrics::mean_std(r.e2e50);
    const double pooled = std::sqrt((a.std * a.std + b.std * b.std) / 2.0);
    const double gap = b.mean - a.mean;
    return {gap > pooled && r.seconds_e2e < 1800.0,
            std::to_string(r.train_slices) + " training slices (" + std::to_string(r.total_slices) +
                " total), 3 seeds: Dice n=5 " + a.formatted() + ", n=50 " + b.formatted() + ", gap " +
                fmt("%.3f", gap) + " vs pooled std " + fmt("%.3f", pooled) + ", " + fmt("%.0f s", r.seconds_e2e)};
}

Outcome e2e_vs_two_stage(const BudgetRuns& r) {
    const auto e = metrics::mean_std(r.e2e50), p = metrics::mean_std(r.pp50);
    return {e.mean > p.mean, "n=50, 3 seeds: sam_mix_e2e " + e.formatted() + ", sam_pp_two_stage " + p.formatted() +
                                 ", " + fmt("%.0f s", r.seconds_pp) + " for the two-stage runs"};
}

// ---------------------------------------------------------------- 9

Outcome determinism() {
    support::TempDir tmp;
    data::PhantomConfig pc;
    pc.image_size = 32;
    const auto splits = data::generate_phantom_splits(10, 909, pc);
    const auto ds = data::split_supervision(splits.train, 4, 9);
    auto mc = support::desk_model_config();
    mc.set_image_size(32);
    train::TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    train::TrainOptions o;
    o.val = &splits.val;
    const auto a = train::train(ds, mc, tc, o), b = train::train(ds, mc, tc, o);
    const bool logs = train::to_json(a.log).dump() == train::to_json(b.log).dump();

    data::save_dataset(ds, tmp / "d1");
    const auto back = data::load_dataset(tmp / "d1");
    data::save_dataset(back, tmp / "d2");
    bool data_ok = support::tree_bytes(tmp / "d1") == support::tree_bytes(tmp / "d2") &&
                   back.samples.size() == ds.samples.size() && back.labeled_ids == ds.labeled_ids;
    for (std::size_t i = 0; data_ok && i < ds.samples.size(); ++i) {
        data_ok = back.samples[i].image.storage() == ds.samples[i].image.storage() &&
                  back.samples[i].seg_label == ds.samples[i].seg_label;
    }

    save_model(a.best, tmp / "c1");
    const auto loaded = load_model(tmp / "c1");
    save_model(loaded, tmp / "c2");
    bool ckpt_ok = support::tree_bytes(tmp / "c1") == support::tree_bytes(tmp / "c2");
    const auto pa = a.best.parameters(), pl = loaded.parameters();
    ckpt_ok = ckpt_ok && pa.size() == pl.size();
    for (std::size_t i = 0; ckpt_ok && i < pa.size(); ++i) {
        ckpt_ok = std::equal(pa[i].var.value().begin(), pa[i].var.value().end(), pl[i].var.value().begin());
    }

    const auto rep = train::evaluate(splits.test, a.best, tc, "SAM-Mix-4");
    metrics::export_report({rep}, tmp / "r1");
    const auto reread = metrics::read_per_sample_csv(tmp / "r1/per_sample.csv");
    metrics::export_report(reread, tmp / "r2");
    const bool report_ok = support::tree_bytes(tmp / "r1") == support::tree_bytes(tmp / "r2");

    return {logs && data_ok && ckpt_ok && report_ok,
            std::string("epoch logs ") + (logs ? "identical" : "DIFFER") + ", dataset round trip " +
                (data_ok ? "bit-exact" : "FAIL") + ", checkpoint round trip " + (ckpt_ok ? "bit-exact" : "FAIL") +
                ", report re-export " + (report_ok ? "byte-identical" : "FAIL")};
}

// ---------------------------------------------------------------- 10

Outcome preprocessing_goldens() {
    bool ok = data::window_level_value(-160.0f, 400.0, 40.0) == 0.0f &&
              data::window_level_value(240.0f, 400.0, 40.0) == 1.0f &&
              data::window_level_value(40.0f, 400.0, 40.0) == 0.5f;
    std::vector<std::size_t> mid100;
    for (std::size_t i = 35; i <= 64; ++i) mid100.push_back(i);
    ok = ok && data::extract_middle_slices(100, 0.3) == mid100;
    ok = ok && data::extract_middle_slices(10, 1.0) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    ok = ok && data::extract_middle_slices(3, 0.3) == std::vector<std::size_t>{1};
    BinaryMask m(6, 6, 0);
    ok = ok && data::derive_class_label(m) == 0;
    m(4, 2) = 1;
    ok = ok && data::derive_class_label(m) == 1;
    ok = ok && data::derive_class_label(BinaryMask(6, 6, 1)) == 1;

    // Regression golden of the labeled subset.
    data::PhantomConfig pc;
    pc.image_size = 64;
    const auto split = data::split_supervision(data::generate_phantom_splits(20, 3, pc).train, 5, 17);
    std::ifstream in(support::golden_path("split_supervision_n5_seed17.json"));
    bool golden_ok = static_cast<bool>(in);
    if (golden_ok) {
        const auto golden = nlohmann::json::parse(in);
        std::set<std::string> want;
        for (const auto& id : golden) want.insert(id.get<std::string>());
        golden_ok = want.size() == 5 && want == split.labeled_ids;
    }
    return {ok && golden_ok, std::string("window -160/240/40 -> 0/1/0.5, middle slices S=100/10/3, class labels ") +
                                 (ok ? "ok" : "FAIL") + "; n=5 seed=17 labeled set " +
                                 (golden_ok ? "matches golden" : "differs from golden")};
}

} // namespace

int main() {
    int failures = 0;
    auto report = [&](const std::string& name, const Outcome& o) {
        failures += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    };
    auto guarded = [&](const std::string& name, const std::function<Outcome()>& f) {
        try {
            report(name, f());
        } catch (const std::exception& e) {
            report(name, {false, std::string("exception: ") + e.what()});
        }
    };

    guarded("1 prompt generation oracles", prompt_oracles);
    guarded("2 metric oracles", metric_oracles);
    guarded("3 gradient checks", gradient_checks);
    guarded("4 LoRA contracts", lora_contracts);
    guarded("5 semi-supervised gating", gating);
    std::optional<OverfitRun> overfit_run;
    guarded("6 desk-scale overfit", [&] { return overfit(overfit_run); });
    if (overfit_run) {
        try {
            const auto o = box_sensitivity(*overfit_run);
            std::cout << "INFO box conditioning: " << (o.pass ? "" : "weak, ") << o.detail << std::endl;
        } catch (const std::exception& e) {
            std::cout << "INFO box conditioning: exception: " << e.what() << std::endl;
        }
    }
    std::optional<BudgetRuns> budget;
    try {
        budget = budget_runs();
    } catch (const std::exception& e) {
        report("7 label-budget trend", {false, std::string("exception: ") + e.what()});
        report("8 end-to-end vs two-stage", {false, std::string("exception: ") + e.what()});
    }
    if (budget) {
        report("7 label-budget trend", label_budget(*budget));
        report("8 end-to-end vs two-stage", e2e_vs_two_stage(*budget));
    }
    guarded("9 determinism and round trips", determinism);
    guarded("10 preprocessing goldens", preprocessing_goldens);

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
