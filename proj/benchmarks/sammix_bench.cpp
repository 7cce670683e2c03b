#include <benchmark/benchmark.h>

#include <set>
#include <string>
#include <vector>

#include "sammix/classifier.hpp"
#include "sammix/metrics.hpp"
#include "sammix/model.hpp"
#include "sammix/phantom.hpp"
#include "sammix/promptgen.hpp"
#include "sammix/segnet.hpp"
#include "sammix/trainer.hpp"

using namespace sammix;

namespace {

// Phantom slices at the default model resolution.
const data::Dataset& slices() {
    static const data::Dataset d = [] {
        data::PhantomConfig pc;
        pc.slices = 12;
        pc.raw_size = 64;
        pc.image_size = ModelConfig{}.image_size();
        return data::generate_phantom_splits(3, 7, pc).train;
    }();
    return d;
}

const data::Sample& positive() {
    for (const auto& s : slices().samples) {
        if (s.cls_label == 1 && s.seg_label) return s;
    }
    return slices().samples.front();
}

void BM_ClassifierForward(benchmark::State& state) {
    const auto model = ModelState::init(ModelConfig{}, 0);
    const auto image = cls::image_tensor(positive().image);
    ag::NoGradGuard guard;
    for (auto _ : state) {
        auto out = cls::classifier_forward(image, model.classifier);
        benchmark::DoNotOptimize(out.logits.value().data());
    }
}
BENCHMARK(BM_ClassifierForward)->Unit(benchmark::kMillisecond);

void BM_CamBoxes(benchmark::State& state) {
    const auto model = ModelState::init(ModelConfig{}, 0);
    const prompt::ThresholdConfig threshold;
    for (auto _ : state) {
        auto boxes = train::cam_boxes(positive().image, model.classifier, threshold);
        benchmark::DoNotOptimize(boxes.data());
    }
}
BENCHMARK(BM_CamBoxes)->Unit(benchmark::kMillisecond);

void BM_Segment(benchmark::State& state) {
    const auto model = ModelState::init(ModelConfig{}, 0);
    const auto& s = positive();
    const auto coords = prompt::boxes_to_prompt_coords(prompt::mask_bounding_box(*s.seg_label), s.image.height(),
                                                       s.image.width());
    const auto image = cls::image_tensor(s.image);
    ag::NoGradGuard guard;
    for (auto _ : state) {
        auto fwd = seg::segment(image, coords, model.segnet);
        benchmark::DoNotOptimize(fwd.masks.value().data());
    }
}
BENCHMARK(BM_Segment)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    const auto& d = slices();
    std::vector<const data::Sample*> batch;
    std::set<std::string> labeled;
    for (const auto& s : d.samples) {
        if (batch.size() == static_cast<std::size_t>(state.range(0))) break;
        batch.push_back(&s);
        if (s.seg_label) labeled.insert(s.id);
    }
    train::TrainConfig cfg;
    train::TrainState ts(ModelState::init(ModelConfig{}, 0), cfg);
    for (auto _ : state) {
        auto rec = train::train_step(batch, labeled, ts, cfg);
        benchmark::DoNotOptimize(rec.total);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Hausdorff(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    BinaryMask a(n, n, 0), b(n, n, 0);
    for (std::size_t y = n / 4; y < 3 * n / 4; ++y) {
        for (std::size_t x = n / 4; x < 3 * n / 4; ++x) a(y, x) = 1;
    }
    for (std::size_t y = n / 3; y < 5 * n / 6; ++y) {
        for (std::size_t x = n / 5; x < 2 * n / 3; ++x) b(y, x) = 1;
    }
    for (auto _ : state) benchmark::DoNotOptimize(metrics::hausdorff_distance(a, b));
}
BENCHMARK(BM_Hausdorff)->Arg(64)->Arg(256);

} // namespace

BENCHMARK_MAIN();
