#include <benchmark/benchmark.h>

#include <vector>

#include "dgs/geom.hpp"
#include "dgs/init.hpp"
#include "dgs/optim.hpp"
#include "dgs/rng.hpp"
#include "dgs/synth.hpp"

using namespace dgs;

namespace {

struct BarFixture {
    Dataset data;
    ModelState model;

    BarFixture() {
        data = synth_generate(default_synth_spec(SceneKind::BendingBar)).dataset;
        model = initialize_model(data, InitOptions{});
    }
};

const BarFixture& bar() {
    static const BarFixture f;
    return f;
}

} // namespace

static void BM_DqbBlend(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    Rng rng(1);
    std::vector<double> w(static_cast<std::size_t>(n), 1.0 / n);
    std::vector<DualQuaternion> dq;
    for (int i = 0; i < n; ++i) {
        SE3Transform t;
        t.rotation = quat_to_rotmat(Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal()));
        t.translation = Vec3(rng.normal(), rng.normal(), rng.normal());
        dq.push_back(se3_to_dualquat(t));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(dqb_blend(w, dq));
    }
}
BENCHMARK(BM_DqbBlend)->Arg(4)->Arg(25);

static void BM_EvaluateWarp(benchmark::State& state) {
    const BarFixture& f = bar();
    for (auto _ : state) {
        benchmark::DoNotOptimize(evaluate_warp(f.model, 0.3));
    }
    state.counters["surfels"] = static_cast<double>(f.model.surfels.size());
}
BENCHMARK(BM_EvaluateWarp)->Unit(benchmark::kMillisecond);

static void BM_Render(benchmark::State& state) {
    const BarFixture& f = bar();
    const Frame& frame = f.data.frames[4];
    for (auto _ : state) {
        benchmark::DoNotOptimize(render(f.model, frame.camera, frame.t, Branch::Refined));
    }
}
BENCHMARK(BM_Render)->Unit(benchmark::kMillisecond);

static void BM_ForwardBackward(benchmark::State& state) {
    const BarFixture& f = bar();
    const Frame& frame = f.data.frames[4];
    const LossWeights weights{};
    for (auto _ : state) {
        ModelState grad = f.model.zeros_like();
        benchmark::DoNotOptimize(evaluate_objective(f.model, frame.camera, frame.t, frame.image, weights, &grad));
    }
}
BENCHMARK(BM_ForwardBackward)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
