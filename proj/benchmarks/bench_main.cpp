#include <benchmark/benchmark.h>

#include "dspnet/ops.hpp"
#include "dspnet/rng.hpp"
#include "dspnet/slimnet.hpp"
#include "dspnet/ssl.hpp"

using namespace dspnet;

namespace {

Tensor<float> uniform_tensor(Shape shape, std::uint64_t seed) {
    Tensor<float> t(std::move(shape));
    Engine g = keyed_engine({seed});
    for (auto& v : t.values()) v = static_cast<float>(uniform(g, -1.0, 1.0));
    return t;
}

/// Layout of the committed toy config: 32x32 grayscale, two stages.
FamilySpec toy_family() {
    FamilySpec f;
    f.in_channels = 1;
    f.image_size = 32;
    f.stem_channels = 8;
    f.stem_kernel = 3;
    f.stages = {StageSpec{16, 2, 3, 2}, StageSpec{32, 2, 3, 2}};
    f.dn_list = {SwitchConfig{{0.5, 0.5}, {2, 2}}, SwitchConfig{{0.75, 0.75}, {2, 2}}, SwitchConfig{{1.0, 1.0}, {2, 2}}};
    return f;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto x = uniform_tensor({32, c, 16, 16}, 1);
    const auto w = uniform_tensor({c, c, 3, 3}, 2);
    for (auto _ : state) {
        Tape<float> tape;
        auto xv = tape.variable("x", x);
        auto wv = tape.variable("w", w);
        auto y = sum(conv2d(xv, wv, 1, 1));
        benchmark::DoNotOptimize(tape.backward(y));
    }
    state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_EncoderForwardEval(benchmark::State& state) {
    const FamilySpec f = toy_family();
    const auto& cfg = f.dn_list[static_cast<std::size_t>(state.range(0))];
    ParamStore<float> store;
    init_encoder(store, f, 3);
    const auto x = uniform_tensor({128, 1, 32, 32}, 4);
    ForwardOptions opt;
    opt.mode = BnMode::eval;
    opt.trainable = false;
    for (auto _ : state) {
        Tape<float> tape;
        benchmark::DoNotOptimize(forward_encoder(tape, store, f, cfg, tape.constant(x), opt).value());
    }
    state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_EncoderForwardEval)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

/// One gradient-accumulation step over all three toy DNs (batch 128).
void BM_DspnetStepGradients(benchmark::State& state) {
    const FamilySpec f = toy_family();
    auto s = init_branch_state<float>(f, HeadSpec{128, 32}, 5);
    const auto v = uniform_tensor({128, 1, 32, 32}, 6), vp = uniform_tensor({128, 1, 32, 32}, 7);
    for (auto _ : state) {
        Gradients<float> grads;
        benchmark::DoNotOptimize(accumulate_gradients(s, v, vp, f.dn_list, grads).total);
    }
}
BENCHMARK(BM_DspnetStepGradients)->Unit(benchmark::kMillisecond);

void BM_EmaUpdate(benchmark::State& state) {
    const FamilySpec f = toy_family();
    auto s = init_branch_state<float>(f, HeadSpec{128, 32}, 8);
    for (auto _ : state) ema_update(s.target, s.online, f, 0.996);
}
BENCHMARK(BM_EmaUpdate);

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
