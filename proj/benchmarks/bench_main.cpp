#include <benchmark/benchmark.h>

#include "alamo/infer.hpp"
#include "alamo/metrics.hpp"
#include "alamo/nn/model.hpp"
#include "alamo/nn/ops.hpp"
#include "alamo/phantom.hpp"
#include "alamo/rng.hpp"
#include "alamo/train.hpp"

using namespace alamo;

namespace {

nn::Tensor<float> random_tensor(nn::Shape shape, std::uint64_t seed) {
    nn::Tensor<float> t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.values()) v = static_cast<float>(rng.normal());
    return t;
}

void BM_Conv2dForward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto k = static_cast<std::size_t>(state.range(1));
    const auto x = random_tensor({c, 64, 64}, 1);
    const auto w = random_tensor({c, c, k, k}, 2);
    const auto b = random_tensor({c}, 3);
    for (auto _ : state) benchmark::DoNotOptimize(nn::kernels::conv2d_forward(x, w, b, 1, k / 2));
}
BENCHMARK(BM_Conv2dForward)->Args({8, 3})->Args({16, 3})->Args({16, 1});

void BM_Conv2dBackward(benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto x = random_tensor({c, 64, 64}, 1);
    const auto w = random_tensor({c, c, 3, 3}, 2);
    const auto g = random_tensor({c, 64, 64}, 3);
    for (auto _ : state) {
        nn::Tensor<float> gx(x.shape()), gw(w.shape()), gb({c});
        nn::kernels::conv2d_backward(x, w, g, 1, 1, &gx, &gw, &gb);
        benchmark::DoNotOptimize(gw);
    }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(16);

nn::ModelConfig tiny_config() {
    nn::ModelConfig cfg;
    cfg.k = 4;
    cfg.depth = 2;
    cfg.layers_per_block = 2;
    cfg.slab = 4;
    return cfg;
}

void BM_TrainStep(benchmark::State& state) {
    const nn::ModelConfig cfg = tiny_config();
    nn::Network<float> net(cfg, 0);
    const auto x = random_tensor({4, 64, 64}, 4);
    std::vector<std::uint8_t> labels(4 * 64 * 64);
    Rng rng(5);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 10));
    for (auto _ : state) {
        nn::Tape<float> tape;
        const nn::Var in = tape.leaf(x);
        const auto fwd = net.forward(tape, in, nn::Mode::Train);
        const nn::Var loss = nn::cross_entropy_groups(tape, fwd.logits, labels, kClassCount);
        tape.backward(loss);
        benchmark::DoNotOptimize(nn::collect_gradients(tape, fwd));
    }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_PredictView(benchmark::State& state) {
    const nn::Network<float> net(tiny_config(), 0);
    const Volume v = standardize(phantom::generate(phantom::default_spec({24, 64, 64}, 4, 0)).first);
    for (auto _ : state) benchmark::DoNotOptimize(infer::predict_view(net, v, ViewAxis::Transversal));
}
BENCHMARK(BM_PredictView)->Unit(benchmark::kMillisecond);

metrics::Mask sphere(std::size_t n, double cx, double r) {
    metrics::Mask m(Dims3{n, n, n});
    const double c = static_cast<double>(n) / 2.0;
    for (std::size_t z = 0; z < n; ++z)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double dz = static_cast<double>(z) - c, dy = static_cast<double>(y) - c,
                             dx = static_cast<double>(x) - cx;
                m(z, y, x) = dz * dz + dy * dy + dx * dx <= r * r;
            }
    return m;
}

void BM_Hd95(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto method = state.range(1) == 0 ? metrics::DistanceMethod::BruteForce : metrics::DistanceMethod::Transform;
    const auto a = sphere(n, n / 2.0, n / 3.0);
    const auto b = sphere(n, n / 2.0 + 2, n / 3.0);
    for (auto _ : state) benchmark::DoNotOptimize(metrics::hd95(a, b, Spacing{1.2, 1.2, 1.2}, method));
}
BENCHMARK(BM_Hd95)->Args({16, 0})->Args({16, 1})->Args({32, 0})->Args({32, 1})->Unit(benchmark::kMillisecond);

void BM_FuseMajority(benchmark::State& state) {
    const Dims3 d{24, 64, 64};
    std::array<ProbMap, 3> p{ProbMap(d, {1, 1, 1}), ProbMap(d, {1, 1, 1}), ProbMap(d, {1, 1, 1})};
    Rng rng(6);
    for (auto& pm : p)
        for (auto& cls : pm.classes)
            for (auto& v : cls.storage()) v = static_cast<float>(rng.uniform(0.0, 1.0));
    for (auto _ : state) benchmark::DoNotOptimize(infer::fuse_majority(p[0], p[1], p[2]));
}
BENCHMARK(BM_FuseMajority)->Unit(benchmark::kMillisecond);

}  // namespace
