#include <benchmark/benchmark.h>

#include "neurorefine/encoding_head.hpp"
#include "neurorefine/ridge.hpp"
#include "neurorefine/rng.hpp"
#include "neurorefine/synth.hpp"
#include "neurorefine/toy_backbone.hpp"

using namespace nrf;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

void BM_RidgeMultiVoxel(benchmark::State& state) {
    const auto samples = static_cast<Eigen::Index>(state.range(0));
    const auto voxels = static_cast<Eigen::Index>(state.range(1));
    const Matrix x = random_matrix(samples, 64, 1);
    const Matrix y = random_matrix(samples, voxels, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(fit_ridge_multi(x, y, 1.0));
    }
    state.SetItemsProcessed(state.iterations() * voxels);
}
BENCHMARK(BM_RidgeMultiVoxel)->Args({832, 512})->Args({832, 2048})->Args({832, 5085});

void BM_BackboneForward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const ToyBackbone bb(ToyBackboneConfig::scaled(64, 4, 4, 3));
    Rng rng(4);
    std::vector<float> wav(static_cast<std::size_t>(n) * 24000);
    for (auto& s : wav) s = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (auto _ : state) {
        benchmark::DoNotOptimize(bb.final_layer_activations(wav));
    }
}
BENCHMARK(BM_BackboneForward)->Arg(1)->Arg(6);

void BM_HeadForwardBackward(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    EncodingHeadConfig cfg;
    cfg.n = n;
    cfg.dim = 64;
    cfg.n_voxels = 512;
    EncodingHead head(cfg);
    std::vector<Matrix> acts;
    for (int b = 0; b < 8; ++b) acts.push_back(random_matrix(75 * n, 64, static_cast<std::uint64_t>(b)));
    const Matrix targets = random_matrix(8, 512, 99);
    for (auto _ : state) {
        EncodingHead::Cache cache;
        const Matrix pred = head.forward_train(acts, cache);
        const Matrix d = (2.0 / (8 * 512)) * (pred - targets);
        benchmark::DoNotOptimize(head.backward(d, cache));
        head.params().zero_grad();
    }
}
BENCHMARK(BM_HeadForwardBackward)->Arg(1)->Arg(6);

void BM_HrfConvolution(benchmark::State& state) {
    SynthSpec spec;
    spec.n_trs = 1040;  // full-session scale
    spec.n_voxels = 64;
    spec.seed = 5;
    const Waveform wav = gen_stimulus(spec.n_trs * 1.5, spec.seed);
    const std::vector<double> hrf = double_gamma_hrf(HrfParams{});
    for (auto _ : state) {
        benchmark::DoNotOptimize(synth_bold_hrf(wav, spec, hrf));
    }
}
BENCHMARK(BM_HrfConvolution);

}  // namespace

BENCHMARK_MAIN();
