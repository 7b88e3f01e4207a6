#include <doctest.h>

#include "neurorefine/neuro_eval.hpp"
#include "neurorefine/ridge.hpp"
#include "neurorefine/rng.hpp"
#include "neurorefine/stats.hpp"
#include "neurorefine/synth.hpp"

#include <cmath>

using namespace nrf;

TEST_SUITE_BEGIN("neuro_eval");

TEST_CASE("fit_ridge closed form") {
    SUBCASE("hand value: X=[[1],[2]], y=[1,2], alpha=1 -> 5/6") {
        Matrix x(2, 1);
        x << 1.0, 2.0;
        Vector y(2);
        y << 1.0, 2.0;
        CHECK(fit_ridge(x, y, 1.0)(0) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    }
    SUBCASE("alpha = 0 interpolates square invertible systems") {
        Rng rng(3);
        Matrix x(5, 5);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) x(i, j) = rng.normal() + (i == j ? 3.0 : 0.0);
        Vector y(5);
        for (int i = 0; i < 5; ++i) y(i) = rng.normal();
        const Vector w = fit_ridge(x, y, 0.0);
        CHECK((x * w - y).lpNorm<Eigen::Infinity>() < 1e-10);
    }
    SUBCASE("huge alpha shrinks the solution to ~zero") {
        Rng rng(4);
        Matrix x(20, 3);
        Vector y(20);
        for (int i = 0; i < 20; ++i) {
            y(i) = rng.normal();
            for (int j = 0; j < 3; ++j) x(i, j) = rng.normal();
        }
        CHECK(fit_ridge(x, y, 1e12).norm() < 1e-6);
    }
    SUBCASE("singular system at alpha = 0 is an error") {
        Matrix x(3, 2);
        x << 1.0, 2.0, 2.0, 4.0, 3.0, 6.0;  // rank 1
        Vector y(3);
        y << 1.0, 2.0, 3.0;
        CHECK_THROWS_WITH_AS(fit_ridge(x, y, 0.0), doctest::Contains("singular"), std::runtime_error);
    }
}

TEST_CASE("closed-form ridge agrees with a gradient-descent oracle") {
    Rng rng(11);
    for (int instance = 0; instance < 20; ++instance) {
        Matrix x(20, 5);
        Vector y(20);
        for (int i = 0; i < 20; ++i) {
            y(i) = rng.normal();
            for (int j = 0; j < 5; ++j) x(i, j) = rng.normal();
        }
        const double alpha = std::pow(10.0, rng.uniform(-0.3, 0.7));
        const Vector closed = fit_ridge(x, y, alpha);

        // oracle: plain gradient descent on ||Xw - y||^2 + alpha ||w||^2
        const Matrix h = 2.0 * (x.transpose() * x + alpha * Matrix::Identity(5, 5));
        const double lr = 0.9 / h.cwiseAbs().rowwise().sum().maxCoeff();  // 1/Gershgorin bound
        Vector w = Vector::Zero(5);
        for (int it = 0; it < 60000; ++it) {
            const Vector grad = 2.0 * (x.transpose() * (x * w - y)) + 2.0 * alpha * w;
            w -= lr * grad;
        }
        REQUIRE((w - closed).norm() / closed.norm() < 1e-6);
    }
}

TEST_CASE("pcc") {
    Vector x(3), y(3);
    x << 1.0, 2.0, 3.0;
    y << 1.0, 2.0, 3.0;
    CHECK(pcc(x, y) == doctest::Approx(1.0));
    CHECK(pcc(x, (-x).eval()) == doctest::Approx(-1.0));
    y << 1.0, 2.0, 4.0;
    CHECK(pcc(x, y) == doctest::Approx(0.9820).epsilon(1e-4));

    Vector c = Vector::Constant(3, 2.0);
    CHECK_THROWS_WITH_AS(pcc(x, c), doctest::Contains("constant"), std::invalid_argument);
    Vector one(1);
    one << 1.0;
    CHECK_THROWS_AS(pcc(one, one), std::invalid_argument);
}

TEST_CASE("pcc is invariant under positive affine transforms") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        Vector x(12), y(12);
        for (int i = 0; i < 12; ++i) {
            x(i) = rng.normal();
            y(i) = rng.normal();
        }
        const double base = pcc(x, y);
        const double a = rng.uniform(0.1, 5.0), b = rng.uniform(-3.0, 3.0);
        const double c = rng.uniform(0.1, 5.0), d = rng.uniform(-3.0, 3.0);
        REQUIRE(std::abs(pcc((a * x.array() + b).matrix(), (c * y.array() + d).matrix()) - base) < 1e-10);
    }
}

TEST_CASE("paired t-test") {
    Vector a(3), b(3);
    a << 2.0, 4.0, 6.0;
    b << 1.0, 2.0, 3.0;  // diffs [1, 2, 3]
    const TTestResult r = paired_t_test_one_tailed(a, b);
    CHECK(r.t == doctest::Approx(3.4641).epsilon(1e-4));
    CHECK(r.df == 2);
    CHECK(r.n == 3);
    CHECK(r.p == doctest::Approx(0.0371).epsilon(0.03));

    SUBCASE("swapping the arguments negates t") {
        const TTestResult s = paired_t_test_one_tailed(b, a);
        CHECK(s.t == doctest::Approx(-r.t));
        CHECK(s.p == doctest::Approx(1.0 - r.p).epsilon(1e-9));
    }
    SUBCASE("constant shift has zero variance and errors") {
        const Vector shifted = (b.array() + 2.0).matrix();
        CHECK_THROWS_WITH_AS(paired_t_test_one_tailed(shifted, b), doctest::Contains("zero variance"),
                             std::invalid_argument);
    }
    SUBCASE("fewer than 2 pairs is an error") {
        Vector one(1);
        one << 1.0;
        CHECK_THROWS_AS(paired_t_test_one_tailed(one, one), std::invalid_argument);
    }
}

namespace {

struct PlantedProblem {
    ToyBackbone backbone;
    std::vector<StimulusWindow> windows;
    std::vector<Matrix> features;  // per layer
    DatasetSplit split;
};

PlantedProblem make_planted_problem(int n_trs, std::uint64_t seed) {
    const Waveform wav = gen_stimulus(n_trs * 1.5, seed);
    ToyBackbone backbone(ToyBackboneConfig::scaled(24, 4, 4, derive_seed(seed, 9)));
    std::vector<StimulusWindow> windows;
    windows.reserve(static_cast<std::size_t>(n_trs));
    for (int t = 0; t < n_trs; ++t) windows.push_back(assemble_window(wav, t, 1, 1.5, n_trs));
    std::vector<Matrix> features = window_features(backbone, windows);
    DatasetSplit split = split_trs(n_trs, {0.8, 0.1, 0.1}, derive_seed(seed, 10));
    return PlantedProblem{std::move(backbone), std::move(windows), std::move(features), std::move(split)};
}

Matrix planted_targets(const Matrix& layer_features, int n_voxels, std::uint64_t seed) {
    Rng rng(seed);
    Matrix readout(layer_features.cols(), n_voxels);
    for (Eigen::Index i = 0; i < readout.rows(); ++i)
        for (Eigen::Index j = 0; j < readout.cols(); ++j) readout(i, j) = rng.normal();
    return layer_features * readout;
}

}  // namespace

TEST_CASE("planted-layer recovery: argmax layer matches the source of the targets") {
    PlantedProblem prob = make_planted_problem(90, 17);
    for (int planted : {1, 2, 3}) {
        const Matrix bold = planted_targets(prob.features[static_cast<std::size_t>(planted)], 12,
                                            derive_seed(17, static_cast<std::uint64_t>(planted)));
        const EncodingScoreReport report =
            layerwise_encoding_scores(prob.backbone, prob.windows, bold, prob.split);
        int argmax = 0;
        for (int l = 1; l < report.n_layers(); ++l)
            if (report.mean_pcc[static_cast<std::size_t>(l)] > report.mean_pcc[static_cast<std::size_t>(argmax)])
                argmax = l;
        CAPTURE(planted);
        CHECK(argmax == planted);
        CHECK(report.mean_pcc[static_cast<std::size_t>(planted)] > 0.99);
    }
}

TEST_CASE("pure-noise targets have near-zero mean encoding PCC") {
    PlantedProblem prob = make_planted_problem(90, 23);
    Rng rng(99);
    Matrix noise(90, 64);
    for (Eigen::Index i = 0; i < noise.rows(); ++i)
        for (Eigen::Index j = 0; j < noise.cols(); ++j) noise(i, j) = rng.normal();
    const EncodingScoreReport report = layerwise_encoding_scores(prob.backbone, prob.windows, noise, prob.split);
    for (double m : report.mean_pcc) CHECK(std::abs(m) < 0.1);
}

TEST_CASE("targets duplicated as features score PCC ~ 1") {
    Rng rng(31);
    Matrix targets(60, 6);
    for (Eigen::Index i = 0; i < targets.rows(); ++i)
        for (Eigen::Index j = 0; j < targets.cols(); ++j) targets(i, j) = rng.normal();
    const DatasetSplit split = split_trs(60, {0.8, 0.1, 0.1}, 4);
    const EncodingScoreReport report = encoding_scores_from_features({targets}, targets, split);
    CHECK(report.mean_pcc[0] > 0.999);
}

TEST_CASE("encoding scores are independent per voxel: serial == parallel, order-invariant") {
    PlantedProblem prob = make_planted_problem(60, 29);
    const Matrix bold = planted_targets(prob.features[2], 10, 5);

    RidgeOptions serial;
    RidgeOptions parallel;
    parallel.n_threads = 4;
    const EncodingScoreReport a = encoding_scores_from_features(prob.features, bold, prob.split, serial);
    const EncodingScoreReport b = encoding_scores_from_features(prob.features, bold, prob.split, parallel);
    CHECK(a.pcc == b.pcc);
    CHECK(a.alpha == b.alpha);

    // permute voxels: per-voxel results move with their columns
    std::vector<int> perm{9, 0, 7, 1, 8, 2, 6, 3, 5, 4};
    Matrix permuted(bold.rows(), bold.cols());
    for (int v = 0; v < 10; ++v) permuted.col(v) = bold.col(perm[static_cast<std::size_t>(v)]);
    const EncodingScoreReport c = encoding_scores_from_features(prob.features, permuted, prob.split, serial);
    for (int l = 0; l < a.n_layers(); ++l)
        for (int v = 0; v < 10; ++v)
            REQUIRE(c.pcc[static_cast<std::size_t>(l)][static_cast<std::size_t>(v)] ==
                    doctest::Approx(a.pcc[static_cast<std::size_t>(l)][static_cast<std::size_t>(perm[static_cast<std::size_t>(v)])])
                        .epsilon(1e-12));
}

TEST_CASE("degenerate splits are rejected") {
    PlantedProblem prob = make_planted_problem(60, 41);
    const Matrix bold = planted_targets(prob.features[1], 4, 6);
    DatasetSplit bad = prob.split;
    bad.val.resize(1);
    CHECK_THROWS_WITH_AS(encoding_scores_from_features(prob.features, bold, bad), doctest::Contains("degenerate"),
                         std::invalid_argument);
}

namespace {

/// Every layer (latents included) returns the same matrix.
class IdenticalLayersBackbone final : public SpeechBackbone {
public:
    explicit IdenticalLayersBackbone(int layers) : layers_(layers) {}
    int num_layers() const override { return layers_; }
    int dim() const override { return 5; }
    const ParamRegistry& params() const override { return registry_; }
    ParamRegistry& params() override { return registry_; }
    std::vector<Matrix> layer_activations(std::span<const float> waveform) const override {
        const int frames = expected_frame_count(waveform.size());
        Matrix m(frames, 5);
        for (int f = 0; f < frames; ++f) {
            double energy = 0.0;
            for (int i = 0; i < kSamplesPerFrame; ++i) {
                const double s = waveform[static_cast<std::size_t>(f * kSamplesPerFrame + i)];
                energy += s * s;
            }
            for (int c = 0; c < 5; ++c) m(f, c) = energy * (1.0 + c);
        }
        return std::vector<Matrix>(static_cast<std::size_t>(layers_) + 1, m);
    }

private:
    int layers_;
    ParamRegistry registry_;
};

std::vector<StimulusWindow> stimulus_windows(int n_trs, std::uint64_t seed) {
    const Waveform wav = gen_stimulus(n_trs * 1.5, seed);
    std::vector<StimulusWindow> windows;
    for (int t = 0; t < n_trs; ++t) windows.push_back(assemble_window(wav, t, 1, 1.5, n_trs));
    return windows;
}

}  // namespace

TEST_CASE("probe layer weights form a probability vector") {
    const auto windows = stimulus_windows(40, 61);
    const auto labels = energy_class_labels(windows, 3);
    ToyBackbone bb(ToyBackboneConfig::scaled(16, 2, 2, 7));
    const auto weights = probe_layer_weights(bb, windows, labels, 3);
    CHECK(weights.size() == 3u);  // latents + 2 layers
    double sum = 0.0;
    for (double w : weights) {
        CHECK(w >= 0.0);
        sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("probe on a single-layer backbone returns weight [1.0]") {
    const auto windows = stimulus_windows(30, 62);
    const auto labels = energy_class_labels(windows, 2);
    IdenticalLayersBackbone bb(0);  // latents only
    const auto weights = probe_layer_weights(bb, windows, labels, 2);
    REQUIRE(weights.size() == 1u);
    CHECK(weights[0] == doctest::Approx(1.0));
}

TEST_CASE("identical layer outputs keep the probe weights near-uniform") {
    const auto windows = stimulus_windows(40, 63);
    const auto labels = energy_class_labels(windows, 3);
    IdenticalLayersBackbone bb(3);
    const auto weights = probe_layer_weights(bb, windows, labels, 3);
    REQUIRE(weights.size() == 4u);
    const auto [mn, mx] = std::minmax_element(weights.begin(), weights.end());
    CHECK(*mx - *mn < 0.1);
}

TEST_CASE("layer weight change rates") {
    CHECK(layer_weight_change_rate({0.5, 0.5}, {0.5, 0.5}) ==
          std::vector<std::optional<double>>{0.0, 0.0});
    const auto rates = layer_weight_change_rate({0.2, 0.5}, {0.3, 0.25});
    CHECK(rates[0].value() == doctest::Approx(0.5));
    CHECK(rates[1].value() == doctest::Approx(-0.5));

    const auto undef = layer_weight_change_rate({0.0, 1.0}, {0.5, 0.5});
    CHECK_FALSE(undef[0].has_value());
    CHECK(undef[1].value() == doctest::Approx(-0.5));

    CHECK_THROWS_AS(layer_weight_change_rate({0.5}, {0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("energy labels are balanced quantile bins") {
    const auto windows = stimulus_windows(30, 64);
    const auto labels = energy_class_labels(windows, 3);
    std::array<int, 3> counts{};
    for (int c : labels) counts[static_cast<std::size_t>(c)]++;
    for (int c : counts) CHECK(c == 10);
}

TEST_SUITE_END();
