#include <doctest.h>

#include "neurorefine/encoding_head.hpp"
#include "neurorefine/ridge.hpp"
#include "neurorefine/rng.hpp"
#include "neurorefine/stats.hpp"
#include "neurorefine/synth.hpp"
#include "neurorefine/toy_backbone.hpp"

#include <algorithm>
#include <cmath>

using namespace nrf;

TEST_SUITE_BEGIN("synth");

TEST_CASE("double-gamma HRF timing") {
    HrfParams params;  // peak 5.5 s, dt 0.1 s
    const std::vector<double> h = double_gamma_hrf(params);

    CHECK(h.size() == static_cast<std::size_t>(params.duration_seconds / params.dt) + 1);
    CHECK(h[0] == 0.0);
    CHECK(*std::max_element(h.begin(), h.end()) == doctest::Approx(1.0));

    const auto argmax = std::max_element(h.begin(), h.end()) - h.begin();
    const double t_peak = static_cast<double>(argmax) * params.dt;
    CHECK(t_peak >= 5.0);
    CHECK(t_peak <= 6.0);
    CHECK(std::abs(t_peak - params.peak_seconds) <= params.dt + 1e-12);

    SUBCASE("single global maximum, finite everywhere") {
        int maxima = 0;
        for (std::size_t i = 1; i + 1 < h.size(); ++i) {
            REQUIRE(std::isfinite(h[i]));
            if (h[i] > h[i - 1] && h[i] > h[i + 1]) ++maxima;
        }
        CHECK(maxima == 1);
    }
    SUBCASE("invalid parameters") {
        HrfParams bad = params;
        bad.undershoot_seconds = 4.0;  // below peak
        CHECK_THROWS_AS(double_gamma_hrf(bad), std::invalid_argument);
        bad = params;
        bad.dt = 0.0;
        CHECK_THROWS_AS(double_gamma_hrf(bad), std::invalid_argument);
    }
}

TEST_CASE("gen_stimulus determinism and bounds") {
    const Waveform a = gen_stimulus(15.0, 11);
    const Waveform b = gen_stimulus(15.0, 11);
    CHECK(a.samples.size() == 240000u);
    CHECK(a.samples == b.samples);  // bit-identical
    CHECK(gen_stimulus(15.0, 12).samples != a.samples);

    double peak = 0.0, rms = 0.0;
    for (float s : a.samples) {
        peak = std::max(peak, std::abs(static_cast<double>(s)));
        rms += static_cast<double>(s) * s;
    }
    rms = std::sqrt(rms / static_cast<double>(a.samples.size()));
    CHECK(peak <= 1.0);
    CHECK(rms > 0.0);
    CHECK(rms < 1.0);

    CHECK_THROWS_AS(gen_stimulus(-1.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(gen_stimulus(1.0, 0), std::invalid_argument);  // not a whole TR count
}

TEST_CASE("synth_bold_hrf is a noiseless linear readout of its feature matrix") {
    SynthSpec spec;
    spec.n_trs = 60;
    spec.n_voxels = 8;
    spec.noise_std = 0.0;
    spec.seed = 21;
    const Waveform wav = gen_stimulus(spec.n_trs * 1.5, spec.seed);
    const SynthBoldResult r = synth_bold_hrf(wav, spec, double_gamma_hrf(HrfParams{}));

    CHECK(r.session.n_trs() == 60);
    CHECK(r.session.n_voxels() == 8);
    CHECK(r.features.rows() == 60);

    // closed-form least squares on the returned features has ~zero residual
    for (int v = 0; v < spec.n_voxels; ++v) {
        const Vector y = r.session.bold.col(v).cast<double>();
        const Vector w = fit_ridge(r.features, y, 0.0);
        const double resid = (r.features * w - y).norm();
        CHECK(resid < 1e-4);  // float32 storage of the targets bounds this
        CHECK(w(0) == doctest::Approx(r.readout(0, v)).epsilon(1e-4));
    }
}

TEST_CASE("synth_bold_hrf noiseless ridge recovery: held-out PCC >= 0.999 per voxel") {
    SynthSpec spec;
    spec.n_trs = 80;
    spec.n_voxels = 8;
    spec.noise_std = 0.0;
    spec.seed = 5;
    const Waveform wav = gen_stimulus(spec.n_trs * 1.5, spec.seed);
    const SynthBoldResult r = synth_bold_hrf(wav, spec, double_gamma_hrf(HrfParams{}));

    const DatasetSplit split = split_trs(spec.n_trs, {0.8, 0.1, 0.1}, 1);
    Matrix x_train(static_cast<Eigen::Index>(split.train.size()), 1);
    for (std::size_t i = 0; i < split.train.size(); ++i) x_train(static_cast<Eigen::Index>(i), 0) = r.features(split.train[i], 0);
    for (int v = 0; v < spec.n_voxels; ++v) {
        Vector y_train(static_cast<Eigen::Index>(split.train.size()));
        for (std::size_t i = 0; i < split.train.size(); ++i) y_train(static_cast<Eigen::Index>(i)) = r.session.bold(split.train[i], v);
        const Vector w = fit_ridge(x_train, y_train, 1e-8);
        Vector pred(static_cast<Eigen::Index>(split.test.size())), y_test(static_cast<Eigen::Index>(split.test.size()));
        for (std::size_t i = 0; i < split.test.size(); ++i) {
            pred(static_cast<Eigen::Index>(i)) = r.features(split.test[i], 0) * w(0);
            y_test(static_cast<Eigen::Index>(i)) = r.session.bold(split.test[i], v);
        }
        CHECK(std::abs(pcc(pred, y_test)) >= 0.999);
    }
}

TEST_CASE("synth_bold_hrf with zero readout and unit noise has no signal") {
    SynthSpec spec;
    spec.n_trs = 80;
    spec.n_voxels = 64;
    spec.noise_std = 1.0;
    spec.seed = 17;
    const Waveform wav = gen_stimulus(spec.n_trs * 1.5, spec.seed);
    SynthBoldResult r = synth_bold_hrf(wav, spec, double_gamma_hrf(HrfParams{}));
    // impose the all-zero readout: targets become pure noise
    for (int v = 0; v < spec.n_voxels; ++v)
        for (int t = 0; t < spec.n_trs; ++t)
            r.session.bold(t, v) -= static_cast<float>(r.features(t, 0) * r.readout(0, v));

    const DatasetSplit split = split_trs(spec.n_trs, {0.8, 0.1, 0.1}, 2);
    Matrix x_train(static_cast<Eigen::Index>(split.train.size()), 1);
    for (std::size_t i = 0; i < split.train.size(); ++i) x_train(static_cast<Eigen::Index>(i), 0) = r.features(split.train[i], 0);
    double mean_pcc = 0.0;
    for (int v = 0; v < spec.n_voxels; ++v) {
        Vector y_train(static_cast<Eigen::Index>(split.train.size()));
        for (std::size_t i = 0; i < split.train.size(); ++i) y_train(static_cast<Eigen::Index>(i)) = r.session.bold(split.train[i], v);
        const Vector w = fit_ridge(x_train, y_train, 1e-2);
        Vector pred(static_cast<Eigen::Index>(split.test.size())), y_test(static_cast<Eigen::Index>(split.test.size()));
        for (std::size_t i = 0; i < split.test.size(); ++i) {
            pred(static_cast<Eigen::Index>(i)) = r.features(split.test[i], 0) * w(0);
            y_test(static_cast<Eigen::Index>(i)) = r.session.bold(split.test[i], v);
        }
        mean_pcc += pcc(pred, y_test);
    }
    mean_pcc /= spec.n_voxels;
    CHECK(std::abs(mean_pcc) < 0.1);
}

TEST_CASE("synth_bold_hrf shape errors and determinism") {
    SynthSpec spec;
    spec.n_trs = 16;
    spec.n_voxels = 3;
    spec.seed = 9;
    const Waveform wav = gen_stimulus(spec.n_trs * 1.5, 1);
    Waveform wrong = wav;
    wrong.samples.pop_back();
    CHECK_THROWS_AS(synth_bold_hrf(wrong, spec, double_gamma_hrf(HrfParams{})), std::invalid_argument);

    const SynthBoldResult a = synth_bold_hrf(wav, spec, double_gamma_hrf(HrfParams{}));
    const SynthBoldResult b = synth_bold_hrf(wav, spec, double_gamma_hrf(HrfParams{}));
    CHECK(a.session.bold == b.session.bold);
}

TEST_CASE("linear_teacher_bold is exactly the head features times the true weights") {
    const int n_trs = 20, n = 2, V = 4, D = 16;
    const Waveform wav = gen_stimulus(n_trs * 1.5, 3);
    ToyBackbone backbone(ToyBackboneConfig::scaled(D, 2, 4, 77));
    EncodingHeadConfig head_cfg;
    head_cfg.n = n;
    head_cfg.dim = D;
    head_cfg.n_voxels = V;
    EncodingHead head(head_cfg);

    Matrix w(D, V);
    Rng rng(4);
    for (int i = 0; i < D; ++i)
        for (int v = 0; v < V; ++v) w(i, v) = rng.normal();

    const TeacherBoldResult r = linear_teacher_bold(backbone, head, wav, n, w, 0.0, 12);
    CHECK(r.session.n_trs() == n_trs);
    CHECK(r.session.n_voxels() == V);
    const Matrix clean = r.features * w;
    for (int t = 0; t < n_trs; ++t)
        for (int v = 0; v < V; ++v)
            CHECK(r.session.bold(t, v) == doctest::Approx(clean(t, v)).epsilon(1e-5));

    SUBCASE("zero weights give all-zero BOLD") {
        EncodingHead head2(head_cfg);
        const TeacherBoldResult z = linear_teacher_bold(backbone, head2, wav, n, Matrix::Zero(D, V), 0.0, 12);
        CHECK(z.session.bold.cwiseAbs().maxCoeff() == 0.0f);
    }
    SUBCASE("deterministic in seed") {
        EncodingHead head2(head_cfg);
        const TeacherBoldResult r2 = linear_teacher_bold(backbone, head2, wav, n, w, 0.5, 12);
        EncodingHead head3(head_cfg);
        const TeacherBoldResult r3 = linear_teacher_bold(backbone, head3, wav, n, w, 0.5, 12);
        CHECK(r2.session.bold == r3.session.bold);
    }
    SUBCASE("dimension mismatch is an error") {
        EncodingHead head2(head_cfg);
        CHECK_THROWS_WITH_AS(linear_teacher_bold(backbone, head2, wav, n, Matrix::Zero(D + 1, V), 0.0, 12),
                             doctest::Contains("rows"), std::invalid_argument);
    }
}

TEST_SUITE_END();
