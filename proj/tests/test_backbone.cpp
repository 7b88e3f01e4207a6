#include <doctest.h>

#include "neurorefine/backbone.hpp"
#include "neurorefine/checkpoint.hpp"
#include "neurorefine/conformance.hpp"
#include "neurorefine/rng.hpp"
#include "neurorefine/toy_backbone.hpp"

#include <cmath>
#include <filesystem>

using namespace nrf;

TEST_SUITE_BEGIN("backbone");

namespace {

ToyBackbone tiny_backbone(std::uint64_t seed = 123) {
    return ToyBackbone(ToyBackboneConfig::scaled(16, 2, 4, seed));
}

std::vector<float> random_wave(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> wav(n);
    for (auto& s : wav) s = static_cast<float>(rng.uniform(-0.5, 0.5));
    return wav;
}

/// Parameter-free adapter used to show the conformance suite is not tied to
/// ToyBackbone: layer l's frame features are block statistics of the input.
class BlockStatsBackbone final : public SpeechBackbone {
public:
    int num_layers() const override { return 3; }
    int dim() const override { return 6; }
    const ParamRegistry& params() const override { return registry_; }
    ParamRegistry& params() override { return registry_; }

    std::vector<Matrix> layer_activations(std::span<const float> waveform) const override {
        const int frames = expected_frame_count(waveform.size());
        std::vector<Matrix> acts;
        for (int l = 0; l <= num_layers(); ++l) {
            Matrix m(frames, dim());
            for (int f = 0; f < frames; ++f) {
                double mean = 0.0, energy = 0.0;
                for (int i = 0; i < kSamplesPerFrame; ++i) {
                    const double s = waveform[static_cast<std::size_t>(f * kSamplesPerFrame + i)];
                    mean += s;
                    energy += s * s;
                }
                mean /= kSamplesPerFrame;
                energy /= kSamplesPerFrame;
                for (int c = 0; c < dim(); ++c)
                    m(f, c) = (c % 2 == 0 ? mean : energy) * (1.0 + 0.25 * l) + 0.01 * c;
            }
            acts.push_back(std::move(m));
        }
        return acts;
    }

private:
    ParamRegistry registry_;
};

}  // namespace

TEST_CASE("frame-count law: 9 s -> 450 frames, 1.5 s -> 75 frames") {
    const ToyBackbone bb = tiny_backbone();
    const auto acts9 = bb.layer_activations(random_wave(144000, 1));
    CHECK(acts9.size() == 3u);  // latents + 2 layers
    for (const auto& a : acts9) {
        CHECK(a.rows() == 450);
        CHECK(a.cols() == 16);
    }
    const auto acts15 = bb.layer_activations(random_wave(24000, 2));
    for (const auto& a : acts15) CHECK(a.rows() == 75);
}

TEST_CASE("frame-count law holds for random lengths; short inputs are errors") {
    const ToyBackbone bb = tiny_backbone();
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 320 + static_cast<std::size_t>(rng.below(40000));
        const auto acts = extract_layer_activations(bb, std::span<const float>(random_wave(n, trial)));
        for (const auto& a : acts) REQUIRE(a.rows() == static_cast<Eigen::Index>(n / 320));
    }
    CHECK_THROWS_WITH_AS(bb.layer_activations(random_wave(100, 0)), doctest::Contains("too short"),
                         std::invalid_argument);

    Waveform w;
    w.sample_rate = 8000;
    w.samples = random_wave(16000, 3);
    CHECK_THROWS_WITH_AS(extract_layer_activations(bb, w), doctest::Contains("16000"), std::invalid_argument);
}

TEST_CASE("forward is deterministic given parameters and input") {
    const ToyBackbone bb = tiny_backbone();
    const auto wav = random_wave(24000, 5);
    const auto a = bb.layer_activations(wav);
    const auto b = bb.layer_activations(wav);
    for (std::size_t l = 0; l < a.size(); ++l) CHECK(a[l] == b[l]);
}

TEST_CASE("snapshots are isolated deep copies and cover the whole registry") {
    ToyBackbone bb = tiny_backbone();
    const ParamSnapshot before = snapshot_params(bb.params());
    CHECK(before.entries.size() == bb.params().size());
    for (const Param* p : bb.params().items()) {
        const auto* e = before.find(p->name);
        REQUIRE(e != nullptr);
        CHECK(e->shape == p->value.shape);
    }

    // mutate the model: the snapshot must not move
    bb.params().items()[0]->value.data[0] += 1.0;
    const ParamSnapshot after = snapshot_params(bb.params());
    CHECK_FALSE(snapshots_equal(before, after));

    restore_params(bb.params(), before);
    CHECK(snapshots_equal(before, snapshot_params(bb.params())));
}

TEST_CASE("param_change_pct") {
    ParamSnapshot before;
    before.entries.push_back({"w", {2}, {1.0, -1.0}});

    SUBCASE("identical snapshots change by 0%") {
        const auto changes = param_change_pct(before, before);
        CHECK(changes[0].pct == 0.0);
        CHECK(changes[0].defined);
    }
    SUBCASE("doubling changes by 100%") {
        ParamSnapshot after;
        after.entries.push_back({"w", {2}, {2.0, -2.0}});
        CHECK(param_change_pct(before, after)[0].pct == doctest::Approx(100.0));
    }
    SUBCASE("relative-L1 hand example: [1,-1] -> [1.5,-0.5] is 50%") {
        ParamSnapshot after;
        after.entries.push_back({"w", {2}, {1.5, -0.5}});
        CHECK(param_change_pct(before, after)[0].pct == doctest::Approx(50.0));
        // the alternative norm-ratio metric: ||[0.5,0.5]|| / ||[1,-1]|| = 0.5
        CHECK(param_change_pct(before, after, ChangeMetric::NormRatio)[0].pct == doctest::Approx(50.0));
    }
    SUBCASE("zero before-norm is flagged undefined") {
        ParamSnapshot zero;
        zero.entries.push_back({"w", {2}, {0.0, 0.0}});
        ParamSnapshot after;
        after.entries.push_back({"w", {2}, {1.0, 1.0}});
        const auto changes = param_change_pct(zero, after);
        CHECK_FALSE(changes[0].defined);
    }
    SUBCASE("mismatched names / shapes are errors") {
        ParamSnapshot other;
        other.entries.push_back({"v", {2}, {1.0, -1.0}});
        CHECK_THROWS_AS(param_change_pct(before, other), std::invalid_argument);
        ParamSnapshot shape;
        shape.entries.push_back({"w", {1, 2}, {1.0, -1.0}});
        CHECK_THROWS_AS(param_change_pct(before, shape), std::invalid_argument);
    }
}

TEST_CASE("Q/K/V parameters are individually addressable and grouped per layer") {
    ToyBackbone bb = tiny_backbone();
    for (int l = 0; l < bb.num_layers(); ++l) {
        for (const char* p : {"q_proj", "k_proj", "v_proj"}) {
            const std::string base = "encoder.layers." + std::to_string(l) + ".attn." + std::string(p);
            CHECK(bb.params().find(base + ".weight") != nullptr);
            CHECK(bb.params().find(base + ".bias") != nullptr);
        }
    }

    const ParamSnapshot before = snapshot_params(bb.params());
    // nudge layer 1's K bias only
    bb.params().find("encoder.layers.1.attn.k_proj.bias")->value.data[0] += 0.5;
    const auto report = attention_change_report(before, snapshot_params(bb.params()));
    CHECK(report.size() == 12u);  // 2 layers x {Q,K,V} x {weight,bias}
    for (const auto& row : report) {
        const bool nudged = row.layer == 1 && row.param == "K" && row.kind == "bias";
        if (nudged)
            CHECK(row.pct > 0.0);
        else
            CHECK(row.pct == 0.0);
    }
}

TEST_CASE("backbone backward matches central finite differences") {
    ToyBackbone bb(ToyBackboneConfig::scaled(8, 2, 2, 31));
    const auto wav = random_wave(960, 13);  // 3 frames

    // fixed linear functional of the final activations as the probe loss
    Rng rng(17);
    Matrix probe(3, 8);
    for (Eigen::Index i = 0; i < probe.rows(); ++i)
        for (Eigen::Index j = 0; j < probe.cols(); ++j) probe(i, j) = rng.normal();

    auto loss = [&]() { return (bb.final_layer_activations(wav).array() * probe.array()).sum(); };

    ToyBackbone::Cache cache;
    bb.forward_train(wav, cache);
    bb.params().zero_grad();
    bb.backward(probe, cache);

    const double h = 1e-5;
    int checked = 0;
    for (Param* p : bb.params().items()) {
        // probe a few entries of every tensor
        for (std::size_t k = 0; k < p->value.data.size(); k += std::max<std::size_t>(1, p->value.data.size() / 5)) {
            const double saved = p->value.data[k];
            p->value.data[k] = saved + h;
            const double up = loss();
            p->value.data[k] = saved - h;
            const double down = loss();
            p->value.data[k] = saved;
            const double fd = (up - down) / (2 * h);
            const double analytic = p->grad.data[k];
            const double err = std::abs(analytic - fd) / std::max({1e-4, std::abs(analytic), std::abs(fd)});
            if (err >= 1e-4) {
                CAPTURE(p->name);
                CAPTURE(k);
                CAPTURE(analytic);
                CAPTURE(fd);
            }
            REQUIRE(err < 1e-4);
            ++checked;
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("checkpoint round trip restores every parameter at float32 precision") {
    const ToyBackbone bb = tiny_backbone(55);
    Checkpoint ck;
    bb.save_into(ck);
    const auto path = std::filesystem::temp_directory_path() / "nrf_backbone_test.nrc";
    ck.save(path.string());
    const ToyBackbone loaded = ToyBackbone::from_checkpoint(Checkpoint::load(path.string()));
    std::filesystem::remove(path);

    CHECK(loaded.dim() == bb.dim());
    CHECK(loaded.num_layers() == bb.num_layers());
    for (std::size_t i = 0; i < bb.params().size(); ++i) {
        const Param* a = bb.params().at(i);
        const Param* b = loaded.params().at(i);
        REQUIRE(a->name == b->name);
        for (std::size_t k = 0; k < a->value.data.size(); ++k)
            REQUIRE(static_cast<float>(a->value.data[k]) == static_cast<float>(b->value.data[k]));
    }
}

TEST_CASE("interface conformance suite passes for ToyBackbone and a plain adapter") {
    ToyBackbone bb = tiny_backbone(2);
    CHECK_NOTHROW(run_backbone_conformance(bb, 1, 6));
    BlockStatsBackbone adapter;
    CHECK_NOTHROW(run_backbone_conformance(adapter, 1, 6));
}

TEST_CASE("copies train independently of the original") {
    ToyBackbone a = tiny_backbone(8);
    ToyBackbone b = a;
    b.params().items()[0]->value.data[0] += 1.0;
    CHECK(a.params().items()[0]->value.data[0] != b.params().items()[0]->value.data[0]);
    // registries point into their own storage
    CHECK(a.params().items()[0] != b.params().items()[0]);
}

TEST_SUITE_END();
