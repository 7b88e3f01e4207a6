#include <doctest.h>

#include "neurorefine/rng.hpp"
#include "neurorefine/synth.hpp"
#include "neurorefine/trainer.hpp"

#include <cmath>

using namespace nrf;

TEST_SUITE_BEGIN("trainer");

TEST_CASE("l2_mse_loss") {
    ParamRegistry empty;
    Vector a(2), b(2);
    a << 1.0, 2.0;
    b << 1.0, 2.0;
    CHECK(l2_mse_loss(a, b, empty, 0.0) == 0.0);

    b << 0.0, 1.0;  // diffs [1, 1]
    CHECK(l2_mse_loss(a, b, empty, 0.0) == doctest::Approx(1.0));

    // MSE 1.0 plus lambda 0.1 times sum-of-squares 4 -> 1.4
    Param p("theta", {2});
    p.value.data = {2.0, 0.0};  // sum of squares 4
    ParamRegistry reg;
    reg.add(&p);
    CHECK(l2_mse_loss(a, b, reg, 0.1) == doctest::Approx(1.4));

    Vector c(3);
    CHECK_THROWS_AS(l2_mse_loss(a, c, empty, 0.0), std::invalid_argument);
}

TEST_CASE("loss decomposition: adding lambda adds exactly lambda * sum theta^2") {
    Rng rng(8);
    Param p("theta", {16});
    for (double& v : p.value.data) v = rng.normal();
    ParamRegistry reg;
    reg.add(&p);
    for (int trial = 0; trial < 50; ++trial) {
        Vector x(5), y(5);
        for (int i = 0; i < 5; ++i) {
            x(i) = rng.normal();
            y(i) = rng.normal();
        }
        const double lambda = rng.uniform(0.0, 0.3);
        const double with = l2_mse_loss(x, y, reg, lambda);
        const double without = l2_mse_loss(x, y, reg, 0.0);
        const double expected = lambda * p.value.vec().squaredNorm();
        REQUIRE(std::abs((with - without) - expected) <= 1e-12 * std::max(1.0, std::abs(expected)));
    }
}

TEST_CASE("lr_at_step hand values") {
    CHECK(lr_at_step(0, 1000, 0.5, 0.1) == 0.0);
    CHECK(lr_at_step(100, 1000, 0.5, 0.1) == 0.5);           // warmup boundary
    CHECK(lr_at_step(550, 1000, 0.5, 0.1) == doctest::Approx(0.25));  // midpoint of decay
    CHECK(lr_at_step(1000, 1000, 0.5, 0.1) == 0.0);
    CHECK_THROWS_AS(lr_at_step(-1, 1000, 0.5, 0.1), std::out_of_range);
    CHECK_THROWS_AS(lr_at_step(1001, 1000, 0.5, 0.1), std::out_of_range);
}

TEST_CASE("lr schedule is continuous with a single peak at the warmup boundary") {
    const long total = 240;
    const double base = 1.0, frac = 0.1;
    const long warmup = std::lround(frac * total);
    double prev = lr_at_step(0, total, base, frac);
    int direction_changes = 0;
    bool rising = true;
    for (long s = 1; s <= total; ++s) {
        const double lr = lr_at_step(s, total, base, frac);
        REQUIRE(std::abs(lr - prev) <= base / std::min<long>(warmup, total - warmup) + 1e-12);  // no jumps
        if (rising && lr < prev) {
            rising = false;
            ++direction_changes;
            REQUIRE(s - 1 == warmup);  // the peak sits exactly at the boundary
        } else if (!rising) {
            REQUIRE(lr <= prev + 1e-15);
        }
        prev = lr;
    }
    CHECK(direction_changes == 1);
}

namespace {

struct TeacherSetup {
    ToyBackbone backbone;
    WindowedDataset data;
    EncodingHead head;
};

/// Noiseless linear-teacher problem: targets are exactly a linear readout of
/// the (frozen) head features, z-scored per voxel on the training split.
TeacherSetup make_teacher_setup(int n_trs, int n_voxels, int dim, int n, std::uint64_t seed,
                                double noise_std = 0.0) {
    const Waveform wav = gen_stimulus(n_trs * 1.5, seed);
    ToyBackbone backbone(ToyBackboneConfig::scaled(dim, 2, 2, derive_seed(seed, 1)));
    EncodingHeadConfig head_cfg;
    head_cfg.n = n;
    head_cfg.dim = dim;
    head_cfg.n_voxels = n_voxels;
    head_cfg.seed = derive_seed(seed, 2);
    EncodingHead head(head_cfg);

    Rng rng(derive_seed(seed, 3));
    Matrix w(dim, n_voxels);
    for (int i = 0; i < dim; ++i)
        for (int v = 0; v < n_voxels; ++v) w(i, v) = rng.normal(0.0, 0.5);

    DatasetSplit split = split_trs(n_trs, {0.8, 0.1, 0.1}, derive_seed(seed, 4));
    const TeacherBoldResult teacher =
        linear_teacher_bold(backbone, head, wav, n, w, noise_std, derive_seed(seed, 5), 1.5, split.train);
    const BoldSession standardized = zscore_per_voxel(teacher.session, split.train);
    WindowedDataset data = build_windowed_dataset(standardized, wav, n, split);
    return TeacherSetup{std::move(backbone), std::move(data), std::move(head)};
}

StageConfig stage1_fullbatch(int n_train, int epochs = 600, double lr = 0.15) {
    StageConfig cfg;
    cfg.stage = 1;
    cfg.epochs = epochs;
    cfg.base_lr = lr;
    cfg.batch_size = n_train;
    cfg.lambda = 0.0;
    cfg.seed = 13;
    return cfg;
}

}  // namespace

TEST_CASE("stage 1 on a noiseless linear teacher reaches tiny train MSE and obeys the freeze contract") {
    TeacherSetup setup = make_teacher_setup(40, 8, 12, 1, 101);
    EncodingModel model(setup.backbone, setup.head);
    const ParamSnapshot before = snapshot_params(model.all_params());

    const TrainRecord rec = run_stage(model, setup.data, stage1_fullbatch(static_cast<int>(setup.data.split.train.size())));
    CHECK(rec.final_train_mse < 1e-4);
    CHECK(model.stage1_done);

    // freeze contract: everything but head.linear.* is bit-identical
    const ParamSnapshot after = snapshot_params(model.all_params());
    bool linear_moved = false;
    for (const auto& e : after.entries) {
        const auto* b = before.find(e.name);
        REQUIRE(b != nullptr);
        if (e.name.rfind("head.linear.", 0) == 0) {
            if (e.values != b->values) linear_moved = true;
        } else {
            REQUIRE(e.values == b->values);
        }
    }
    CHECK(linear_moved);

    SUBCASE("val MSE is monotone non-increasing over the last half of training") {
        const std::size_t half = rec.val_mse.size() / 2;
        for (std::size_t e = half + 1; e < rec.val_mse.size(); ++e)
            REQUIRE(rec.val_mse[e] <= rec.val_mse[e - 1] + 1e-6);
    }
}

TEST_CASE("stage 2 freezes the linear head and stage order is enforced") {
    TeacherSetup setup = make_teacher_setup(24, 4, 8, 1, 55);
    EncodingModel model(setup.backbone, setup.head);

    StageConfig s2;
    s2.stage = 2;
    s2.epochs = 2;
    s2.base_lr = 1e-4;
    s2.batch_size = 8;
    s2.seed = 3;
    CHECK_THROWS_WITH_AS(run_stage(model, setup.data, s2), doctest::Contains("stage 2"), std::logic_error);

    StageConfig s1 = stage1_fullbatch(static_cast<int>(setup.data.split.train.size()), 30, 0.1);
    run_stage(model, setup.data, s1);
    const ParamSnapshot after1 = snapshot_params(model.all_params());

    run_stage(model, setup.data, s2);
    const ParamSnapshot after2 = snapshot_params(model.all_params());
    bool backbone_moved = false;
    for (const auto& e : after2.entries) {
        const auto* b = after1.find(e.name);
        REQUIRE(b != nullptr);
        if (e.name.rfind("head.linear.", 0) == 0)
            REQUIRE(e.values == b->values);  // frozen in stage 2
        else if (e.values != b->values)
            backbone_moved = true;
    }
    CHECK(backbone_moved);
}

TEST_CASE("empty split partitions are rejected") {
    TeacherSetup setup = make_teacher_setup(24, 4, 8, 1, 56);
    EncodingModel model(setup.backbone, setup.head);
    WindowedDataset broken = setup.data;
    broken.split.val.clear();
    StageConfig s1 = stage1_fullbatch(8, 2, 0.1);
    CHECK_THROWS_WITH_AS(run_stage(model, broken, s1), doctest::Contains("empty"), std::invalid_argument);
}

TEST_CASE("run_stage is deterministic under a fixed config") {
    TeacherSetup a = make_teacher_setup(24, 4, 8, 1, 77);
    TeacherSetup b = make_teacher_setup(24, 4, 8, 1, 77);
    EncodingModel ma(a.backbone, a.head), mb(b.backbone, b.head);
    StageConfig s1 = stage1_fullbatch(static_cast<int>(a.data.split.train.size()), 20, 0.1);
    s1.batch_size = 8;  // exercise mini-batch shuffling too
    const TrainRecord ra = run_stage(ma, a.data, s1);
    const TrainRecord rb = run_stage(mb, b.data, s1);
    CHECK(ra.train_loss == rb.train_loss);
    CHECK(ra.val_mse == rb.val_mse);
    CHECK(snapshots_equal(snapshot_params(ma.all_params()), snapshot_params(mb.all_params())));
}

TEST_CASE("adam optimizer variant also trains and stays deterministic") {
    TeacherSetup a = make_teacher_setup(24, 4, 8, 1, 78);
    EncodingModel model(a.backbone, a.head);
    StageConfig s1 = stage1_fullbatch(static_cast<int>(a.data.split.train.size()), 40, 0.05);
    s1.optimizer = StageConfig::Optimizer::Adam;
    const TrainRecord rec = run_stage(model, a.data, s1);
    CHECK(rec.train_mse.back() < rec.train_mse.front());
}

TEST_CASE("tune_lambda") {
    SUBCASE("default grid yields one report row per lambda") {
        const std::vector<double> grid{1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
        const LambdaReport r = tune_lambda(grid, [](double lambda) { return lambda; });
        CHECK(r.rows.size() == 5u);
        CHECK(r.best_lambda == 1e-3);
    }
    SUBCASE("single-element grid returns that lambda") {
        const LambdaReport r = tune_lambda({3e-2}, [](double) { return 1.0; });
        CHECK(r.best_lambda == 3e-2);
    }
    SUBCASE("ties break toward the larger lambda") {
        const LambdaReport r = tune_lambda({1e-3, 1e-2, 1e-1}, [](double) { return 0.5; });
        CHECK(r.best_lambda == 1e-1);
    }
    SUBCASE("all-NaN validation losses are an error") {
        CHECK_THROWS_AS(tune_lambda({1e-3, 1e-2}, [](double) { return std::nan(""); }),
                        std::runtime_error);
    }
    SUBCASE("on a noiseless realizable target, larger lambda strictly hurts") {
        TeacherSetup setup = make_teacher_setup(30, 4, 8, 1, 91);
        const LambdaReport r = tune_lambda({1e-3, 1e-2, 1e-1}, [&](double lambda) {
            EncodingModel trial(setup.backbone, setup.head);
            StageConfig cfg = stage1_fullbatch(static_cast<int>(setup.data.split.train.size()), 150, 0.15);
            cfg.lambda = lambda;
            return run_stage(trial, setup.data, cfg).best_val_mse;
        });
        CHECK(r.best_lambda == 1e-3);
        CHECK(r.rows[0].val_mse < r.rows[2].val_mse);
    }
}

TEST_CASE("refine runs both stages, keeps both freeze contracts, and is reproducible") {
    TeacherSetup setup = make_teacher_setup(24, 4, 8, 1, 42);
    RefineConfig cfg;
    cfg.stage1.epochs = 25;
    cfg.stage1.base_lr = 0.1;
    cfg.stage1.batch_size = 19;
    cfg.stage1.lambda = 0.0;
    cfg.stage2.epochs = 3;
    cfg.stage2.base_lr = 1e-4;
    cfg.stage2.batch_size = 8;
    cfg.stage2.lambda = 0.0;
    cfg.head_seed = derive_seed(42, 2);

    const RefineResult r1 = refine(setup.backbone, setup.data, cfg);
    const RefineResult r2 = refine(setup.backbone, setup.data, cfg);
    CHECK(snapshots_equal(r1.snap_stage2, r2.snap_stage2));

    for (const auto& e : r1.snap_stage1.entries) {
        const auto* v = r1.snap_vanilla.find(e.name);
        REQUIRE(v != nullptr);
        if (e.name.rfind("head.linear.", 0) != 0) REQUIRE(e.values == v->values);
    }
    for (const auto& e : r1.snap_stage2.entries)
        if (e.name.rfind("head.linear.", 0) == 0) REQUIRE(e.values == r1.snap_stage1.find(e.name)->values);
}

TEST_SUITE_END();
