#include <doctest.h>

#include "neurorefine/checkpoint.hpp"
#include "neurorefine/encoding_head.hpp"
#include "neurorefine/rng.hpp"

#include <cmath>
#include <filesystem>

using namespace nrf;

TEST_SUITE_BEGIN("head");

TEST_CASE("conv_output_length") {
    CHECK(conv_output_length(450, 3, 6, 1) == 75);
    CHECK(conv_output_length(75, 3, 5, 0) == 15);
    CHECK(conv_output_length(15, 3, 5, 0) == 3);
    CHECK(conv_output_length(3, 3, 3, 0) == 1);
    CHECK(conv_output_length(3, 3, 1, 0) == 1);
    CHECK_THROWS_AS(conv_output_length(1, 3, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(conv_output_length(10, 3, 0, 0), std::invalid_argument);
}

TEST_CASE("temporal collapse: 75n -> 75 -> 15 -> 3 -> 1 for every n in 1..8") {
    for (int n = 1; n <= 8; ++n) {
        const std::array<int, 4> strides{n, 5, 5, 3};
        const std::array<int, 4> paddings{1, 0, 0, 0};
        int len = 75 * n;
        std::array<int, 4> trace{};
        for (int i = 0; i < 4; ++i) {
            len = conv_output_length(len, 3, strides[static_cast<std::size_t>(i)], paddings[static_cast<std::size_t>(i)]);
            trace[static_cast<std::size_t>(i)] = len;
        }
        CHECK(trace == std::array<int, 4>{75, 15, 3, 1});

        // the real head agrees with the arithmetic
        EncodingHeadConfig cfg;
        cfg.n = n;
        cfg.dim = 8;
        cfg.n_voxels = 3;
        CHECK_NOTHROW(cfg.validate());
    }
}

namespace {

std::vector<Matrix> random_activations(int count, int frames, int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Matrix> acts(static_cast<std::size_t>(count));
    for (auto& a : acts) {
        a.resize(frames, dim);
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = rng.normal();
    }
    return acts;
}

}  // namespace

TEST_CASE("head_forward produces one voxel vector per window and rejects bad frame counts") {
    for (int n : {1, 6}) {
        EncodingHeadConfig cfg;
        cfg.n = n;
        cfg.dim = 8;
        cfg.n_voxels = 5;
        EncodingHead head(cfg);
        const auto acts = random_activations(4, 75 * n, 8, 99);
        head.calibrate(acts, {0, 1, 2, 3});
        const Vector pred = head.forward_eval(acts[0]);
        CHECK(pred.size() == 5);
        CHECK(pred.allFinite());
        // deterministic in inference mode
        CHECK(head.forward_eval(acts[0]) == pred);
    }

    EncodingHeadConfig cfg;
    cfg.n = 6;
    cfg.dim = 8;
    cfg.n_voxels = 5;
    EncodingHead head(cfg);
    const auto acts = random_activations(3, 450, 8, 1);
    head.calibrate(acts, {0, 1, 2});
    Matrix bad = Matrix::Zero(449, 8);
    CHECK_THROWS_WITH_AS(head.forward_eval(bad), doctest::Contains("450"), std::invalid_argument);
}

TEST_CASE("standardizer fit/apply") {
    Standardizer st(1);
    Matrix x(2, 1);
    x << 2.0, 4.0;
    const Matrix fitted = st.fit(x);
    CHECK(st.mean()(0) == doctest::Approx(3.0));
    CHECK(std::sqrt(st.variance()(0)) == doctest::Approx(1.0));
    CHECK(fitted(0, 0) == doctest::Approx(-1.0));
    CHECK(fitted(1, 0) == doctest::Approx(1.0));
    CHECK(st.apply(x)(0, 0) == doctest::Approx(-1.0));

    SUBCASE("identity statistics leave input unchanged") {
        Standardizer id(1);
        id.set_stats(Vector::Zero(1), Vector::Ones(1));
        Matrix y(3, 1);
        y << -1.0, 0.5, 2.0;
        const Matrix out = id.apply(y);
        for (int i = 0; i < 3; ++i) CHECK(out(i, 0) == doctest::Approx(y(i, 0)));
    }
    SUBCASE("constant channel is an error in fit") {
        Standardizer st2(1);
        Matrix c(3, 1);
        c << 5.0, 5.0, 5.0;
        CHECK_THROWS_WITH_AS(st2.fit(c), doctest::Contains("zero variance"), std::runtime_error);
    }
    SUBCASE("fit needs at least two samples") {
        Standardizer st2(1);
        CHECK_THROWS_AS(st2.fit(Matrix::Zero(1, 1)), std::invalid_argument);
    }
    SUBCASE("apply before fit is an error") {
        Standardizer st2(2);
        CHECK_THROWS_AS(st2.apply(Matrix::Zero(2, 2)), std::logic_error);
    }
}

TEST_CASE("analytic gradients match central finite differences on a small head") {
    EncodingHeadConfig cfg;
    cfg.n = 1;
    cfg.dim = 6;
    cfg.n_voxels = 4;
    cfg.seed = 3;
    EncodingHead head(cfg);

    const int B = 3;
    const auto acts = random_activations(B, 75, 6, 21);
    Rng rng(5);
    Matrix targets(B, cfg.n_voxels);
    for (Eigen::Index i = 0; i < targets.rows(); ++i)
        for (Eigen::Index j = 0; j < targets.cols(); ++j) targets(i, j) = rng.normal();
    const double lambda = 0.03;

    auto loss = [&]() {
        EncodingHead::Cache cache;
        const Matrix pred = head.forward_train(acts, cache);
        double reg = 0.0;
        for (const Param* p : head.params().items()) reg += p->value.vec().squaredNorm();
        return (pred - targets).squaredNorm() / static_cast<double>(B * cfg.n_voxels) + lambda * reg;
    };

    EncodingHead::Cache cache;
    const Matrix pred = head.forward_train(acts, cache);
    head.params().zero_grad();
    const Matrix d_pred = (2.0 / (B * cfg.n_voxels)) * (pred - targets);
    head.backward(d_pred, cache);

    const double h = 1e-5;
    int checked = 0;
    for (Param* p : head.params().items()) {
        for (std::size_t k = 0; k < p->value.data.size(); k += std::max<std::size_t>(1, p->value.data.size() / 6)) {
            const double saved = p->value.data[k];
            p->value.data[k] = saved + h;
            const double up = loss();
            p->value.data[k] = saved - h;
            const double down = loss();
            p->value.data[k] = saved;
            const double fd = (up - down) / (2 * h);
            const double analytic = p->grad.data[k] + 2.0 * lambda * saved;
            const double err = std::abs(analytic - fd) / std::max({1e-4, std::abs(analytic), std::abs(fd)});
            if (err >= 1e-4) {
                CAPTURE(p->name);
                CAPTURE(k);
            }
            REQUIRE(err < 1e-4);
            ++checked;
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("input gradients match finite differences (stage-2 coupling)") {
    EncodingHeadConfig cfg;
    cfg.n = 1;
    cfg.dim = 6;
    cfg.n_voxels = 3;
    cfg.seed = 9;
    EncodingHead head(cfg);

    const int B = 2;
    auto acts = random_activations(B, 75, 6, 31);
    Rng rng(6);
    Matrix targets(B, cfg.n_voxels);
    for (Eigen::Index i = 0; i < targets.rows(); ++i)
        for (Eigen::Index j = 0; j < targets.cols(); ++j) targets(i, j) = rng.normal();

    auto loss = [&]() {
        EncodingHead::Cache cache;
        const Matrix pred = head.forward_train(acts, cache);
        return (pred - targets).squaredNorm() / static_cast<double>(B * cfg.n_voxels);
    };

    EncodingHead::Cache cache;
    const Matrix pred = head.forward_train(acts, cache);
    head.params().zero_grad();
    const std::vector<Matrix> d_acts = head.backward((2.0 / (B * cfg.n_voxels)) * (pred - targets), cache);

    const double h = 1e-5;
    Rng pick(77);
    for (int trial = 0; trial < 40; ++trial) {
        const int b = static_cast<int>(pick.below(B));
        const auto i = static_cast<Eigen::Index>(pick.below(75));
        const auto j = static_cast<Eigen::Index>(pick.below(6));
        const double saved = acts[static_cast<std::size_t>(b)](i, j);
        acts[static_cast<std::size_t>(b)](i, j) = saved + h;
        const double up = loss();
        acts[static_cast<std::size_t>(b)](i, j) = saved - h;
        const double down = loss();
        acts[static_cast<std::size_t>(b)](i, j) = saved;
        const double fd = (up - down) / (2 * h);
        const double analytic = d_acts[static_cast<std::size_t>(b)](i, j);
        REQUIRE(std::abs(analytic - fd) / std::max({1e-4, std::abs(analytic), std::abs(fd)}) < 1e-4);
    }
}

TEST_CASE("head checkpoint round trip keeps parameters and frozen statistics") {
    EncodingHeadConfig cfg;
    cfg.n = 2;
    cfg.dim = 8;
    cfg.n_voxels = 6;
    EncodingHead head(cfg);
    const auto acts = random_activations(5, 150, 8, 41);
    head.calibrate(acts, {0, 1, 2, 3, 4});
    const Vector before = head.forward_eval(acts[0]);

    Checkpoint ck;
    head.save_into(ck);
    const auto path = std::filesystem::temp_directory_path() / "nrf_head_test.nrc";
    ck.save(path.string());
    const EncodingHead loaded = EncodingHead::from_checkpoint(Checkpoint::load(path.string()));
    std::filesystem::remove(path);

    CHECK(loaded.calibrated());
    const Vector after = loaded.forward_eval(acts[0]);
    for (Eigen::Index v = 0; v < before.size(); ++v)
        CHECK(after(v) == doctest::Approx(before(v)).epsilon(1e-5));  // float32 container
}

TEST_SUITE_END();
