#include "neurorefine/encoding_head.hpp"

#include "neurorefine/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace nrf {

int conv_output_length(int l_in, int kernel, int stride, int padding) {
    if (stride < 1) throw std::invalid_argument("conv_output_length: stride must be >= 1");
    if (kernel < 1 || padding < 0) throw std::invalid_argument("conv_output_length: bad kernel/padding");
    if (l_in + 2 * padding < kernel)
        throw std::invalid_argument("conv_output_length: input of " + std::to_string(l_in) +
                                    " frames (+2*" + std::to_string(padding) + " padding) is below kernel " +
                                    std::to_string(kernel));
    return (l_in + 2 * padding - kernel) / stride + 1;
}

Standardizer::Standardizer(int channels, double eps) : mean_(channels), var_(channels), eps_(eps) {
    if (channels < 1) throw std::invalid_argument("Standardizer: need at least one channel");
    if (eps < 0) throw std::invalid_argument("Standardizer: eps must be >= 0");
    mean_.setZero();
    var_.setOnes();
}

Matrix Standardizer::fit(const Matrix& x) {
    if (x.cols() != mean_.size())
        throw std::invalid_argument("Standardizer::fit: expected " + std::to_string(mean_.size()) + " channels");
    if (x.rows() < 2) throw std::invalid_argument("Standardizer::fit: need at least 2 samples per channel");
    mean_ = x.colwise().mean().transpose();
    var_ = (x.rowwise() - mean_.transpose()).array().square().colwise().mean().matrix().transpose();
    if (eps_ == 0.0) {
        for (Eigen::Index c = 0; c < var_.size(); ++c)
            if (var_(c) <= 0.0)
                throw std::runtime_error("Standardizer::fit: channel " + std::to_string(c) + " has zero variance");
    }
    fitted_ = true;
    return apply(x);
}

Matrix Standardizer::apply(const Matrix& x) const {
    if (!fitted_) throw std::logic_error("Standardizer::apply: no stored statistics, call fit first");
    if (x.cols() != mean_.size())
        throw std::invalid_argument("Standardizer::apply: expected " + std::to_string(mean_.size()) + " channels");
    Matrix out = x;
    out.rowwise() -= mean_.transpose();
    for (Eigen::Index c = 0; c < var_.size(); ++c) out.col(c) /= std::sqrt(var_(c) + eps_);
    return out;
}

void Standardizer::set_stats(Vector mean, Vector var) {
    if (mean.size() != mean_.size() || var.size() != var_.size())
        throw std::invalid_argument("Standardizer::set_stats: wrong channel count");
    mean_ = std::move(mean);
    var_ = std::move(var);
    fitted_ = true;
}

void EncodingHeadConfig::validate() const {
    if (n < 1 || n > 8) throw std::invalid_argument("EncodingHeadConfig: supported context lengths are 1..8");
    if (dim < 1 || n_voxels < 1) throw std::invalid_argument("EncodingHeadConfig: dim and n_voxels must be positive");
    if (bn_eps <= 0) throw std::invalid_argument("EncodingHeadConfig: bn_eps must be > 0");
    // the stack must collapse 75n frames to exactly one position
    int len = expected_frames();
    const auto s = strides();
    for (std::size_t i = 0; i < s.size(); ++i) len = conv_output_length(len, kKernel, s[i], kPaddings[i]);
    if (len != 1)
        throw std::logic_error("EncodingHeadConfig: conv stack does not collapse to one frame (got " +
                               std::to_string(len) + ")");
}

nlohmann::json EncodingHeadConfig::to_json() const {
    return nlohmann::json{
        {"n", n}, {"dim", dim}, {"n_voxels", n_voxels}, {"seed", seed}, {"bn_eps", bn_eps}};
}

EncodingHeadConfig EncodingHeadConfig::from_json(const nlohmann::json& j) {
    EncodingHeadConfig cfg;
    cfg.n = j.at("n").get<int>();
    cfg.dim = j.at("dim").get<int>();
    cfg.n_voxels = j.at("n_voxels").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.bn_eps = j.at("bn_eps").get<double>();
    cfg.validate();
    return cfg;
}

EncodingHead::EncodingHead(const EncodingHeadConfig& cfg)
    : cfg_(cfg),
      standardizer_(cfg.dim, cfg.bn_eps),
      linear_w_("head.linear.weight", {cfg.n_voxels, cfg.dim}),
      linear_b_("head.linear.bias", {cfg.n_voxels}) {
    cfg_.validate();
    const int D = cfg_.dim;
    const auto strides = cfg_.strides();
    convs_.resize(strides.size());
    for (std::size_t i = 0; i < strides.size(); ++i) {
        ConvLayer& c = convs_[i];
        const std::string base = "head.conv" + std::to_string(i);
        c.weight = Param(base + ".weight", {D, EncodingHeadConfig::kKernel, D});
        c.bias = Param(base + ".bias", {D});
        c.bn_gain = Param("head.bn" + std::to_string(i) + ".gain", {D});
        c.bn_bias = Param("head.bn" + std::to_string(i) + ".bias", {D});
        c.running_mean = Vector::Zero(D);
        c.running_var = Vector::Ones(D);
        c.stride = strides[i];
        c.padding = EncodingHeadConfig::kPaddings[i];
    }
    rebuild_registry();

    Rng rng(cfg_.seed);
    for (auto& c : convs_) {
        const double std = std::sqrt(2.0 / static_cast<double>(D * EncodingHeadConfig::kKernel + D));
        for (double& v : c.weight.value.data) v = rng.normal(0.0, std);
        c.bias.value.setZero();
        std::fill(c.bn_gain.value.data.begin(), c.bn_gain.value.data.end(), 1.0);
        c.bn_bias.value.setZero();
    }
    // zero bias, small uniform weights: keeps stage-1 loss curves reproducible
    const double lim = 0.01;
    for (double& v : linear_w_.value.data) v = rng.uniform(-lim, lim);
    linear_b_.value.setZero();
}

EncodingHead::EncodingHead(const EncodingHead& other)
    : cfg_(other.cfg_),
      convs_(other.convs_),
      standardizer_(other.standardizer_),
      linear_w_(other.linear_w_),
      linear_b_(other.linear_b_),
      calibrated_(other.calibrated_) {
    rebuild_registry();
}

EncodingHead& EncodingHead::operator=(const EncodingHead& other) {
    if (this != &other) {
        cfg_ = other.cfg_;
        convs_ = other.convs_;
        standardizer_ = other.standardizer_;
        linear_w_ = other.linear_w_;
        linear_b_ = other.linear_b_;
        calibrated_ = other.calibrated_;
        rebuild_registry();
    }
    return *this;
}

void EncodingHead::rebuild_registry() {
    registry_ = ParamRegistry();
    for (auto& c : convs_) {
        registry_.add(&c.weight);
        registry_.add(&c.bias);
        registry_.add(&c.bn_gain);
        registry_.add(&c.bn_bias);
    }
    registry_.add(&linear_w_);
    registry_.add(&linear_b_);
}

ParamRegistry EncodingHead::linear_params() {
    ParamRegistry reg;
    reg.add(&linear_w_);
    reg.add(&linear_b_);
    return reg;
}

ParamRegistry EncodingHead::non_linear_params() {
    ParamRegistry reg;
    for (auto& c : convs_) {
        reg.add(&c.weight);
        reg.add(&c.bias);
        reg.add(&c.bn_gain);
        reg.add(&c.bn_bias);
    }
    return reg;
}

void EncodingHead::check_frames(const Matrix& activations) const {
    if (activations.rows() != cfg_.expected_frames())
        throw std::invalid_argument("encoding head: expected 75*n = " + std::to_string(cfg_.expected_frames()) +
                                    " frames, got " + std::to_string(activations.rows()));
    if (activations.cols() != cfg_.dim)
        throw std::invalid_argument("encoding head: expected " + std::to_string(cfg_.dim) + " channels, got " +
                                    std::to_string(activations.cols()));
}

Matrix EncodingHead::conv_forward(const ConvLayer& layer, const Matrix& x) const {
    const int D = cfg_.dim;
    const int t_out = conv_output_length(static_cast<int>(x.rows()), EncodingHeadConfig::kKernel, layer.stride,
                                         layer.padding);
    Matrix out = Matrix::Zero(t_out, D);
    for (int j = 0; j < EncodingHeadConfig::kKernel; ++j) {
        const auto wj = layer.weight.value.mat(D, EncodingHeadConfig::kKernel * D)
                            .middleCols(j * D, D);  // (out, in) slice for kernel offset j
        for (int t = 0; t < t_out; ++t) {
            const int src = t * layer.stride + j - layer.padding;
            if (src < 0 || src >= x.rows()) continue;
            out.row(t) += x.row(src) * wj.transpose();
        }
    }
    out.rowwise() += layer.bias.value.vec().transpose();
    return out;
}

Matrix EncodingHead::forward_train(const std::vector<Matrix>& activations, Cache& cache) {
    const int B = static_cast<int>(activations.size());
    if (B < 2) throw std::invalid_argument("encoding head: training batches need at least 2 windows");
    for (const Matrix& a : activations) check_frames(a);
    const int D = cfg_.dim;

    cache.batch = B;
    cache.stage_input.assign(convs_.size(), {});
    cache.stage_xhat.assign(convs_.size(), {});
    cache.stage_act.assign(convs_.size(), {});
    cache.bn_invstd.assign(convs_.size(), Vector());

    std::vector<Matrix> cur(activations.begin(), activations.end());
    for (std::size_t s = 0; s < convs_.size(); ++s) {
        ConvLayer& layer = convs_[s];
        cache.stage_input[s] = cur;
        std::vector<Matrix> z(cur.size());
        for (int b = 0; b < B; ++b) z[static_cast<std::size_t>(b)] = conv_forward(layer, cur[static_cast<std::size_t>(b)]);

        // batch statistics over (batch x time) per channel
        Vector mean = Vector::Zero(D), var = Vector::Zero(D);
        double m = 0;
        for (const Matrix& zb : z) {
            mean += zb.colwise().sum().transpose();
            m += static_cast<double>(zb.rows());
        }
        mean /= m;
        for (const Matrix& zb : z) var += (zb.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
        var /= m;
        Vector invstd(D);
        for (int c = 0; c < D; ++c) invstd(c) = 1.0 / std::sqrt(var(c) + cfg_.bn_eps);
        cache.bn_invstd[s] = invstd;

        cache.stage_xhat[s].resize(static_cast<std::size_t>(B));
        cache.stage_act[s].resize(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
            Matrix xhat = z[static_cast<std::size_t>(b)];
            xhat.rowwise() -= mean.transpose();
            xhat = xhat * invstd.asDiagonal();
            Matrix y = xhat * layer.bn_gain.value.vec().asDiagonal();
            y.rowwise() += layer.bn_bias.value.vec().transpose();
            cache.stage_xhat[s][static_cast<std::size_t>(b)] = std::move(xhat);
            cache.stage_act[s][static_cast<std::size_t>(b)] = y.cwiseMax(0.0);
        }
        cur = cache.stage_act[s];
    }

    // every window has collapsed to one frame
    Matrix feats(B, D);
    for (int b = 0; b < B; ++b) feats.row(b) = cur[static_cast<std::size_t>(b)].row(0);

    // standardizer, batch statistics
    Vector mean = feats.colwise().mean().transpose();
    Vector var = (feats.rowwise() - mean.transpose()).array().square().colwise().mean().matrix().transpose();
    Vector invstd(D);
    for (int c = 0; c < D; ++c) invstd(c) = 1.0 / std::sqrt(var(c) + cfg_.bn_eps);
    Matrix feat_centered = feats;
    feat_centered.rowwise() -= mean.transpose();
    cache.feat_xhat = feat_centered * invstd.asDiagonal();
    cache.std_invstd = invstd;

    Matrix pred = cache.feat_xhat * linear_w_.value.mat(cfg_.n_voxels, D).transpose();
    pred.rowwise() += linear_b_.value.vec().transpose();
    return pred;
}

std::vector<Matrix> EncodingHead::backward(const Matrix& d_pred, const Cache& cache) {
    const int B = cache.batch;
    const int D = cfg_.dim;
    if (d_pred.rows() != B || d_pred.cols() != cfg_.n_voxels)
        throw std::invalid_argument("encoding head backward: gradient shape mismatch");

    // linear layer
    linear_w_.grad.mat(cfg_.n_voxels, D) += d_pred.transpose() * cache.feat_xhat;
    linear_b_.grad.vec() += d_pred.colwise().sum().transpose();
    Matrix dfeat_hat = d_pred * linear_w_.value.mat(cfg_.n_voxels, D);

    // standardizer backward (batch statistics, no affine parameters)
    Matrix dfeats(B, D);
    {
        const Vector m1 = dfeat_hat.colwise().mean().transpose();
        const Vector m2 = (dfeat_hat.array() * cache.feat_xhat.array()).colwise().mean().matrix().transpose();
        for (int c = 0; c < D; ++c)
            dfeats.col(c) = (cache.std_invstd(c) *
                             (dfeat_hat.col(c).array() - m1(c) - cache.feat_xhat.col(c).array() * m2(c)))
                                .matrix();
    }

    // expand to per-window single-frame grads
    std::vector<Matrix> dcur(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
        dcur[static_cast<std::size_t>(b)] = Matrix::Zero(1, D);
        dcur[static_cast<std::size_t>(b)].row(0) = dfeats.row(b);
    }

    for (std::size_t s = convs_.size(); s-- > 0;) {
        ConvLayer& layer = convs_[s];
        // ReLU
        for (int b = 0; b < B; ++b) {
            const Matrix& act = cache.stage_act[s][static_cast<std::size_t>(b)];
            dcur[static_cast<std::size_t>(b)] =
                (dcur[static_cast<std::size_t>(b)].array() * (act.array() > 0.0).cast<double>()).matrix();
        }
        // batch-norm backward
        const Vector& invstd = cache.bn_invstd[s];
        double m = 0;
        Vector sum_dy = Vector::Zero(D), sum_dyx = Vector::Zero(D);
        for (int b = 0; b < B; ++b) {
            const Matrix& dy = dcur[static_cast<std::size_t>(b)];
            const Matrix& xhat = cache.stage_xhat[s][static_cast<std::size_t>(b)];
            sum_dy += dy.colwise().sum().transpose();
            sum_dyx += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
            m += static_cast<double>(dy.rows());
        }
        layer.bn_gain.grad.vec() += sum_dyx;
        layer.bn_bias.grad.vec() += sum_dy;
        std::vector<Matrix> dz(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
            const Matrix& dy = dcur[static_cast<std::size_t>(b)];
            const Matrix& xhat = cache.stage_xhat[s][static_cast<std::size_t>(b)];
            Matrix d(dy.rows(), D);
            for (int c = 0; c < D; ++c) {
                const double g = layer.bn_gain.value.vec()(c);
                d.col(c) = (g * invstd(c) *
                            (dy.col(c).array() - sum_dy(c) / m - xhat.col(c).array() * (sum_dyx(c) / m)))
                               .matrix();
            }
            dz[static_cast<std::size_t>(b)] = std::move(d);
        }
        // conv backward
        const int t_in = static_cast<int>(cache.stage_input[s][0].rows());
        for (int b = 0; b < B; ++b) dcur[static_cast<std::size_t>(b)] = Matrix::Zero(t_in, D);
        auto w = layer.weight.value.mat(D, EncodingHeadConfig::kKernel * D);
        auto dw = layer.weight.grad.mat(D, EncodingHeadConfig::kKernel * D);
        for (int b = 0; b < B; ++b) {
            const Matrix& x = cache.stage_input[s][static_cast<std::size_t>(b)];
            const Matrix& dzb = dz[static_cast<std::size_t>(b)];
            layer.bias.grad.vec() += dzb.colwise().sum().transpose();
            for (int j = 0; j < EncodingHeadConfig::kKernel; ++j) {
                const auto wj = w.middleCols(j * D, D);
                auto dwj = dw.middleCols(j * D, D);
                for (int t = 0; t < dzb.rows(); ++t) {
                    const int src = t * layer.stride + j - layer.padding;
                    if (src < 0 || src >= x.rows()) continue;
                    dwj += dzb.row(t).transpose() * x.row(src);
                    dcur[static_cast<std::size_t>(b)].row(src) += dzb.row(t) * wj;
                }
            }
        }
    }
    return dcur;
}

void EncodingHead::calibrate(const std::vector<Matrix>& activations, const std::vector<int>& indices) {
    if (indices.size() < 2) throw std::invalid_argument("encoding head calibrate: need at least 2 windows");
    std::vector<Matrix> subset;
    subset.reserve(indices.size());
    for (int i : indices) {
        if (i < 0 || static_cast<std::size_t>(i) >= activations.size())
            throw std::out_of_range("encoding head calibrate: window index out of range");
        subset.push_back(activations[static_cast<std::size_t>(i)]);
    }
    const int B = static_cast<int>(subset.size());
    const int D = cfg_.dim;

    std::vector<Matrix> cur = subset;
    for (auto& layer : convs_) {
        std::vector<Matrix> z(cur.size());
        for (int b = 0; b < B; ++b) z[static_cast<std::size_t>(b)] = conv_forward(layer, cur[static_cast<std::size_t>(b)]);
        Vector mean = Vector::Zero(D), var = Vector::Zero(D);
        double m = 0;
        for (const Matrix& zb : z) {
            mean += zb.colwise().sum().transpose();
            m += static_cast<double>(zb.rows());
        }
        mean /= m;
        for (const Matrix& zb : z) var += (zb.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
        var /= m;
        layer.running_mean = mean;
        layer.running_var = var;
        for (int b = 0; b < B; ++b) {
            Matrix y = z[static_cast<std::size_t>(b)];
            y.rowwise() -= mean.transpose();
            for (int c = 0; c < D; ++c) y.col(c) *= 1.0 / std::sqrt(var(c) + cfg_.bn_eps);
            y = y * layer.bn_gain.value.vec().asDiagonal();
            y.rowwise() += layer.bn_bias.value.vec().transpose();
            cur[static_cast<std::size_t>(b)] = y.cwiseMax(0.0);
        }
    }
    Matrix feats(B, D);
    for (int b = 0; b < B; ++b) feats.row(b) = cur[static_cast<std::size_t>(b)].row(0);
    Vector mean = feats.colwise().mean().transpose();
    Vector var = (feats.rowwise() - mean.transpose()).array().square().colwise().mean().matrix().transpose();
    standardizer_.set_stats(mean, var);
    calibrated_ = true;
}

Vector EncodingHead::forward_eval(const Matrix& activations) const {
    return (features_eval(activations) * linear_w_.value.mat(cfg_.n_voxels, cfg_.dim).transpose()).transpose() +
           linear_b_.value.vec();
}

Eigen::RowVectorXd EncodingHead::features_eval(const Matrix& activations) const {
    if (!calibrated_) throw std::logic_error("encoding head: eval before calibrate(); statistics not frozen");
    check_frames(activations);
    const int D = cfg_.dim;
    Matrix cur = activations;
    for (const auto& layer : convs_) {
        Matrix y = conv_forward(layer, cur);
        y.rowwise() -= layer.running_mean.transpose();
        for (int c = 0; c < D; ++c) y.col(c) *= 1.0 / std::sqrt(layer.running_var(c) + cfg_.bn_eps);
        y = y * layer.bn_gain.value.vec().asDiagonal();
        y.rowwise() += layer.bn_bias.value.vec().transpose();
        cur = y.cwiseMax(0.0);
    }
    Matrix feat = standardizer_.apply(cur.row(0));
    return feat.row(0);
}

void EncodingHead::save_into(Checkpoint& ck) const {
    ck.meta["head"] = cfg_.to_json();
    ck.meta["head"]["calibrated"] = calibrated_;
    for (const Param* p : registry_.items()) ck.add(p->name, p->value.shape, p->value.data.data(), p->value.numel());
    const int D = cfg_.dim;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        ck.add("head.bn" + std::to_string(i) + ".running_mean", {D}, convs_[i].running_mean.data(), static_cast<std::size_t>(D));
        ck.add("head.bn" + std::to_string(i) + ".running_var", {D}, convs_[i].running_var.data(), static_cast<std::size_t>(D));
    }
    ck.add("head.standardizer.mean", {D}, standardizer_.mean().data(), static_cast<std::size_t>(D));
    ck.add("head.standardizer.var", {D}, standardizer_.variance().data(), static_cast<std::size_t>(D));
}

EncodingHead EncodingHead::from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.contains("head")) throw std::runtime_error("checkpoint has no head config in its header");
    EncodingHead head(EncodingHeadConfig::from_json(ck.meta["head"]));
    for (Param* p : head.registry_.items()) {
        const NamedArray& a = ck.require(p->name);
        if (a.shape != p->value.shape) throw std::runtime_error("checkpoint array " + p->name + " has unexpected shape");
        p->value.data = a.data;
    }
    const int D = head.cfg_.dim;
    auto load_vec = [&](const std::string& name) {
        const NamedArray& a = ck.require(name);
        if (a.data.size() != static_cast<std::size_t>(D)) throw std::runtime_error("checkpoint array " + name + " has unexpected shape");
        return Eigen::Map<const Vector>(a.data.data(), D).eval();
    };
    for (std::size_t i = 0; i < head.convs_.size(); ++i) {
        head.convs_[i].running_mean = load_vec("head.bn" + std::to_string(i) + ".running_mean");
        head.convs_[i].running_var = load_vec("head.bn" + std::to_string(i) + ".running_var");
    }
    head.standardizer_.set_stats(load_vec("head.standardizer.mean"), load_vec("head.standardizer.var"));
    head.calibrated_ = ck.meta["head"].value("calibrated", false);
    return head;
}

}  // namespace nrf
