#include "neurorefine/toy_backbone.hpp"

#include "neurorefine/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nrf {

ToyBackboneConfig ToyBackboneConfig::scaled(int dim, int n_layers, int n_heads, std::uint64_t seed) {
    ToyBackboneConfig cfg;
    cfg.dim = dim;
    cfg.n_layers = n_layers;
    cfg.n_heads = n_heads;
    cfg.seed = seed;
    cfg.conv_channels = {std::max(4, dim / 4), std::max(4, dim / 2), std::max(4, 3 * dim / 4), dim};
    return cfg;
}

void ToyBackboneConfig::validate() const {
    if (dim < 1 || n_layers < 1 || n_heads < 1 || ffn_mult < 1)
        throw std::invalid_argument("ToyBackboneConfig: dims/layers/heads must be positive");
    if (dim % n_heads != 0) throw std::invalid_argument("ToyBackboneConfig: dim must be divisible by n_heads");
    if (conv_channels.size() != conv_strides.size() || conv_channels.empty())
        throw std::invalid_argument("ToyBackboneConfig: conv_channels and conv_strides must align");
    if (conv_channels.back() != dim)
        throw std::invalid_argument("ToyBackboneConfig: last conv width must equal dim");
    int product = 1;
    for (int s : conv_strides) {
        if (s < 1) throw std::invalid_argument("ToyBackboneConfig: strides must be >= 1");
        product *= s;
    }
    if (product != SpeechBackbone::kSamplesPerFrame)
        throw std::invalid_argument("ToyBackboneConfig: stride product must be 320 (16 kHz -> 50 Hz), got " +
                                    std::to_string(product));
}

nlohmann::json ToyBackboneConfig::to_json() const {
    return nlohmann::json{{"dim", dim},
                          {"n_layers", n_layers},
                          {"n_heads", n_heads},
                          {"ffn_mult", ffn_mult},
                          {"conv_channels", conv_channels},
                          {"conv_strides", conv_strides},
                          {"init_scale", init_scale},
                          {"seed", seed}};
}

ToyBackboneConfig ToyBackboneConfig::from_json(const nlohmann::json& j) {
    ToyBackboneConfig cfg;
    cfg.dim = j.at("dim").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.ffn_mult = j.at("ffn_mult").get<int>();
    cfg.conv_channels = j.at("conv_channels").get<std::vector<int>>();
    cfg.conv_strides = j.at("conv_strides").get<std::vector<int>>();
    cfg.init_scale = j.at("init_scale").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

namespace detail {

constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

DenseLayer::DenseLayer(const std::string& name, int out, int in)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}) {}

void DenseLayer::register_into(ParamRegistry& reg) {
    reg.add(&weight);
    reg.add(&bias);
}

Matrix DenseLayer::forward(const Matrix& x) const {
    Matrix y = x * weight.value.mat(out_dim(), in_dim()).transpose();
    y.rowwise() += bias.value.vec().transpose();
    return y;
}

Matrix DenseLayer::backward(const Matrix& x, const Matrix& dy) {
    weight.grad.mat(out_dim(), in_dim()) += dy.transpose() * x;
    bias.grad.vec() += dy.colwise().sum().transpose();
    return dy * weight.value.mat(out_dim(), in_dim());
}

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gain(name + ".gain", {dim}), bias(name + ".bias", {dim}) {}

void LayerNorm::register_into(ParamRegistry& reg) {
    reg.add(&gain);
    reg.add(&bias);
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
    const auto D = x.cols();
    Matrix xhat(x.rows(), D);
    Vector invstd(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = ((x.row(i).array() - mean) * inv).matrix();
        invstd(i) = inv;
    }
    Matrix y = xhat * gain.value.vec().asDiagonal();
    y.rowwise() += bias.value.vec().transpose();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->invstd = std::move(invstd);
    }
    return y;
}

Matrix LayerNorm::backward(const Matrix& dy, const Cache& cache) {
    gain.grad.vec() += (dy.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
    bias.grad.vec() += dy.colwise().sum().transpose();
    Matrix dxhat = dy * gain.value.vec().asDiagonal();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
        dx.row(i) = (cache.invstd(i) * (dxhat.row(i).array() - m1 - cache.xhat.row(i).array() * m2)).matrix();
    }
    return dx;
}

Attention::Attention(const std::string& name, int dim, int n_heads_)
    : q_proj(name + ".q_proj", dim, dim),
      k_proj(name + ".k_proj", dim, dim),
      v_proj(name + ".v_proj", dim, dim),
      out_proj(name + ".out_proj", dim, dim),
      n_heads(n_heads_) {}

void Attention::register_into(ParamRegistry& reg) {
    q_proj.register_into(reg);
    k_proj.register_into(reg);
    v_proj.register_into(reg);
    out_proj.register_into(reg);
}

Matrix Attention::forward(const Matrix& x, Cache* cache) const {
    const Eigen::Index T = x.rows();
    const Eigen::Index D = x.cols();
    const Eigen::Index dh = D / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix q = q_proj.forward(x);
    Matrix k = k_proj.forward(x);
    Matrix v = v_proj.forward(x);
    Matrix ctx(T, D);
    std::vector<Matrix> attn(static_cast<std::size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
        const auto qh = q.middleCols(h * dh, dh);
        const auto kh = k.middleCols(h * dh, dh);
        const auto vh = v.middleCols(h * dh, dh);
        Matrix s = scale * (qh * kh.transpose());
        // row-wise softmax, shifted for stability
        for (Eigen::Index i = 0; i < T; ++i) {
            const double mx = s.row(i).maxCoeff();
            s.row(i) = (s.row(i).array() - mx).exp().matrix();
            s.row(i) /= s.row(i).sum();
        }
        ctx.middleCols(h * dh, dh) = s * vh;
        attn[static_cast<std::size_t>(h)] = std::move(s);
    }
    Matrix out = out_proj.forward(ctx);
    if (cache) {
        cache->x = x;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->ctx = std::move(ctx);
        cache->attn = std::move(attn);
    }
    return out;
}

Matrix Attention::backward(const Matrix& dy, const Cache& cache) {
    const Eigen::Index D = cache.x.cols();
    const Eigen::Index dh = D / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix dctx = out_proj.backward(cache.ctx, dy);
    Matrix dq(cache.x.rows(), D), dk(cache.x.rows(), D), dv(cache.x.rows(), D);
    for (int h = 0; h < n_heads; ++h) {
        const auto qh = cache.q.middleCols(h * dh, dh);
        const auto kh = cache.k.middleCols(h * dh, dh);
        const auto vh = cache.v.middleCols(h * dh, dh);
        const Matrix& a = cache.attn[static_cast<std::size_t>(h)];
        const auto dch = dctx.middleCols(h * dh, dh);

        Matrix da = dch * vh.transpose();
        dv.middleCols(h * dh, dh) = a.transpose() * dch;
        // softmax backward per row
        Matrix ds(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double dot = a.row(i).dot(da.row(i));
            ds.row(i) = (a.row(i).array() * (da.row(i).array() - dot)).matrix();
        }
        dq.middleCols(h * dh, dh) = scale * (ds * kh);
        dk.middleCols(h * dh, dh) = scale * (ds.transpose() * qh);
    }
    Matrix dx = q_proj.backward(cache.x, dq);
    dx += k_proj.backward(cache.x, dk);
    dx += v_proj.backward(cache.x, dv);
    return dx;
}

TransformerLayer::TransformerLayer(const std::string& name, int dim, int n_heads, int ffn_mult)
    : attn(name + ".attn", dim, n_heads),
      norm1(name + ".norm1", dim),
      fc1(name + ".ffn.fc1", dim * ffn_mult, dim),
      fc2(name + ".ffn.fc2", dim, dim * ffn_mult),
      norm2(name + ".norm2", dim) {}

void TransformerLayer::register_into(ParamRegistry& reg) {
    attn.register_into(reg);
    norm1.register_into(reg);
    fc1.register_into(reg);
    fc2.register_into(reg);
    norm2.register_into(reg);
}

Matrix TransformerLayer::forward(const Matrix& x, Cache* cache) const {
    Matrix a = attn.forward(x, cache ? &cache->attn : nullptr);
    a += x;
    Matrix y = norm1.forward(a, cache ? &cache->norm1 : nullptr);
    Matrix h_pre = fc1.forward(y);
    Matrix h_act = h_pre.unaryExpr([](double t) { return gelu(t); });
    Matrix f = fc2.forward(h_act);
    f += y;
    Matrix out = norm2.forward(f, cache ? &cache->norm2 : nullptr);
    if (cache) {
        cache->y = std::move(y);
        cache->h_pre = std::move(h_pre);
        cache->h_act = std::move(h_act);
    }
    return out;
}

Matrix TransformerLayer::backward(const Matrix& dy, const Cache& cache) {
    Matrix ds2 = norm2.backward(dy, cache.norm2);
    Matrix dh_act = fc2.backward(cache.h_act, ds2);
    Matrix dh_pre = dh_act.array() * cache.h_pre.unaryExpr([](double t) { return gelu_grad(t); }).array();
    Matrix dy1 = fc1.backward(cache.y, dh_pre);
    dy1 += ds2;  // residual
    Matrix ds1 = norm1.backward(dy1, cache.norm1);
    Matrix dx = attn.backward(ds1, cache.attn);
    dx += ds1;  // residual
    return dx;
}

ConvStage::ConvStage(const std::string& name, int in_ch_, int out_ch_, int stride_)
    : weight(name + ".weight", {out_ch_, stride_, in_ch_}),
      bias(name + ".bias", {out_ch_}),
      stride(stride_),
      in_ch(in_ch_),
      out_ch(out_ch_) {}

void ConvStage::register_into(ParamRegistry& reg) {
    reg.add(&weight);
    reg.add(&bias);
}

Matrix ConvStage::forward(const Matrix& x, Cache* cache) const {
    const Eigen::Index t_out = x.rows() / stride;
    // non-overlapping windows: each output row sees a contiguous (stride*in_ch) block
    Eigen::Map<const Matrix> blocks(x.data(), t_out, static_cast<Eigen::Index>(stride) * in_ch);
    Matrix z = blocks * weight.value.mat(out_ch, stride * in_ch).transpose();
    z.rowwise() += bias.value.vec().transpose();
    Matrix out = z.unaryExpr([](double t) { return gelu(t); });
    if (cache) {
        cache->input = x;
        cache->z = std::move(z);
    }
    return out;
}

Matrix ConvStage::backward(const Matrix& dy, const Cache& cache, Matrix* dx) {
    const Eigen::Index t_out = dy.rows();
    Matrix dz = dy.array() * cache.z.unaryExpr([](double t) { return gelu_grad(t); }).array();
    Eigen::Map<const Matrix> blocks(cache.input.data(), t_out, static_cast<Eigen::Index>(stride) * in_ch);
    weight.grad.mat(out_ch, stride * in_ch) += dz.transpose() * blocks;
    bias.grad.vec() += dz.colwise().sum().transpose();
    if (dx) {
        Matrix din_blocks = dz * weight.value.mat(out_ch, stride * in_ch);
        dx->setZero(cache.input.rows(), in_ch);
        Eigen::Map<Matrix>(dx->data(), t_out * stride, in_ch) =
            Eigen::Map<const Matrix>(din_blocks.data(), t_out * stride, in_ch);
    }
    return dz;
}

}  // namespace detail

ToyBackbone::ToyBackbone(const ToyBackboneConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int in_ch = 1;
    for (std::size_t s = 0; s < cfg_.conv_strides.size(); ++s) {
        extractor_.emplace_back("feature_extractor.conv" + std::to_string(s), in_ch, cfg_.conv_channels[s],
                                cfg_.conv_strides[s]);
        in_ch = cfg_.conv_channels[s];
    }
    for (int l = 0; l < cfg_.n_layers; ++l)
        layers_.emplace_back("encoder.layers." + std::to_string(l), cfg_.dim, cfg_.n_heads, cfg_.ffn_mult);
    rebuild_registry();

    // pretrained-model stand-in: weights Xavier-ish, biases small nonzero,
    // norm gains 1 / biases 0
    Rng rng(cfg_.seed);
    for (Param* p : registry_.items()) {
        const auto& shape = p->value.shape;
        const bool is_weight = shape.size() >= 2;
        if (p->name.find("norm") != std::string::npos) {
            const double fill = p->name.ends_with(".gain") ? 1.0 : 0.0;
            std::fill(p->value.data.begin(), p->value.data.end(), fill);
            continue;
        }
        if (is_weight) {
            std::size_t fan_in = 1;
            for (std::size_t d = 1; d < shape.size(); ++d) fan_in *= static_cast<std::size_t>(shape[d]);
            const std::size_t fan_out = static_cast<std::size_t>(shape[0]);
            const double std = cfg_.init_scale * std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
            for (double& v : p->value.data) v = rng.normal(0.0, std);
        } else {
            for (double& v : p->value.data) v = rng.normal(0.0, 0.02);
        }
    }
}

ToyBackbone::ToyBackbone(const ToyBackbone& other)
    : cfg_(other.cfg_), extractor_(other.extractor_), layers_(other.layers_) {
    rebuild_registry();
}

ToyBackbone& ToyBackbone::operator=(const ToyBackbone& other) {
    if (this != &other) {
        cfg_ = other.cfg_;
        extractor_ = other.extractor_;
        layers_ = other.layers_;
        rebuild_registry();
    }
    return *this;
}

void ToyBackbone::rebuild_registry() {
    registry_ = ParamRegistry();
    for (auto& stage : extractor_) stage.register_into(registry_);
    for (auto& layer : layers_) layer.register_into(registry_);
}

Matrix ToyBackbone::positional_encoding(int frames, int dim) {
    Matrix pe(frames, dim);
    for (int t = 0; t < frames; ++t) {
        for (int i = 0; i < dim; i += 2) {
            const double angle = t / std::pow(10000.0, static_cast<double>(i) / dim);
            pe(t, i) = std::sin(angle);
            if (i + 1 < dim) pe(t, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

Matrix ToyBackbone::run_extractor(std::span<const float> waveform,
                                  std::vector<detail::ConvStage::Cache>* caches) const {
    const int frames = expected_frame_count(waveform.size());
    (void)frames;
    Matrix x(static_cast<Eigen::Index>(waveform.size()), 1);
    for (std::size_t i = 0; i < waveform.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = waveform[i];
    if (caches) caches->resize(extractor_.size());
    for (std::size_t s = 0; s < extractor_.size(); ++s)
        x = extractor_[s].forward(x, caches ? &(*caches)[s] : nullptr);
    return x;
}

std::vector<Matrix> ToyBackbone::layer_activations(std::span<const float> waveform) const {
    Matrix latents = run_extractor(waveform, nullptr);
    std::vector<Matrix> acts;
    acts.reserve(static_cast<std::size_t>(cfg_.n_layers) + 1);
    acts.push_back(latents);
    Matrix x = latents + positional_encoding(static_cast<int>(latents.rows()), cfg_.dim);
    for (const auto& layer : layers_) {
        x = layer.forward(x, nullptr);
        acts.push_back(x);
    }
    return acts;
}

Matrix ToyBackbone::final_layer_activations(std::span<const float> waveform) const {
    Matrix x = run_extractor(waveform, nullptr);
    x += positional_encoding(static_cast<int>(x.rows()), cfg_.dim);
    for (const auto& layer : layers_) x = layer.forward(x, nullptr);
    return x;
}

Matrix ToyBackbone::forward_train(std::span<const float> waveform, Cache& cache) const {
    Matrix x = run_extractor(waveform, &cache.conv);
    x += positional_encoding(static_cast<int>(x.rows()), cfg_.dim);
    cache.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) x = layers_[l].forward(x, &cache.layers[l]);
    cache.final_out = x;
    return x;
}

void ToyBackbone::backward(const Matrix& d_final, const Cache& cache) {
    Matrix dx = d_final;
    for (std::size_t l = layers_.size(); l-- > 0;) dx = layers_[l].backward(dx, cache.layers[l]);
    // positional encoding is an additive constant: gradient passes through
    for (std::size_t s = extractor_.size(); s-- > 0;) {
        Matrix din;
        extractor_[s].backward(dx, cache.conv[s], s > 0 ? &din : nullptr);
        if (s > 0) dx = std::move(din);
    }
}

void ToyBackbone::save_into(Checkpoint& ck) const {
    ck.meta["backbone"] = cfg_.to_json();
    for (const Param* p : registry_.items()) ck.add(p->name, p->value.shape, p->value.data.data(), p->value.numel());
}

ToyBackbone ToyBackbone::from_checkpoint(const Checkpoint& ck) {
    if (!ck.meta.contains("backbone"))
        throw std::runtime_error("checkpoint has no backbone config in its header");
    ToyBackbone bb(ToyBackboneConfig::from_json(ck.meta["backbone"]));
    for (Param* p : bb.registry_.items()) {
        const NamedArray& a = ck.require(p->name);
        if (a.shape != p->value.shape)
            throw std::runtime_error("checkpoint array " + p->name + " has unexpected shape");
        p->value.data = a.data;
    }
    return bb;
}

}  // namespace nrf
