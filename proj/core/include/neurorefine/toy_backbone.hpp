#pragma once

#include "neurorefine/backbone.hpp"
#include "neurorefine/checkpoint.hpp"
#include "neurorefine/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nrf {

struct ToyBackboneConfig {
    int dim = 64;
    int n_layers = 4;
    int n_heads = 4;
    int ffn_mult = 2;
    std::vector<int> conv_channels = {16, 32, 48, 64};  // last entry must equal dim
    std::vector<int> conv_strides = {5, 4, 4, 4};       // kernel == stride; product must be 320
    double init_scale = 1.0;
    std::uint64_t seed = 1234;

    /// Desk-scale config with conv widths derived from dim.
    static ToyBackboneConfig scaled(int dim, int n_layers = 4, int n_heads = 4, std::uint64_t seed = 1234);

    void validate() const;
    nlohmann::json to_json() const;
    static ToyBackboneConfig from_json(const nlohmann::json& j);
};

namespace detail {

double gelu(double x);
double gelu_grad(double x);

/// y = x W^T + b, weight stored (out, in) row-major.
struct DenseLayer {
    Param weight, bias;

    DenseLayer(const std::string& name, int out, int in);
    void register_into(ParamRegistry& reg);
    int in_dim() const { return weight.value.shape[1]; }
    int out_dim() const { return weight.value.shape[0]; }

    Matrix forward(const Matrix& x) const;
    /// Accumulates weight/bias grads; returns dx.
    Matrix backward(const Matrix& x, const Matrix& dy);
};

struct LayerNorm {
    Param gain, bias;
    double eps = 1e-5;

    LayerNorm(const std::string& name, int dim);
    void register_into(ParamRegistry& reg);

    struct Cache {
        Matrix xhat;
        Vector invstd;
    };
    Matrix forward(const Matrix& x, Cache* cache) const;
    Matrix backward(const Matrix& dy, const Cache& cache);
};

struct Attention {
    DenseLayer q_proj, k_proj, v_proj, out_proj;
    int n_heads;

    Attention(const std::string& name, int dim, int n_heads);
    void register_into(ParamRegistry& reg);

    struct Cache {
        Matrix x, q, k, v, ctx;
        std::vector<Matrix> attn;  // per-head softmax, T x T
    };
    Matrix forward(const Matrix& x, Cache* cache) const;
    Matrix backward(const Matrix& dy, const Cache& cache);
};

/// Post-LN transformer block: x -> x + attn(x) -> LN -> (+ffn) -> LN.
struct TransformerLayer {
    Attention attn;
    LayerNorm norm1;
    DenseLayer fc1, fc2;
    LayerNorm norm2;

    TransformerLayer(const std::string& name, int dim, int n_heads, int ffn_mult);
    void register_into(ParamRegistry& reg);

    struct Cache {
        Attention::Cache attn;
        LayerNorm::Cache norm1, norm2;
        Matrix y;       // norm1 output, ffn input
        Matrix h_pre;   // fc1 output before GELU
        Matrix h_act;   // after GELU, fc2 input
    };
    Matrix forward(const Matrix& x, Cache* cache) const;
    Matrix backward(const Matrix& dy, const Cache& cache);
};

/// 1-D conv with kernel == stride (non-overlapping windows) + GELU.
/// Weight layout (out_ch, kernel, in_ch).
struct ConvStage {
    Param weight, bias;
    int stride, in_ch, out_ch;

    ConvStage(const std::string& name, int in_ch, int out_ch, int stride);
    void register_into(ParamRegistry& reg);

    struct Cache {
        Matrix input;  // T_in x in_ch
        Matrix z;      // pre-activation, T_out x out_ch
    };
    Matrix forward(const Matrix& x, Cache* cache) const;
    Matrix backward(const Matrix& dy, const Cache& cache, Matrix* dx);
};

}  // namespace detail

/// Desk-scale stand-in for a pretrained self-supervised speech encoder:
/// a strided conv feature extractor (16 kHz -> 50 Hz) followed by a small
/// post-LN transformer stack with per-layer Q/K/V parameters addressable by
/// name. Supports full backpropagation for refinement training.
class ToyBackbone final : public SpeechBackbone {
public:
    explicit ToyBackbone(const ToyBackboneConfig& cfg);
    ToyBackbone(const ToyBackbone& other);
    ToyBackbone& operator=(const ToyBackbone& other);

    int num_layers() const override { return cfg_.n_layers; }
    int dim() const override { return cfg_.dim; }
    const ParamRegistry& params() const override { return registry_; }
    ParamRegistry& params() override { return registry_; }

    std::vector<Matrix> layer_activations(std::span<const float> waveform) const override;
    Matrix final_layer_activations(std::span<const float> waveform) const;

    const ToyBackboneConfig& config() const { return cfg_; }

    struct Cache {
        std::vector<detail::ConvStage::Cache> conv;
        std::vector<detail::TransformerLayer::Cache> layers;
        Matrix final_out;
    };
    /// Forward pass that retains what backward() needs. Returns the final
    /// transformer layer's activations (the context representations feeding
    /// the encoding head).
    Matrix forward_train(std::span<const float> waveform, Cache& cache) const;
    /// Accumulates parameter gradients from d(loss)/d(final activations).
    void backward(const Matrix& d_final, const Cache& cache);

    void save_into(Checkpoint& ck) const;
    static ToyBackbone from_checkpoint(const Checkpoint& ck);

private:
    void rebuild_registry();
    Matrix run_extractor(std::span<const float> waveform, std::vector<detail::ConvStage::Cache>* caches) const;
    static Matrix positional_encoding(int frames, int dim);

    ToyBackboneConfig cfg_;
    std::vector<detail::ConvStage> extractor_;
    std::vector<detail::TransformerLayer> layers_;
    ParamRegistry registry_;
};

}  // namespace nrf
