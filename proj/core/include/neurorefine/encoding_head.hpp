#pragma once

#include "neurorefine/checkpoint.hpp"
#include "neurorefine/tensor.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <vector>

namespace nrf {

/// Standard conv arithmetic: floor((L_in + 2*padding - kernel)/stride) + 1.
int conv_output_length(int l_in, int kernel, int stride, int padding);

/// Per-channel z-score stage (population statistics). `fit` computes and
/// stores mean/variance from the given rows, `apply` uses the stored
/// statistics. With eps == 0 a zero-variance channel in `fit` is an error;
/// the encoding head uses a small eps internally like any batch-norm stage.
class Standardizer {
public:
    explicit Standardizer(int channels, double eps = 0.0);

    int channels() const { return static_cast<int>(mean_.size()); }
    bool fitted() const { return fitted_; }

    Matrix fit(const Matrix& x);
    Matrix apply(const Matrix& x) const;

    const Vector& mean() const { return mean_; }
    const Vector& variance() const { return var_; }
    void set_stats(Vector mean, Vector var);
    double eps() const { return eps_; }

private:
    Vector mean_, var_;
    double eps_;
    bool fitted_ = false;
};

struct EncodingHeadConfig {
    int n = 6;        // context length in TRs; stride of the first conv layer
    int dim = 64;     // channel width D, kept through the whole stack
    int n_voxels = 5085;
    std::uint64_t seed = 7;
    double bn_eps = 1e-5;

    static constexpr int kKernel = 3;
    static constexpr std::array<int, 4> kPaddings{1, 0, 0, 0};
    std::array<int, 4> strides() const { return {n, 5, 5, 3}; }
    int expected_frames() const { return 75 * n; }

    void validate() const;
    nlohmann::json to_json() const;
    static EncodingHeadConfig from_json(const nlohmann::json& j);
};

/// The neural-encoding head: four conv layers with strides {n,5,5,3}
/// (kernel 3, first-layer padding 1) that collapse the 75n input frames to a
/// single position, each followed by batch normalization and ReLU; then a
/// per-channel z-score stage; then a linear projection to voxel space.
///
/// Normalization stages use batch statistics in training mode and frozen
/// statistics (set by calibrate()) at evaluation.
class EncodingHead {
public:
    explicit EncodingHead(const EncodingHeadConfig& cfg);
    EncodingHead(const EncodingHead& other);
    EncodingHead& operator=(const EncodingHead& other);

    const EncodingHeadConfig& config() const { return cfg_; }
    int feature_dim() const { return cfg_.dim; }
    int n_voxels() const { return cfg_.n_voxels; }
    int expected_frames() const { return cfg_.expected_frames(); }

    const ParamRegistry& params() const { return registry_; }
    ParamRegistry& params() { return registry_; }
    /// The linear output layer only (the stage-1 trainable set).
    ParamRegistry linear_params();
    /// Everything but the linear layer (trained in stage 2).
    ParamRegistry non_linear_params();

    struct Cache {
        std::vector<std::vector<Matrix>> stage_input;  // [stage][window]
        std::vector<std::vector<Matrix>> stage_xhat;   // post-BN normalized, pre-affine
        std::vector<std::vector<Matrix>> stage_act;    // post-ReLU (mask source)
        std::vector<Vector> bn_invstd;                 // [stage], per channel
        Matrix feat_xhat;                              // standardizer output (B x D)
        Vector std_invstd;                             // per channel
        int batch = 0;
    };

    /// Train-mode batched forward; every window must have exactly 75n frames.
    Matrix forward_train(const std::vector<Matrix>& activations, Cache& cache);
    /// Accumulates head parameter gradients; returns d(loss)/d(activations)
    /// per window for chaining into the backbone.
    std::vector<Matrix> backward(const Matrix& d_pred, const Cache& cache);

    /// Full train-mode pass over `indices` of `activations` whose batch
    /// statistics are stored as the frozen eval statistics.
    void calibrate(const std::vector<Matrix>& activations, const std::vector<int>& indices);
    bool calibrated() const { return calibrated_; }

    /// Eval-mode prediction for one window (frozen statistics).
    Vector forward_eval(const Matrix& activations) const;
    /// Eval-mode features entering the linear layer.
    Eigen::RowVectorXd features_eval(const Matrix& activations) const;

    void save_into(Checkpoint& ck) const;
    static EncodingHead from_checkpoint(const Checkpoint& ck);

private:
    struct ConvLayer {
        Param weight, bias;        // weight (out, kernel, in)
        Param bn_gain, bn_bias;
        Vector running_mean, running_var;  // frozen eval statistics
        int stride = 1, padding = 0;
    };

    void rebuild_registry();
    Matrix conv_forward(const ConvLayer& layer, const Matrix& x) const;
    void check_frames(const Matrix& activations) const;

    EncodingHeadConfig cfg_;
    std::vector<ConvLayer> convs_;
    Standardizer standardizer_;
    Param linear_w_, linear_b_;
    ParamRegistry registry_;
    bool calibrated_ = false;
};

}  // namespace nrf
