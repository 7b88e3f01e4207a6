#pragma once

#include "neurorefine/tensor.hpp"
#include "neurorefine/wav.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nrf {

/// Pluggable self-supervised speech encoder. Implementations consume 16 kHz
/// waveforms and expose one activation matrix per layer at a 50 Hz frame
/// rate: for S input samples every matrix has exactly floor(S/320) rows and
/// dim() columns. Index 0 is the post-feature-extractor latents, indices
/// 1..num_layers() the transformer layer outputs.
class SpeechBackbone {
public:
    static constexpr int kSampleRate = 16000;
    static constexpr int kFrameRate = 50;
    static constexpr int kSamplesPerFrame = kSampleRate / kFrameRate;  // 320

    virtual ~SpeechBackbone() = default;

    virtual int num_layers() const = 0;
    virtual int dim() const = 0;

    /// Trainable parameters; may be empty for frozen external adapters.
    virtual const ParamRegistry& params() const = 0;
    virtual ParamRegistry& params() = 0;

    virtual std::vector<Matrix> layer_activations(std::span<const float> waveform) const = 0;
};

/// Frame count every layer matrix must have for an input of n_samples.
/// Errors below one stride window (320 samples).
int expected_frame_count(std::size_t n_samples);

/// Runs the backbone and validates the layer-count/frame-count/dim contract.
std::vector<Matrix> extract_layer_activations(const SpeechBackbone& backbone, std::span<const float> waveform);

/// Waveform overload; additionally rejects non-16 kHz metadata.
std::vector<Matrix> extract_layer_activations(const SpeechBackbone& backbone, const Waveform& waveform);

/// Immutable deep copy of a parameter registry's values.
struct ParamSnapshot {
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::vector<double> values;
    };
    std::vector<Entry> entries;

    const Entry* find(const std::string& name) const;
};

ParamSnapshot snapshot_params(const ParamRegistry& registry);
void restore_params(const ParamRegistry& registry, const ParamSnapshot& snapshot);

/// Bit-exact equality of two snapshots (names, shapes and values).
bool snapshots_equal(const ParamSnapshot& a, const ParamSnapshot& b);

enum class ChangeMetric {
    RelativeL1,  // 100 * sum|after-before| / sum|before|
    NormRatio,   // 100 * ||after-before||_2 / ||before||_2
};

struct ParamChange {
    std::string name;
    double pct = 0.0;
    bool defined = true;  // false when the before-norm is zero
};

/// Per-tensor change percentages between two snapshots with identical
/// name sets and shapes.
std::vector<ParamChange> param_change_pct(const ParamSnapshot& before, const ParamSnapshot& after,
                                          ChangeMetric metric = ChangeMetric::RelativeL1);

/// Attention-parameter change report grouped by (layer, Q/K/V, weight/bias),
/// computed from parameters named `encoder.layers.<i>.attn.<q|k|v>_proj.<weight|bias>`.
struct AttentionChange {
    int layer = 0;
    std::string param;  // "Q" | "K" | "V"
    std::string kind;   // "weight" | "bias"
    double pct = 0.0;
    bool defined = true;
};

std::vector<AttentionChange> attention_change_report(const ParamSnapshot& before, const ParamSnapshot& after,
                                                     ChangeMetric metric = ChangeMetric::RelativeL1);

}  // namespace nrf
