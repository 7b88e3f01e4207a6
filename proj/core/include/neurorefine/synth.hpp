#pragma once

#include "neurorefine/bold.hpp"
#include "neurorefine/tensor.hpp"
#include "neurorefine/wav.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nrf {

class ToyBackbone;
class EncodingHead;

/// Double-gamma hemodynamic response timing. Gamma scales are fixed at 1 s,
/// so shape parameters are peak+1 and undershoot+1 and the kernel mode lands
/// at `peak_seconds` before the (small) undershoot correction.
struct HrfParams {
    double peak_seconds = 5.5;
    double undershoot_seconds = 12.0;
    double undershoot_ratio = 1.0 / 6.0;
    double duration_seconds = 30.0;
    double dt = 0.1;

    void validate() const;
};

/// Sampled HRF kernel on t = 0, dt, ..., duration (inclusive; length
/// duration/dt + 1), peak-normalized to 1.0.
std::vector<double> double_gamma_hrf(const HrfParams& params);

struct SynthSpec {
    int n_trs = 80;
    int n_voxels = 64;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
    double tr_seconds = 1.5;
    int sample_rate = 16000;

    enum class Teacher { HrfEnvelope, LinearBackbone };
    Teacher teacher = Teacher::HrfEnvelope;

    void validate() const;
};

/// Deterministic 16 kHz mono stimulus: per-TR amplitude-modulated tones plus
/// occasional band-limited noise bursts. Peak amplitude <= 1.
Waveform gen_stimulus(double duration_seconds, std::uint64_t seed, double tr_seconds = 1.5);

/// Mean absolute amplitude per 100 ms frame.
std::vector<double> envelope_features(const Waveform& wav, double frame_seconds = 0.1);

struct SynthBoldResult {
    BoldSession session;
    Matrix features;  // n_trs x C, the HRF-convolved envelope at each TR
    Matrix readout;   // C x V ground-truth linear readout
};

/// BOLD as a per-voxel random linear readout of the HRF-convolved stimulus
/// envelope sampled at the TR grid, plus i.i.d. Gaussian noise. Per-voxel
/// noise streams are derived from (seed, voxel index), so generation is
/// schedule-independent.
SynthBoldResult synth_bold_hrf(const Waveform& waveform, const SynthSpec& spec, const std::vector<double>& hrf);

struct TeacherBoldResult {
    BoldSession session;
    Matrix features;  // n_trs x D deterministic head features
};

/// BOLD that is exactly `true_head_weights` applied to the deterministic
/// (eval-mode) head features of each TR window, plus optional noise. The
/// head's normalization statistics are calibrated on `calibration_indices`
/// (all TRs when empty) before features are computed, and the head is left
/// with those statistics frozen.
TeacherBoldResult linear_teacher_bold(ToyBackbone& backbone, EncodingHead& head, const Waveform& audio, int n,
                                      const Matrix& true_head_weights, double noise_std, std::uint64_t seed,
                                      double tr_seconds = 1.5,
                                      const std::vector<int>& calibration_indices = {});

/// Synthetic-but-paper-shaped surface atlas: 40962 vertices per hemisphere,
/// 180 ROI labels per hemisphere, with EAC/AAC/IFG sized so that the three
/// auditory/language ROIs together select 2617 left + 2468 right voxels.
RoiAtlas make_reference_atlas();

/// Zero-padded synthetic voxel ids v0000, v0001, ...
std::vector<std::string> make_voxel_ids(int n_voxels);

}  // namespace nrf
