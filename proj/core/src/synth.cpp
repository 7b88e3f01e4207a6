#include "neurorefine/synth.hpp"

#include "neurorefine/encoding_head.hpp"
#include "neurorefine/rng.hpp"
#include "neurorefine/toy_backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nrf {

void HrfParams::validate() const {
    if (!(peak_seconds > 0 && peak_seconds < undershoot_seconds && undershoot_seconds < duration_seconds))
        throw std::invalid_argument("HrfParams: need 0 < peak < undershoot < duration");
    if (dt <= 0) throw std::invalid_argument("HrfParams: dt must be > 0");
    if (undershoot_ratio < 0) throw std::invalid_argument("HrfParams: undershoot_ratio must be >= 0");
}

void SynthSpec::validate() const {
    if (n_trs < 8) throw std::invalid_argument("SynthSpec: n_trs must be >= 8");
    if (n_voxels < 1) throw std::invalid_argument("SynthSpec: n_voxels must be >= 1");
    if (noise_std < 0) throw std::invalid_argument("SynthSpec: noise_std must be >= 0");
    if (tr_seconds <= 0) throw std::invalid_argument("SynthSpec: tr_seconds must be > 0");
}

namespace {

// Gamma density with scale 1: t^(a-1) e^-t / Gamma(a).
double gamma_pdf(double t, double shape) {
    if (t <= 0) return 0.0;
    return std::exp((shape - 1.0) * std::log(t) - t - std::lgamma(shape));
}

}  // namespace

std::vector<double> double_gamma_hrf(const HrfParams& params) {
    params.validate();
    const double a1 = params.peak_seconds + 1.0;
    const double a2 = params.undershoot_seconds + 1.0;
    const auto len = static_cast<std::size_t>(std::floor(params.duration_seconds / params.dt)) + 1;
    std::vector<double> h(len);
    double peak = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
        const double t = static_cast<double>(i) * params.dt;
        h[i] = gamma_pdf(t, a1) - params.undershoot_ratio * gamma_pdf(t, a2);
        peak = std::max(peak, h[i]);
    }
    if (peak <= 0) throw std::runtime_error("double_gamma_hrf: kernel has no positive peak");
    for (double& v : h) v /= peak;
    return h;
}

Waveform gen_stimulus(double duration_seconds, std::uint64_t seed, double tr_seconds) {
    if (duration_seconds <= 0) throw std::invalid_argument("gen_stimulus: duration must be positive");
    const double n_trs_d = duration_seconds / tr_seconds;
    const auto n_trs = static_cast<int>(std::llround(n_trs_d));
    if (std::abs(n_trs_d - n_trs) > 1e-9)
        throw std::invalid_argument("gen_stimulus: duration must be a whole number of TRs");

    constexpr int kRate = 16000;
    const auto spt = static_cast<std::size_t>(std::llround(tr_seconds * kRate));
    Waveform wav;
    wav.sample_rate = kRate;
    wav.samples.assign(static_cast<std::size_t>(n_trs) * spt, 0.0f);

    Rng rng(seed);
    std::vector<float> noise_buf;
    for (int tr = 0; tr < n_trs; ++tr) {
        const std::size_t base = static_cast<std::size_t>(tr) * spt;
        // amplitude-modulated tone spanning the TR
        const double freq = 220.0 * std::pow(2.0, rng.uniform(0.0, 4.0));  // 220 Hz .. 3.52 kHz
        const double am = rng.uniform(1.5, 7.0);
        const double amp = rng.uniform(0.15, 0.75);
        const double ph1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double ph2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < spt; ++i) {
            const double t = static_cast<double>(i) / kRate;
            const double env = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * am * t + ph2);
            wav.samples[base + i] += static_cast<float>(amp * env * std::sin(2.0 * std::numbers::pi * freq * t + ph1));
        }
        // occasional band-limited noise burst
        if (rng.uniform01() < 0.5) {
            const double burst_len_s = rng.uniform(0.3, 0.8);
            const auto burst_len = static_cast<std::size_t>(burst_len_s * kRate);
            const std::size_t off = static_cast<std::size_t>(rng.below(spt - std::min(burst_len, spt - 1)));
            const double namp = rng.uniform(0.05, 0.4);
            noise_buf.assign(burst_len, 0.0f);
            for (auto& x : noise_buf) x = static_cast<float>(rng.uniform(-1.0, 1.0));
            // crude low-pass: moving average over 8 samples
            float acc = 0.0f;
            constexpr std::size_t kBox = 8;
            for (std::size_t i = 0; i < burst_len; ++i) {
                acc += noise_buf[i];
                if (i >= kBox) acc -= noise_buf[i - kBox];
                const double win = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                        static_cast<double>(burst_len - 1));
                wav.samples[base + off + i] += static_cast<float>(namp * win * (acc / kBox));
            }
        }
    }
    float peak = 0.0f;
    for (float s : wav.samples) peak = std::max(peak, std::abs(s));
    if (peak > 0.98f) {
        const float scale = 0.98f / peak;
        for (float& s : wav.samples) s *= scale;
    }
    return wav;
}

std::vector<double> envelope_features(const Waveform& wav, double frame_seconds) {
    const auto frame = static_cast<std::size_t>(std::llround(frame_seconds * wav.sample_rate));
    if (frame == 0) throw std::invalid_argument("envelope_features: frame too short");
    const std::size_t n_frames = wav.samples.size() / frame;
    std::vector<double> env(n_frames, 0.0);
    for (std::size_t k = 0; k < n_frames; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < frame; ++i) acc += std::abs(static_cast<double>(wav.samples[k * frame + i]));
        env[k] = acc / static_cast<double>(frame);
    }
    return env;
}

SynthBoldResult synth_bold_hrf(const Waveform& waveform, const SynthSpec& spec, const std::vector<double>& hrf) {
    spec.validate();
    const auto spt = static_cast<std::size_t>(std::llround(spec.tr_seconds * spec.sample_rate));
    if (waveform.samples.size() != static_cast<std::size_t>(spec.n_trs) * spt)
        throw std::invalid_argument("synth_bold_hrf: waveform length " + std::to_string(waveform.samples.size()) +
                                    " != n_trs * samples_per_tr");
    if (hrf.empty()) throw std::invalid_argument("synth_bold_hrf: empty HRF kernel");

    constexpr double kFrameSeconds = 0.1;
    const std::vector<double> env = envelope_features(waveform, kFrameSeconds);
    const auto frames_per_tr = static_cast<std::size_t>(std::llround(spec.tr_seconds / kFrameSeconds));

    // causal discrete convolution on the envelope grid
    std::vector<double> conv(env.size(), 0.0);
    for (std::size_t i = 0; i < env.size(); ++i) {
        const std::size_t jmax = std::min(i + 1, hrf.size());
        double acc = 0.0;
        for (std::size_t j = 0; j < jmax; ++j) acc += env[i - j] * hrf[j];
        conv[i] = acc;
    }

    SynthBoldResult out;
    out.features.resize(spec.n_trs, 1);
    for (int t = 0; t < spec.n_trs; ++t)
        out.features(t, 0) = conv[static_cast<std::size_t>(t + 1) * frames_per_tr - 1];

    Rng readout_rng(derive_seed(spec.seed, 0x6ea0d07ULL));
    out.readout.resize(1, spec.n_voxels);
    for (int v = 0; v < spec.n_voxels; ++v) out.readout(0, v) = readout_rng.normal();

    out.session.tr_seconds = spec.tr_seconds;
    out.session.voxel_ids = make_voxel_ids(spec.n_voxels);
    out.session.subject_ids = {"synth"};
    out.session.bold.resize(spec.n_trs, spec.n_voxels);
    for (int v = 0; v < spec.n_voxels; ++v) {
        Rng noise(derive_seed(spec.seed, 0x4015eULL + static_cast<std::uint64_t>(v)));
        for (int t = 0; t < spec.n_trs; ++t) {
            const double val = out.features(t, 0) * out.readout(0, v) + spec.noise_std * noise.normal();
            out.session.bold(t, v) = static_cast<float>(val);
        }
    }
    return out;
}

TeacherBoldResult linear_teacher_bold(ToyBackbone& backbone, EncodingHead& head, const Waveform& audio, int n,
                                      const Matrix& true_head_weights, double noise_std, std::uint64_t seed,
                                      double tr_seconds, const std::vector<int>& calibration_indices) {
    const auto spt = static_cast<std::size_t>(std::llround(tr_seconds * audio.sample_rate));
    if (audio.samples.size() % spt != 0)
        throw std::invalid_argument("linear_teacher_bold: audio is not a whole number of TRs");
    const int n_trs = static_cast<int>(audio.samples.size() / spt);
    if (true_head_weights.rows() != head.feature_dim())
        throw std::invalid_argument("linear_teacher_bold: true_head_weights has " +
                                    std::to_string(true_head_weights.rows()) + " rows, head feature dim is " +
                                    std::to_string(head.feature_dim()));
    const int V = static_cast<int>(true_head_weights.cols());

    std::vector<Matrix> activations(static_cast<std::size_t>(n_trs));
    for (int t = 0; t < n_trs; ++t) {
        const StimulusWindow w = assemble_window(audio, t, n, tr_seconds, n_trs);
        activations[static_cast<std::size_t>(t)] = backbone.final_layer_activations(w.samples);
    }

    std::vector<int> calib = calibration_indices;
    if (calib.empty())
        for (int t = 0; t < n_trs; ++t) calib.push_back(t);
    head.calibrate(activations, calib);

    TeacherBoldResult out;
    out.features.resize(n_trs, head.feature_dim());
    for (int t = 0; t < n_trs; ++t) out.features.row(t) = head.features_eval(activations[static_cast<std::size_t>(t)]);

    out.session.tr_seconds = tr_seconds;
    out.session.voxel_ids = make_voxel_ids(V);
    out.session.subject_ids = {"teacher"};
    out.session.bold.resize(n_trs, V);
    Matrix clean = out.features * true_head_weights;  // n_trs x V
    for (int v = 0; v < V; ++v) {
        Rng noise(derive_seed(seed, 0x7eac4e5ULL + static_cast<std::uint64_t>(v)));
        for (int t = 0; t < n_trs; ++t)
            out.session.bold(t, v) = static_cast<float>(clean(t, v) + noise_std * noise.normal());
    }
    return out;
}

RoiAtlas make_reference_atlas() {
    // per-hemisphere vertex counts follow fsaverage6; ROI sizes are chosen so
    // EAC+AAC+IFG select 2617 L / 2468 R voxels
    constexpr int kVertices = 40962;
    struct RoiBlock {
        const char* label;
        int count_l;
        int count_r;
    };
    static constexpr RoiBlock kBlocks[] = {
        {"EAC", 500, 480},
        {"AAC", 1200, 1100},
        {"IFG", 917, 888},
    };
    RoiAtlas atlas;
    atlas.source_name = "reference-atlas";
    char buf[16];
    for (int hemi = 0; hemi < 2; ++hemi) {
        const Hemisphere h = hemi == 0 ? Hemisphere::L : Hemisphere::R;
        const char hc = hemi == 0 ? 'L' : 'R';
        int next = 0;
        for (const auto& blk : kBlocks) {
            const int count = hemi == 0 ? blk.count_l : blk.count_r;
            for (int i = 0; i < count; ++i, ++next) {
                std::snprintf(buf, sizeof buf, "%c_%06d", hc, next);
                atlas.entries[buf] = RoiAtlas::Entry{h, blk.label};
            }
        }
        // fill the remaining vertices with 177 other parcels (180 total per hemisphere)
        int roi_idx = 0;
        for (; next < kVertices; ++next) {
            std::snprintf(buf, sizeof buf, "%c_%06d", hc, next);
            char roi[16];
            std::snprintf(roi, sizeof roi, "ROI_%03d", 3 + (roi_idx % 177));
            atlas.entries[buf] = RoiAtlas::Entry{h, roi};
            ++roi_idx;
        }
    }
    return atlas;
}

std::vector<std::string> make_voxel_ids(int n_voxels) {
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(n_voxels));
    char buf[16];
    for (int v = 0; v < n_voxels; ++v) {
        std::snprintf(buf, sizeof buf, "v%04d", v);
        ids.emplace_back(buf);
    }
    return ids;
}

}  // namespace nrf
