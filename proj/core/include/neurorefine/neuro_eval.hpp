#pragma once

#include "neurorefine/backbone.hpp"
#include "neurorefine/bold.hpp"
#include "neurorefine/dataset.hpp"
#include "neurorefine/tensor.hpp"
#include "neurorefine/toy_backbone.hpp"
#include "neurorefine/trainer.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nrf {

struct RidgeOptions {
    std::vector<double> alpha_grid = {1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
    int n_threads = 1;  // per-voxel work is schedule-independent
};

struct EncodingScoreReport {
    std::vector<std::vector<double>> pcc;    // [layer][voxel] held-out PCC
    std::vector<std::vector<double>> alpha;  // [layer][voxel] selected ridge alpha
    std::vector<double> mean_pcc;            // per layer
    double overall_mean = 0.0;               // mean over layers of mean_pcc

    int n_layers() const { return static_cast<int>(pcc.size()); }
};

/// Time-averaged activations per window: one n_windows x D matrix per layer
/// (index 0 = latents). The regression features for all Fig. 3(b)-style
/// analyses.
std::vector<Matrix> window_features(const SpeechBackbone& backbone, const std::vector<StimulusWindow>& windows);

/// Voxelwise ridge/PCC encoding scores per layer: fit on train, alpha chosen
/// per voxel by validation PCC (ties toward larger alpha), PCC reported on
/// test. X and y are centered on training statistics.
EncodingScoreReport layerwise_encoding_scores(const SpeechBackbone& backbone,
                                              const std::vector<StimulusWindow>& windows, const Matrix& bold,
                                              const DatasetSplit& split, const RidgeOptions& options = {});

/// Same scoring for precomputed per-layer feature matrices.
EncodingScoreReport encoding_scores_from_features(const std::vector<Matrix>& features, const Matrix& bold,
                                                  const DatasetSplit& split, const RidgeOptions& options = {});

struct SweepEntry {
    int n = 1;
    std::string label;  // "-context" for n = 1
    double val_mse = 0.0;
    double mean_pcc = 0.0;
    double stage1_best_val_mse = 0.0;
    double stage2_best_val_mse = 0.0;
};

struct SweepReport {
    std::vector<SweepEntry> entries;
};

/// Runs the full two-stage refinement per requested context length and
/// collects validation MSE plus the refined backbone's mean encoding PCC.
SweepReport context_sweep(const std::vector<int>& n_values, const BoldSession& session, const Waveform& audio,
                          const DatasetSplit& split, const ToyBackboneConfig& backbone_cfg,
                          const RefineConfig& refine_cfg, const RidgeOptions& ridge = {});

struct ProbeOptions {
    int epochs = 300;
    double lr = 0.5;
    std::uint64_t seed = 11;
};

/// SUPERB-style layer-weight probe: with the backbone frozen, trains a
/// softmax-weighted sum of per-layer window features plus a small linear
/// classifier, and returns the normalized (non-negative, sum-1) layer
/// weights. Labels are class indices in [0, n_classes).
std::vector<double> probe_layer_weights(const SpeechBackbone& backbone, const std::vector<StimulusWindow>& windows,
                                        const std::vector<int>& labels, int n_classes,
                                        const ProbeOptions& options = {});

/// Toy probe task: window RMS energy, quantile-binned into n_classes.
std::vector<int> energy_class_labels(const std::vector<StimulusWindow>& windows, int n_classes);

/// rate_l = (w_refined[l] - w_vanilla[l]) / w_vanilla[l]; nullopt where the
/// vanilla weight is zero.
std::vector<std::optional<double>> layer_weight_change_rate(const std::vector<double>& w_vanilla,
                                                            const std::vector<double>& w_refined);

/// Per-task probe weights for a vanilla/refined pair plus their change rates.
struct ProbeReport {
    std::vector<std::string> tasks;
    std::map<std::string, std::vector<double>> vanilla_weights;
    std::map<std::string, std::vector<double>> refined_weights;
    std::map<std::string, std::vector<std::optional<double>>> change_rates;
};

}  // namespace nrf
