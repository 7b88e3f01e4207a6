#include "neurorefine/neuro_eval.hpp"

#include "neurorefine/ridge.hpp"
#include "neurorefine/rng.hpp"
#include "neurorefine/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace nrf {

std::vector<Matrix> window_features(const SpeechBackbone& backbone, const std::vector<StimulusWindow>& windows) {
    if (windows.empty()) throw std::invalid_argument("window_features: no windows");
    const int L1 = backbone.num_layers() + 1;
    std::vector<Matrix> feats(static_cast<std::size_t>(L1));
    for (auto& f : feats) f.resize(static_cast<Eigen::Index>(windows.size()), backbone.dim());
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const std::vector<Matrix> acts = extract_layer_activations(backbone, std::span<const float>(windows[w].samples));
        for (int l = 0; l < L1; ++l)
            feats[static_cast<std::size_t>(l)].row(static_cast<Eigen::Index>(w)) =
                acts[static_cast<std::size_t>(l)].colwise().mean();
    }
    return feats;
}

namespace {

Matrix take_rows(const Matrix& x, const std::vector<int>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    return out;
}

// PCC that reports failure (constant input) instead of throwing.
std::optional<double> safe_pcc(const Vector& x, const Vector& y) {
    if (x.size() < 2) return std::nullopt;
    const double mx = x.mean(), my = y.mean();
    const double sx = (x.array() - mx).square().sum();
    const double sy = (y.array() - my).square().sum();
    if (sx <= 0.0 || sy <= 0.0) return std::nullopt;
    return ((x.array() - mx) * (y.array() - my)).sum() / std::sqrt(sx * sy);
}

void for_each_voxel(int n_voxels, int n_threads, const std::function<void(int)>& body) {
    if (n_threads <= 1) {
        for (int v = 0; v < n_voxels; ++v) body(v);
        return;
    }
    std::vector<std::thread> pool;
    const int chunk = (n_voxels + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
        const int lo = t * chunk;
        const int hi = std::min(n_voxels, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (int v = lo; v < hi; ++v) body(v);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

EncodingScoreReport encoding_scores_from_features(const std::vector<Matrix>& features, const Matrix& bold,
                                                  const DatasetSplit& split, const RidgeOptions& options) {
    if (features.empty()) throw std::invalid_argument("encoding scores: no feature matrices");
    if (options.alpha_grid.empty()) throw std::invalid_argument("encoding scores: empty alpha grid");
    if (split.train.size() < 2 || split.val.size() < 2 || split.test.size() < 2)
        throw std::invalid_argument("encoding scores: degenerate split (need >= 2 TRs in each part)");
    const int V = static_cast<int>(bold.cols());

    std::vector<double> alphas = options.alpha_grid;
    std::sort(alphas.begin(), alphas.end());

    EncodingScoreReport report;
    report.pcc.resize(features.size());
    report.alpha.resize(features.size());

    const Matrix y_train = take_rows(bold, split.train);
    const Matrix y_val = take_rows(bold, split.val);
    const Matrix y_test = take_rows(bold, split.test);
    const Eigen::RowVectorXd y_mean = y_train.colwise().mean();
    const Matrix yc_train = y_train.rowwise() - y_mean;

    for (std::size_t layer = 0; layer < features.size(); ++layer) {
        const Matrix& x = features[layer];
        if (x.rows() != bold.rows())
            throw std::invalid_argument("encoding scores: features and bold disagree on TR count");
        Matrix x_train = take_rows(x, split.train);
        const Eigen::RowVectorXd x_mean = x_train.colwise().mean();
        x_train.rowwise() -= x_mean;
        Matrix x_val = take_rows(x, split.val);
        x_val.rowwise() -= x_mean;
        Matrix x_test = take_rows(x, split.test);
        x_test.rowwise() -= x_mean;

        // one factorization per alpha, all voxels solved together
        std::vector<Matrix> val_pred, test_pred;
        val_pred.reserve(alphas.size());
        test_pred.reserve(alphas.size());
        for (double alpha : alphas) {
            const Matrix w = fit_ridge_multi(x_train, yc_train, alpha);
            val_pred.push_back(x_val * w);
            test_pred.push_back(x_test * w);
        }

        std::vector<double>& pcc_out = report.pcc[layer];
        std::vector<double>& alpha_out = report.alpha[layer];
        pcc_out.assign(static_cast<std::size_t>(V), 0.0);
        alpha_out.assign(static_cast<std::size_t>(V), alphas.back());
        for_each_voxel(V, options.n_threads, [&](int v) {
            double best_score = -std::numeric_limits<double>::infinity();
            std::size_t best_a = alphas.size() - 1;
            for (std::size_t a = 0; a < alphas.size(); ++a) {
                const auto score =
                    safe_pcc(val_pred[a].col(v), (y_val.col(v).array() - y_mean(v)).matrix());
                if (score && *score >= best_score) {  // ties toward larger alpha
                    best_score = *score;
                    best_a = a;
                }
            }
            const auto test_score =
                safe_pcc(test_pred[best_a].col(v), (y_test.col(v).array() - y_mean(v)).matrix());
            pcc_out[static_cast<std::size_t>(v)] = test_score.value_or(0.0);
            alpha_out[static_cast<std::size_t>(v)] = alphas[best_a];
        });
    }

    report.mean_pcc.resize(features.size());
    for (std::size_t layer = 0; layer < features.size(); ++layer)
        report.mean_pcc[layer] =
            std::accumulate(report.pcc[layer].begin(), report.pcc[layer].end(), 0.0) / V;
    report.overall_mean =
        std::accumulate(report.mean_pcc.begin(), report.mean_pcc.end(), 0.0) / static_cast<double>(report.mean_pcc.size());
    return report;
}

EncodingScoreReport layerwise_encoding_scores(const SpeechBackbone& backbone,
                                              const std::vector<StimulusWindow>& windows, const Matrix& bold,
                                              const DatasetSplit& split, const RidgeOptions& options) {
    if (static_cast<Eigen::Index>(windows.size()) != bold.rows())
        throw std::invalid_argument("layerwise_encoding_scores: windows and bold disagree on TR count");
    return encoding_scores_from_features(window_features(backbone, windows), bold, split, options);
}

SweepReport context_sweep(const std::vector<int>& n_values, const BoldSession& session, const Waveform& audio,
                          const DatasetSplit& split, const ToyBackboneConfig& backbone_cfg,
                          const RefineConfig& refine_cfg, const RidgeOptions& ridge) {
    if (n_values.empty()) throw std::invalid_argument("context_sweep: no n values");
    for (std::size_t i = 0; i < n_values.size(); ++i) {
        if (n_values[i] < 1 || n_values[i] > 8)
            throw std::invalid_argument("context_sweep: n must be in 1..8, got " + std::to_string(n_values[i]));
        for (std::size_t j = i + 1; j < n_values.size(); ++j)
            if (n_values[i] == n_values[j])
                throw std::invalid_argument("context_sweep: duplicate n = " + std::to_string(n_values[i]));
    }
    SweepReport report;
    for (int n : n_values) {
        const WindowedDataset data = build_windowed_dataset(session, audio, n, split);
        const ToyBackbone vanilla(backbone_cfg);
        RefineResult result = refine(vanilla, data, refine_cfg);
        const EncodingScoreReport scores =
            layerwise_encoding_scores(result.model.backbone, data.windows, data.targets, split, ridge);
        SweepEntry entry;
        entry.n = n;
        entry.label = n == 1 ? "-context" : std::to_string(n);
        entry.val_mse = result.record_stage2.best_val_mse;
        entry.mean_pcc = scores.overall_mean;
        entry.stage1_best_val_mse = result.record_stage1.best_val_mse;
        entry.stage2_best_val_mse = result.record_stage2.best_val_mse;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

std::vector<int> energy_class_labels(const std::vector<StimulusWindow>& windows, int n_classes) {
    if (n_classes < 2) throw std::invalid_argument("energy_class_labels: need at least 2 classes");
    if (windows.empty()) throw std::invalid_argument("energy_class_labels: no windows");
    const auto n = windows.size();
    std::vector<double> rms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (float s : windows[i].samples) acc += static_cast<double>(s) * s;
        rms[i] = std::sqrt(acc / static_cast<double>(windows[i].samples.size()));
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rms[a] < rms[b]; });
    std::vector<int> labels(n, 0);
    for (std::size_t rank = 0; rank < n; ++rank)
        labels[idx[rank]] = static_cast<int>(rank * static_cast<std::size_t>(n_classes) / n);
    return labels;
}

std::vector<double> probe_layer_weights(const SpeechBackbone& backbone, const std::vector<StimulusWindow>& windows,
                                        const std::vector<int>& labels, int n_classes,
                                        const ProbeOptions& options) {
    if (labels.size() != windows.size()) throw std::invalid_argument("probe: labels/windows length mismatch");
    if (n_classes < 2) throw std::invalid_argument("probe: need at least 2 classes");
    for (int c : labels)
        if (c < 0 || c >= n_classes) throw std::invalid_argument("probe: label out of range");

    std::vector<Matrix> feats = window_features(backbone, windows);
    const int L1 = static_cast<int>(feats.size());
    const int D = backbone.dim();
    const auto N = static_cast<Eigen::Index>(windows.size());

    // per-layer feature standardization keeps the softmax weighting
    // scale-free and the probe well conditioned
    for (Matrix& f : feats) {
        const Eigen::RowVectorXd mean = f.colwise().mean();
        f.rowwise() -= mean;
        for (int c = 0; c < D; ++c) {
            const double sd = std::sqrt(f.col(c).squaredNorm() / static_cast<double>(N));
            if (sd > 0) f.col(c) /= sd;
        }
    }

    Vector logits = Vector::Zero(L1);
    Matrix wc(n_classes, D);
    Vector bc = Vector::Zero(n_classes);
    Rng rng(options.seed);
    for (Eigen::Index i = 0; i < wc.rows(); ++i)
        for (Eigen::Index j = 0; j < wc.cols(); ++j) wc(i, j) = rng.normal(0.0, 0.01);

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        Vector alpha(L1);
        const double mx = logits.maxCoeff();
        alpha = (logits.array() - mx).exp();
        alpha /= alpha.sum();

        Matrix combined = Matrix::Zero(N, D);
        for (int l = 0; l < L1; ++l) combined += alpha(l) * feats[static_cast<std::size_t>(l)];

        Matrix scores = combined * wc.transpose();
        scores.rowwise() += bc.transpose();
        // row-wise softmax + cross entropy
        Matrix probs(N, n_classes);
        double loss = 0.0;
        for (Eigen::Index i = 0; i < N; ++i) {
            const double m = scores.row(i).maxCoeff();
            probs.row(i) = (scores.row(i).array() - m).exp().matrix();
            probs.row(i) /= probs.row(i).sum();
            loss -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
        }
        loss /= static_cast<double>(N);
        if (!std::isfinite(loss)) throw std::runtime_error("probe: training diverged (non-finite loss)");

        Matrix dscores = probs;
        for (Eigen::Index i = 0; i < N; ++i) dscores(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
        dscores /= static_cast<double>(N);

        const Matrix dwc = dscores.transpose() * combined;
        const Vector dbc = dscores.colwise().sum().transpose();
        const Matrix dcombined = dscores * wc;
        Vector dalpha(L1);
        for (int l = 0; l < L1; ++l)
            dalpha(l) = (dcombined.array() * feats[static_cast<std::size_t>(l)].array()).sum();
        const double dot = alpha.dot(dalpha);
        const Vector dlogits = (alpha.array() * (dalpha.array() - dot)).matrix();

        logits -= options.lr * dlogits;
        wc -= options.lr * dwc;
        bc -= options.lr * dbc;
    }

    const double mx = logits.maxCoeff();
    Vector alpha = (logits.array() - mx).exp();
    alpha /= alpha.sum();
    return {alpha.data(), alpha.data() + alpha.size()};
}

std::vector<std::optional<double>> layer_weight_change_rate(const std::vector<double>& w_vanilla,
                                                            const std::vector<double>& w_refined) {
    if (w_vanilla.size() != w_refined.size())
        throw std::invalid_argument("layer_weight_change_rate: length mismatch");
    std::vector<std::optional<double>> rates(w_vanilla.size());
    for (std::size_t l = 0; l < w_vanilla.size(); ++l) {
        if (w_vanilla[l] == 0.0)
            rates[l] = std::nullopt;
        else
            rates[l] = (w_refined[l] - w_vanilla[l]) / w_vanilla[l];
    }
    return rates;
}

}  // namespace nrf
