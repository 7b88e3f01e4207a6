#include "neurorefine/trainer.hpp"

#include "neurorefine/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace nrf {

void StageConfig::validate() const {
    if (stage != 1 && stage != 2) throw std::invalid_argument("StageConfig: stage must be 1 or 2");
    if (epochs < 1) throw std::invalid_argument("StageConfig: epochs must be >= 1");
    if (base_lr <= 0) throw std::invalid_argument("StageConfig: base_lr must be > 0");
    if (!(warmup_frac > 0 && warmup_frac < 1))
        throw std::invalid_argument("StageConfig: warmup_frac must be in (0, 1)");
    if (lambda < 0) throw std::invalid_argument("StageConfig: lambda must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("StageConfig: batch_size must be >= 2");
}

nlohmann::json StageConfig::to_json() const {
    return nlohmann::json{{"stage", stage},
                          {"epochs", epochs},
                          {"base_lr", base_lr},
                          {"warmup_frac", warmup_frac},
                          {"lambda", lambda},
                          {"batch_size", batch_size},
                          {"seed", seed},
                          {"optimizer", optimizer == Optimizer::Sgd ? "sgd" : "adam"},
                          {"lambda_scope", lambda_scope == LambdaScope::Stage ? "stage" : "head_only"}};
}

StageConfig StageConfig::from_json(const nlohmann::json& j) {
    StageConfig cfg;
    cfg.stage = j.at("stage").get<int>();
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.base_lr = j.value("base_lr", cfg.stage == 2 ? 3e-4 : 3e-3);
    cfg.warmup_frac = j.value("warmup_frac", cfg.warmup_frac);
    cfg.lambda = j.value("lambda", cfg.lambda);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    const std::string opt = j.value("optimizer", "sgd");
    if (opt == "sgd")
        cfg.optimizer = Optimizer::Sgd;
    else if (opt == "adam")
        cfg.optimizer = Optimizer::Adam;
    else
        throw std::invalid_argument("StageConfig: unknown optimizer '" + opt + "'");
    const std::string scope = j.value("lambda_scope", "stage");
    if (scope == "stage")
        cfg.lambda_scope = LambdaScope::Stage;
    else if (scope == "head_only")
        cfg.lambda_scope = LambdaScope::HeadOnly;
    else
        throw std::invalid_argument("StageConfig: unknown lambda_scope '" + scope + "'");
    cfg.validate();
    return cfg;
}

void TrainRecord::save_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("TrainRecord::save_csv: cannot open " + path);
    f.precision(17);
    f << "epoch,train_loss,train_mse,val_mse\n";
    for (std::size_t e = 0; e < train_loss.size(); ++e)
        f << e << ',' << train_loss[e] << ',' << train_mse[e] << ',' << val_mse[e] << '\n';
}

void TrainRecord::save_timing_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("TrainRecord::save_timing_csv: cannot open " + path);
    f << "epoch,seconds\n";
    for (std::size_t e = 0; e < epoch_seconds.size(); ++e) f << e << ',' << epoch_seconds[e] << '\n';
}

double l2_mse_loss(const Vector& pred, const Vector& target, const ParamRegistry& params, double lambda) {
    if (pred.size() != target.size())
        throw std::invalid_argument("l2_mse_loss: pred has " + std::to_string(pred.size()) + " elements, target " +
                                    std::to_string(target.size()));
    if (pred.size() == 0) throw std::invalid_argument("l2_mse_loss: empty vectors");
    const double mse = (pred - target).squaredNorm() / static_cast<double>(pred.size());
    double reg = 0.0;
    for (const Param* p : params.items()) reg += p->value.vec().squaredNorm();
    return mse + lambda * reg;
}

double lr_at_step(long step, long total_steps, double base_lr, double warmup_frac) {
    if (total_steps < 1) throw std::invalid_argument("lr_at_step: total_steps must be >= 1");
    if (step < 0 || step > total_steps)
        throw std::out_of_range("lr_at_step: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total_steps) + "]");
    if (!(warmup_frac > 0 && warmup_frac < 1)) throw std::invalid_argument("lr_at_step: warmup_frac in (0,1)");
    if (total_steps == 1) return 0.0;  // both endpoints pin to zero
    long warmup = std::lround(warmup_frac * static_cast<double>(total_steps));
    warmup = std::clamp(warmup, 1L, total_steps - 1);
    if (step <= warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    return base_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

ParamRegistry EncodingModel::all_params() {
    ParamRegistry reg;
    reg.merge(backbone.params());
    reg.merge(head.params());
    return reg;
}

void EncodingModel::save_checkpoint(const std::string& path, const nlohmann::json& extra_meta) const {
    Checkpoint ck;
    backbone.save_into(ck);
    head.save_into(ck);
    ck.meta["stage1_done"] = stage1_done;
    if (!extra_meta.is_null())
        for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) ck.meta[it.key()] = it.value();
    ck.save(path);
}

EncodingModel EncodingModel::load_checkpoint(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    EncodingModel model(ToyBackbone::from_checkpoint(ck), EncodingHead::from_checkpoint(ck));
    model.stage1_done = ck.meta.value("stage1_done", false);
    return model;
}

namespace {

struct AdamState {
    std::vector<Tensor> m, v;
    long t = 0;
};

void apply_update(const ParamRegistry& trainable, const ParamRegistry& regularized, double lr, double lambda,
                  StageConfig::Optimizer opt, AdamState& adam) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (opt == StageConfig::Optimizer::Adam && adam.m.empty()) {
        for (const Param* p : trainable.items()) {
            adam.m.emplace_back(p->value.shape);
            adam.v.emplace_back(p->value.shape);
        }
    }
    if (opt == StageConfig::Optimizer::Adam) ++adam.t;
    for (std::size_t i = 0; i < trainable.size(); ++i) {
        Param* p = trainable.at(i);
        const bool reg = regularized.find(p->name) != nullptr;
        for (std::size_t k = 0; k < p->value.data.size(); ++k) {
            double g = p->grad.data[k];
            if (reg) g += 2.0 * lambda * p->value.data[k];
            if (opt == StageConfig::Optimizer::Sgd) {
                p->value.data[k] -= lr * g;
            } else {
                double& m = adam.m[i].data[k];
                double& v = adam.v[i].data[k];
                m = beta1 * m + (1.0 - beta1) * g;
                v = beta2 * v + (1.0 - beta2) * g * g;
                const double mhat = m / (1.0 - std::pow(beta1, static_cast<double>(adam.t)));
                const double vhat = v / (1.0 - std::pow(beta2, static_cast<double>(adam.t)));
                p->value.data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
}

double reg_sum_squares(const ParamRegistry& regularized) {
    double s = 0.0;
    for (const Param* p : regularized.items()) s += p->value.vec().squaredNorm();
    return s;
}

}  // namespace

TrainRecord run_stage(EncodingModel& model, const WindowedDataset& data, const StageConfig& cfg) {
    cfg.validate();
    if (cfg.stage == 2 && !model.stage1_done)
        throw std::logic_error("run_stage: stage 2 requires a stage-1-trained head");
    const auto& split = data.split;
    if (split.train.empty() || split.val.empty())
        throw std::invalid_argument("run_stage: empty train or val split");
    const int n_train = static_cast<int>(split.train.size());
    if (n_train < 2) throw std::invalid_argument("run_stage: need at least 2 training TRs");
    if (data.n != model.head.config().n)
        throw std::invalid_argument("run_stage: dataset windows use n=" + std::to_string(data.n) +
                                    " but head expects n=" + std::to_string(model.head.config().n));

    const int V = data.n_voxels();
    const int B = std::min(cfg.batch_size, n_train);
    const int steps_per_epoch = n_train / B;
    const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;

    ParamRegistry trainable;
    if (cfg.stage == 1) {
        trainable = model.head.linear_params();
    } else {
        trainable.merge(model.backbone.params());
        const ParamRegistry head_nl = model.head.non_linear_params();
        trainable.merge(head_nl);
    }
    const ParamRegistry regularized =
        cfg.lambda_scope == StageConfig::LambdaScope::HeadOnly ? model.head.linear_params() : trainable;

    // stage 1 freezes the backbone, so its activations can be computed once
    std::vector<Matrix> cached_acts;
    if (cfg.stage == 1) {
        cached_acts.resize(data.windows.size());
        for (std::size_t t = 0; t < data.windows.size(); ++t)
            cached_acts[t] = model.backbone.final_layer_activations(data.windows[t].samples);
    }
    auto recompute_acts = [&](const std::vector<int>& indices, std::vector<Matrix>& out) {
        // fills only the requested TRs; out is indexed by TR
        out.resize(data.windows.size());
        for (int t : indices) out[static_cast<std::size_t>(t)] =
            model.backbone.final_layer_activations(data.windows[static_cast<std::size_t>(t)].samples);
    };

    TrainRecord rec;
    rec.stage = cfg.stage;
    rec.steps_per_epoch = steps_per_epoch;
    AdamState adam;
    long step = 0;

    EncodingModel best = model;
    rec.best_val_mse = std::numeric_limits<double>::infinity();

    std::vector<int> order = split.train;
    std::vector<Matrix> epoch_acts;  // stage 2 scratch
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng(derive_seed(cfg.seed, (static_cast<std::uint64_t>(cfg.stage) << 32) ^
                                                  static_cast<std::uint64_t>(epoch)));
        order = split.train;
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0, epoch_mse = 0.0;
        for (int s = 0; s < steps_per_epoch; ++s) {
            const double lr = lr_at_step(step, total_steps, cfg.base_lr, cfg.warmup_frac);
            rec.lr_trace.push_back(lr);

            std::vector<Matrix> batch_acts(static_cast<std::size_t>(B));
            std::vector<ToyBackbone::Cache> bb_caches(cfg.stage == 2 ? static_cast<std::size_t>(B) : 0);
            Matrix targets(B, V);
            for (int b = 0; b < B; ++b) {
                const int tr = order[static_cast<std::size_t>(s * B + b)];
                targets.row(b) = data.targets.row(tr);
                if (cfg.stage == 1) {
                    batch_acts[static_cast<std::size_t>(b)] = cached_acts[static_cast<std::size_t>(tr)];
                } else {
                    batch_acts[static_cast<std::size_t>(b)] = model.backbone.forward_train(
                        data.windows[static_cast<std::size_t>(tr)].samples, bb_caches[static_cast<std::size_t>(b)]);
                }
            }

            EncodingHead::Cache head_cache;
            Matrix pred = model.head.forward_train(batch_acts, head_cache);
            Matrix diff = pred - targets;
            const double denom = static_cast<double>(B) * V;
            const double mse = diff.squaredNorm() / denom;
            Matrix d_pred = (2.0 / denom) * diff;

            std::vector<Matrix> d_acts = model.head.backward(d_pred, head_cache);
            if (cfg.stage == 2)
                for (int b = 0; b < B; ++b)
                    model.backbone.backward(d_acts[static_cast<std::size_t>(b)], bb_caches[static_cast<std::size_t>(b)]);

            epoch_mse += mse;
            epoch_loss += mse + cfg.lambda * reg_sum_squares(regularized);

            apply_update(trainable, regularized, lr, cfg.lambda, cfg.optimizer, adam);
            model.backbone.params().zero_grad();
            model.head.params().zero_grad();
            ++step;
        }
        rec.train_loss.push_back(epoch_loss / steps_per_epoch);
        rec.train_mse.push_back(epoch_mse / steps_per_epoch);

        // frozen-statistics evaluation on the validation split
        const std::vector<Matrix>* acts = &cached_acts;
        if (cfg.stage == 2) {
            std::vector<int> need = split.train;
            need.insert(need.end(), split.val.begin(), split.val.end());
            recompute_acts(need, epoch_acts);
            acts = &epoch_acts;
        }
        model.head.calibrate(*acts, split.train);
        double val_mse = 0.0;
        for (int t : split.val) {
            const Vector p = model.head.forward_eval((*acts)[static_cast<std::size_t>(t)]);
            val_mse += (p - data.targets.row(t).transpose()).squaredNorm();
        }
        val_mse /= static_cast<double>(split.val.size()) * V;
        rec.val_mse.push_back(val_mse);
        if (val_mse < rec.best_val_mse) {
            rec.best_val_mse = val_mse;
            rec.best_epoch = epoch;
            best = model;
        }
        rec.epoch_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }

    model = best;
    if (cfg.stage == 1) model.stage1_done = true;

    // eval-mode train MSE of the returned model (statistics were frozen at
    // the best epoch's calibration)
    const std::vector<Matrix>* acts = &cached_acts;
    if (cfg.stage == 2) {
        recompute_acts(split.train, epoch_acts);
        acts = &epoch_acts;
    }
    double train_mse = 0.0;
    for (int t : split.train) {
        const Vector p = model.head.forward_eval((*acts)[static_cast<std::size_t>(t)]);
        train_mse += (p - data.targets.row(t).transpose()).squaredNorm();
    }
    rec.final_train_mse = train_mse / (static_cast<double>(n_train) * V);
    return rec;
}

LambdaReport tune_lambda(const std::vector<double>& grid,
                         const std::function<double(double)>& train_and_score) {
    if (grid.empty()) throw std::invalid_argument("tune_lambda: empty grid");
    LambdaReport report;
    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    double best_val = std::numeric_limits<double>::infinity();
    bool any = false;
    for (double lambda : sorted) {
        const double val = train_and_score(lambda);
        report.rows.push_back({lambda, val});
        if (std::isnan(val)) continue;
        any = true;
        if (val <= best_val) {  // ties break toward larger lambda
            best_val = val;
            report.best_lambda = lambda;
        }
    }
    if (!any) throw std::runtime_error("tune_lambda: validation loss was NaN for every lambda");
    return report;
}

RefineConfig::RefineConfig() {
    stage1.stage = 1;
    stage1.base_lr = 3e-3;
    stage2.stage = 2;
    stage2.base_lr = 3e-4;
}

void RefineConfig::validate() const {
    if (stage1.stage != 1 || stage2.stage != 2)
        throw std::invalid_argument("RefineConfig: stage1/stage2 have wrong stage tags");
    stage1.validate();
    stage2.validate();
    for (double l : lambda_grid)
        if (l < 0) throw std::invalid_argument("RefineConfig: negative lambda in grid");
}

nlohmann::json RefineConfig::to_json() const {
    nlohmann::json j;
    j["stage1"] = stage1.to_json();
    j["stage2"] = stage2.to_json();
    j["head_seed"] = head_seed;
    j["lambda_grid"] = lambda_grid;
    return j;
}

RefineConfig RefineConfig::from_json(const nlohmann::json& j) {
    RefineConfig cfg;
    if (j.contains("stage1")) cfg.stage1 = StageConfig::from_json(j["stage1"]);
    if (j.contains("stage2")) cfg.stage2 = StageConfig::from_json(j["stage2"]);
    cfg.stage1.stage = 1;
    cfg.stage2.stage = 2;
    cfg.head_seed = j.value("head_seed", cfg.head_seed);
    cfg.lambda_grid = j.value("lambda_grid", cfg.lambda_grid);
    cfg.validate();
    return cfg;
}

RefineResult refine(const ToyBackbone& vanilla, const WindowedDataset& data, const RefineConfig& cfg) {
    cfg.validate();
    EncodingHeadConfig head_cfg;
    head_cfg.n = data.n;
    head_cfg.dim = vanilla.dim();
    head_cfg.n_voxels = data.n_voxels();
    head_cfg.seed = cfg.head_seed;

    EncodingModel model(vanilla, EncodingHead(head_cfg));
    RefineResult result{model, {}, {}, {}, {}, {}, {}};
    result.snap_vanilla = snapshot_params(result.model.all_params());

    StageConfig s1 = cfg.stage1;
    StageConfig s2 = cfg.stage2;
    if (!cfg.lambda_grid.empty()) {
        result.lambda_report = tune_lambda(cfg.lambda_grid, [&](double lambda) {
            EncodingModel trial(vanilla, EncodingHead(head_cfg));
            StageConfig trial_cfg = s1;
            trial_cfg.lambda = lambda;
            const TrainRecord r = run_stage(trial, data, trial_cfg);
            return r.best_val_mse;
        });
        s1.lambda = result.lambda_report.best_lambda;
        s2.lambda = result.lambda_report.best_lambda;
    }

    result.record_stage1 = run_stage(result.model, data, s1);
    result.snap_stage1 = snapshot_params(result.model.all_params());
    result.record_stage2 = run_stage(result.model, data, s2);
    result.snap_stage2 = snapshot_params(result.model.all_params());
    return result;
}

}  // namespace nrf
