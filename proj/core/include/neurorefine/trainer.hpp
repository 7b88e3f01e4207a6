#pragma once

#include "neurorefine/backbone.hpp"
#include "neurorefine/dataset.hpp"
#include "neurorefine/encoding_head.hpp"
#include "neurorefine/toy_backbone.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace nrf {

struct StageConfig {
    int stage = 1;
    int epochs = 60;
    double base_lr = 3e-3;  // stage-2 default is 3e-4, see RefineConfig
    double warmup_frac = 0.1;
    double lambda = 1e-2;
    int batch_size = 8;
    std::uint64_t seed = 0;

    enum class Optimizer { Sgd, Adam };
    Optimizer optimizer = Optimizer::Sgd;

    /// Which parameters the L2 penalty covers: everything trainable in the
    /// current stage (default), or only the linear head (ridge convention).
    enum class LambdaScope { Stage, HeadOnly };
    LambdaScope lambda_scope = LambdaScope::Stage;

    void validate() const;
    nlohmann::json to_json() const;
    static StageConfig from_json(const nlohmann::json& j);
};

struct TrainRecord {
    int stage = 0;
    int steps_per_epoch = 0;
    std::vector<double> train_loss;     // per epoch, full objective averaged over steps
    std::vector<double> train_mse;      // per epoch, data term averaged over steps
    std::vector<double> val_mse;        // per epoch, frozen-statistics eval
    std::vector<double> lr_trace;       // per step
    std::vector<double> epoch_seconds;  // wall time; never hashed into manifests
    int best_epoch = -1;
    double best_val_mse = 0.0;
    double final_train_mse = 0.0;  // eval-mode train MSE of the returned model

    /// Deterministic part (no wall times), one row per epoch.
    void save_csv(const std::string& path) const;
    /// Wall-time log, kept separate so run artifacts stay bit-reproducible.
    void save_timing_csv(const std::string& path) const;
};

/// Mean over elements of the squared error plus lambda * sum of squared
/// trainable parameter values.
double l2_mse_loss(const Vector& pred, const Vector& target, const ParamRegistry& params, double lambda);

/// Piecewise-linear schedule: 0 -> base_lr over the first warmup_frac of
/// steps, then base_lr -> 0 over the remainder. Step-granular.
double lr_at_step(long step, long total_steps, double base_lr, double warmup_frac);

/// Backbone + encoding head trained as one model.
struct EncodingModel {
    ToyBackbone backbone;
    EncodingHead head;
    bool stage1_done = false;

    EncodingModel(ToyBackbone bb, EncodingHead h) : backbone(std::move(bb)), head(std::move(h)) {}

    /// backbone + head parameters, in registration order
    ParamRegistry all_params();

    void save_checkpoint(const std::string& path, const nlohmann::json& extra_meta = {}) const;
    static EncodingModel load_checkpoint(const std::string& path);
};

/// One optimization stage. Stage 1 updates only the linear output layer;
/// stage 2 freezes it and updates everything else (backbone included).
/// Validation MSE is evaluated each epoch with freshly calibrated statistics
/// and the best-validation parameters are restored at the end.
TrainRecord run_stage(EncodingModel& model, const WindowedDataset& data, const StageConfig& cfg);

struct LambdaReport {
    struct Row {
        double lambda;
        double val_mse;
    };
    std::vector<Row> rows;
    double best_lambda = 0.0;
};

/// Grid search over the L2 weight; `train_and_score` maps lambda to a
/// validation MSE. Ties prefer the larger lambda; an all-NaN grid is an error.
LambdaReport tune_lambda(const std::vector<double>& grid,
                         const std::function<double(double)>& train_and_score);

struct RefineConfig {
    StageConfig stage1;
    StageConfig stage2;
    std::uint64_t head_seed = 7;
    std::vector<double> lambda_grid;  // non-empty -> tune on stage-1 val MSE first

    RefineConfig();
    void validate() const;
    nlohmann::json to_json() const;
    static RefineConfig from_json(const nlohmann::json& j);
};

struct RefineResult {
    EncodingModel model;  // refined (post-stage-2, best-val)
    ParamSnapshot snap_vanilla;  // backbone+head before any training
    ParamSnapshot snap_stage1;
    ParamSnapshot snap_stage2;
    TrainRecord record_stage1;
    TrainRecord record_stage2;
    LambdaReport lambda_report;  // empty rows when no grid was given
};

/// The full two-stage refinement starting from a vanilla backbone and a
/// freshly initialized head. Deterministic under fixed config and seeds.
RefineResult refine(const ToyBackbone& vanilla, const WindowedDataset& data, const RefineConfig& cfg);

}  // namespace nrf
