#include "commands.hpp"

#include "neurorefine/backbone.hpp"
#include "neurorefine/bold.hpp"
#include "neurorefine/dataset.hpp"
#include "neurorefine/encoding_head.hpp"
#include "neurorefine/manifest.hpp"
#include "neurorefine/neuro_eval.hpp"
#include "neurorefine/rng.hpp"
#include "neurorefine/stats.hpp"
#include "neurorefine/superb.hpp"
#include "neurorefine/svg.hpp"
#include "neurorefine/synth.hpp"
#include "neurorefine/toy_backbone.hpp"
#include "neurorefine/trainer.hpp"
#include "neurorefine/wav.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace nrf::cli {

namespace fs = std::filesystem;

namespace {

const nlohmann::json& require(const nlohmann::json& cfg, const char* key, const char* what) {
    if (!cfg.contains(key))
        throw std::runtime_error(std::string(what) + " config: missing field '" + key + "'");
    return cfg.at(key);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << text;
}

void write_run_json(const fs::path& dir, const nlohmann::json& cfg) {
    write_text(dir / "run.json", cfg.dump(2) + "\n");
}

void finalize_manifest(const fs::path& dir, const std::vector<std::string>& artifacts) {
    Manifest m;
    for (const auto& rel : artifacts) m.add_file(dir.string(), rel);
    m.save((dir / "manifest.json").string());
}

ToyBackboneConfig backbone_config_from(const nlohmann::json& j) {
    ToyBackboneConfig cfg = ToyBackboneConfig::scaled(j.value("dim", 64), j.value("n_layers", 4),
                                                      j.value("n_heads", 4), j.value("seed", 1234ull));
    cfg.ffn_mult = j.value("ffn_mult", cfg.ffn_mult);
    cfg.init_scale = j.value("init_scale", cfg.init_scale);
    if (j.contains("conv_channels")) cfg.conv_channels = j.at("conv_channels").get<std::vector<int>>();
    if (j.contains("conv_strides")) cfg.conv_strides = j.at("conv_strides").get<std::vector<int>>();
    cfg.validate();
    return cfg;
}

HrfParams hrf_params_from(const nlohmann::json& j) {
    HrfParams p;
    p.peak_seconds = j.value("peak_seconds", p.peak_seconds);
    p.undershoot_seconds = j.value("undershoot_seconds", p.undershoot_seconds);
    p.undershoot_ratio = j.value("undershoot_ratio", p.undershoot_ratio);
    p.duration_seconds = j.value("duration_seconds", p.duration_seconds);
    p.dt = j.value("dt", p.dt);
    return p;
}

struct LoadedDataset {
    BoldSession session;
    Waveform audio;
    DatasetSplit split;
};

LoadedDataset load_dataset_dir(const std::string& dir) {
    LoadedDataset d;
    d.session = load_bold_bundle(dir + "/session.bold");
    d.audio = load_wav(dir + "/stimulus.wav");
    std::ifstream f(dir + "/split.json");
    if (!f) throw std::runtime_error("dataset dir " + dir + " has no split.json (run `prepare` first)");
    nlohmann::json j;
    f >> j;
    d.split.train = j.at("train").get<std::vector<int>>();
    d.split.val = j.at("val").get<std::vector<int>>();
    d.split.test = j.at("test").get<std::vector<int>>();
    d.split.seed = j.value("seed", 0ull);
    if (j.contains("ratios")) {
        const auto r = j.at("ratios").get<std::vector<double>>();
        if (r.size() == 3) d.split.ratios = {r[0], r[1], r[2]};
    }
    d.split.mode = j.value("mode", std::string("shuffled")) == "contiguous" ? SplitMode::Contiguous
                                                                            : SplitMode::Shuffled;
    return d;
}

void save_split_json(const fs::path& path, const DatasetSplit& split) {
    nlohmann::json j;
    j["train"] = split.train;
    j["val"] = split.val;
    j["test"] = split.test;
    j["seed"] = split.seed;
    j["ratios"] = std::vector<double>{split.ratios[0], split.ratios[1], split.ratios[2]};
    j["mode"] = split.mode == SplitMode::Contiguous ? "contiguous" : "shuffled";
    write_text(path, j.dump(2) + "\n");
}

StageConfig stage_config_from(const nlohmann::json& cfg, int stage) {
    nlohmann::json j = cfg.value(stage == 1 ? "stage1" : "stage2", nlohmann::json::object());
    j["stage"] = stage;
    if (!j.contains("base_lr")) j["base_lr"] = stage == 1 ? 3e-3 : 3e-4;
    return StageConfig::from_json(j);
}

std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

void write_param_change_reports(const fs::path& dir, const ParamSnapshot& before, const ParamSnapshot& after,
                                ChangeMetric metric, std::vector<std::string>& artifacts) {
    {
        std::ofstream f(dir / "reports" / "param_change_full.csv", std::ios::trunc);
        f.precision(12);
        f << "name,change_pct,defined\n";
        for (const auto& c : param_change_pct(before, after, metric))
            f << c.name << ',' << c.pct << ',' << (c.defined ? 1 : 0) << '\n';
    }
    artifacts.push_back("reports/param_change_full.csv");

    const auto qkv = attention_change_report(before, after, metric);
    {
        std::ofstream f(dir / "reports" / "param_change_qkv.csv", std::ios::trunc);
        f.precision(12);
        f << "layer,param,kind,change_pct\n";
        for (const auto& c : qkv) f << c.layer << ',' << c.param << ',' << c.kind << ',' << c.pct << '\n';
    }
    artifacts.push_back("reports/param_change_qkv.csv");

    if (!qkv.empty()) {
        int n_layers = 0;
        for (const auto& c : qkv) n_layers = std::max(n_layers, c.layer + 1);
        std::vector<std::string> layer_labels;
        for (int l = 0; l < n_layers; ++l) layer_labels.push_back("layer " + std::to_string(l));
        std::vector<ChartSeries> series;
        for (const char* p : {"Q", "K", "V"})
            for (const char* k : {"weight", "bias"}) {
                ChartSeries s;
                s.name = std::string(p) + " " + k;
                s.values.assign(static_cast<std::size_t>(n_layers), 0.0);
                for (const auto& c : qkv)
                    if (c.param == p && c.kind == k) s.values[static_cast<std::size_t>(c.layer)] = c.pct;
                series.push_back(std::move(s));
            }
        write_bar_chart((dir / "figures" / "param_change.svg").string(),
                        "Attention parameter change after refinement (%)", layer_labels, series);
        artifacts.push_back("figures/param_change.svg");
    }
}

}  // namespace

std::string resolve_out_dir(const std::string& out_dir) {
    fs::path out(out_dir);
    if (out.is_relative()) {
        if (const char* root = std::getenv("NEUROREFINE_OUTPUT_ROOT")) out = fs::path(root) / out;
    }
    fs::create_directories(out);
    return out.string();
}

int cmd_synth(const nlohmann::json& cfg) {
    const fs::path out(resolve_out_dir(require(cfg, "out_dir", "synth").get<std::string>()));

    SynthSpec spec;
    spec.n_trs = require(cfg, "n_trs", "synth").get<int>();
    spec.n_voxels = require(cfg, "n_voxels", "synth").get<int>();
    spec.noise_std = cfg.value("noise_std", 0.0);
    spec.seed = cfg.value("seed", 0ull);
    const std::string teacher = cfg.value("teacher", "hrf_envelope");
    spec.teacher = teacher == "linear_backbone" ? SynthSpec::Teacher::LinearBackbone
                                                : SynthSpec::Teacher::HrfEnvelope;
    spec.validate();

    write_run_json(out, cfg);
    const Waveform wav = gen_stimulus(spec.n_trs * spec.tr_seconds, spec.seed, spec.tr_seconds);
    save_wav(wav, (out / "stimulus.wav").string());

    nlohmann::json teacher_json;
    teacher_json["mode"] = teacher;
    teacher_json["noise_std"] = spec.noise_std;
    teacher_json["seed"] = spec.seed;

    if (spec.teacher == SynthSpec::Teacher::HrfEnvelope) {
        const HrfParams hrf = hrf_params_from(cfg.value("hrf", nlohmann::json::object()));
        const SynthBoldResult result = synth_bold_hrf(wav, spec, double_gamma_hrf(hrf));
        save_bold_bundle(result.session, (out / "session.bold").string());
        std::vector<double> readout(result.readout.data(), result.readout.data() + result.readout.size());
        teacher_json["readout"] = readout;
        std::vector<double> feats(result.features.data(), result.features.data() + result.features.size());
        teacher_json["features"] = feats;
        teacher_json["hrf"] = {{"peak_seconds", hrf.peak_seconds},
                               {"undershoot_seconds", hrf.undershoot_seconds},
                               {"undershoot_ratio", hrf.undershoot_ratio},
                               {"duration_seconds", hrf.duration_seconds},
                               {"dt", hrf.dt}};
    } else {
        const int n = cfg.value("n", 2);
        ToyBackbone backbone(backbone_config_from(cfg.value("backbone", nlohmann::json::object())));
        EncodingHeadConfig head_cfg;
        head_cfg.n = n;
        head_cfg.dim = backbone.dim();
        head_cfg.n_voxels = spec.n_voxels;
        head_cfg.seed = derive_seed(spec.seed, 2);
        EncodingHead head(head_cfg);
        Rng rng(derive_seed(spec.seed, 3));
        Matrix w(backbone.dim(), spec.n_voxels);
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal(0.0, 0.5);
        const TeacherBoldResult result =
            linear_teacher_bold(backbone, head, wav, n, w, spec.noise_std, derive_seed(spec.seed, 4), spec.tr_seconds);
        save_bold_bundle(result.session, (out / "session.bold").string());
        std::vector<double> weights(w.data(), w.data() + w.size());
        teacher_json["true_weights"] = weights;
        teacher_json["n"] = n;
        teacher_json["backbone"] = backbone.config().to_json();
        teacher_json["head"] = head_cfg.to_json();
    }
    write_text(out / "teacher.json", teacher_json.dump(2) + "\n");

    finalize_manifest(out, {"run.json", "stimulus.wav", "session.bold", "session.json", "teacher.json"});
    std::cout << "synth: wrote " << out.string() << " (" << spec.n_trs << " TRs, " << spec.n_voxels
              << " voxels)\n";
    return 0;
}

int cmd_prepare(const nlohmann::json& cfg) {
    const fs::path out(resolve_out_dir(require(cfg, "out_dir", "prepare").get<std::string>()));

    std::vector<std::string> bundle_paths;
    if (cfg.contains("bundles"))
        bundle_paths = cfg.at("bundles").get<std::vector<std::string>>();
    else
        bundle_paths.push_back(require(cfg, "bundle", "prepare").get<std::string>());
    const std::string wav_path = require(cfg, "wav", "prepare").get<std::string>();

    std::vector<BoldSession> sessions;
    for (const auto& p : bundle_paths) sessions.push_back(load_bold_bundle(p));

    const std::string subject_mode = cfg.value("subject_mode", "average");
    if (subject_mode != "average" && subject_mode != "individual")
        throw std::runtime_error("prepare config: subject_mode must be 'average' or 'individual'");
    BoldSession session = subject_mode == "average" && sessions.size() > 1 ? average_subjects(sessions)
                                                                           : sessions.front();
    if (subject_mode == "individual" && sessions.size() > 1)
        throw std::runtime_error("prepare: individual subject mode expects one bundle per invocation");

    // optional ROI selection against an atlas
    if (cfg.contains("atlas")) {
        const RoiAtlas atlas = load_atlas_csv(cfg.at("atlas").get<std::string>());
        std::set<std::string> rois;
        for (const auto& r : require(cfg, "rois", "prepare")) rois.insert(r.get<std::string>());
        session = restrict_voxels(session, select_roi_voxels(atlas, rois));
    }

    const auto ratios_v = cfg.value("ratios", std::vector<double>{0.8, 0.1, 0.1});
    if (ratios_v.size() != 3) throw std::runtime_error("prepare config: ratios must have 3 entries");
    const std::array<double, 3> ratios{ratios_v[0], ratios_v[1], ratios_v[2]};
    const std::uint64_t seed = cfg.value("seed", 0ull);
    const DatasetSplit split = cfg.value("split_mode", "shuffled") == "contiguous"
                                   ? split_trs_contiguous(session.n_trs(), ratios)
                                   : split_trs(session.n_trs(), ratios, seed);

    if (cfg.value("standardize", true)) session = zscore_per_voxel(session, split.train);

    write_run_json(out, cfg);
    save_bold_bundle(session, (out / "session.bold").string());
    const Waveform wav = load_wav(wav_path);
    save_wav(wav, (out / "stimulus.wav").string());
    save_split_json(out / "split.json", split);

    nlohmann::json meta;
    meta["n_trs"] = session.n_trs();
    meta["n_voxels"] = session.n_voxels();
    meta["tr_seconds"] = session.tr_seconds;
    meta["standardized"] = session.standardized;
    meta["subject_mode"] = subject_mode;
    meta["source_bundles"] = bundle_paths;
    write_text(out / "dataset.json", meta.dump(2) + "\n");

    finalize_manifest(out, {"run.json", "session.bold", "session.json", "stimulus.wav", "split.json",
                            "dataset.json"});
    std::cout << "prepare: dataset at " << out.string() << " (" << session.n_trs() << " TRs, "
              << session.n_voxels() << " voxels, train/val/test " << split.train.size() << "/"
              << split.val.size() << "/" << split.test.size() << ")\n";
    return 0;
}

int cmd_refine(const nlohmann::json& cfg) {
    const fs::path out(resolve_out_dir(require(cfg, "out_dir", "refine").get<std::string>()));
    const std::string dataset_dir = require(cfg, "dataset_dir", "refine").get<std::string>();
    const int n = require(cfg, "n", "refine").get<int>();

    const std::string config_dump = cfg.dump(2) + "\n";
    const std::string config_hash = sha256_hex(config_dump);

    // completed run with the same config: nothing to do
    if (fs::exists(out / "manifest.json") && fs::exists(out / "run.json")) {
        if (sha256_file((out / "run.json").string()) == config_hash) {
            std::cout << "refine: " << out.string() << " is up to date (config unchanged)\n";
            return 0;
        }
    }
    fs::create_directories(out / "checkpoints");
    fs::create_directories(out / "reports");
    fs::create_directories(out / "figures");

    const bool config_matches =
        fs::exists(out / "run.json") && sha256_file((out / "run.json").string()) == config_hash;
    const bool can_resume = config_matches && fs::exists(out / "checkpoints" / "stage1.nrc");
    write_text(out / "run.json", config_dump);

    const LoadedDataset loaded = load_dataset_dir(dataset_dir);
    const WindowedDataset data = build_windowed_dataset(loaded.session, loaded.audio, n, loaded.split);

    StageConfig s1 = stage_config_from(cfg, 1);
    StageConfig s2 = stage_config_from(cfg, 2);
    const ChangeMetric metric =
        cfg.value("change_metric", "relative_l1") == "norm_ratio" ? ChangeMetric::NormRatio
                                                                  : ChangeMetric::RelativeL1;

    std::vector<std::string> artifacts{"run.json"};
    ParamSnapshot snap_vanilla, snap_stage1;
    std::optional<EncodingModel> model;

    if (can_resume) {
        std::cout << "refine: resuming from checkpoints/stage1.nrc\n";
        model.emplace(EncodingModel::load_checkpoint((out / "checkpoints" / "stage1.nrc").string()));
        snap_vanilla = snapshot_params(
            EncodingModel::load_checkpoint((out / "checkpoints" / "vanilla.nrc").string()).all_params());
        snap_stage1 = snapshot_params(model->all_params());
        artifacts.insert(artifacts.end(),
                         {"checkpoints/vanilla.nrc", "checkpoints/stage1.nrc", "reports/stage1_record.csv"});
    } else {
        ToyBackbone vanilla = cfg.contains("backbone_checkpoint")
                                  ? ToyBackbone::from_checkpoint(
                                        Checkpoint::load(cfg.at("backbone_checkpoint").get<std::string>()))
                                  : ToyBackbone(backbone_config_from(cfg.value("backbone", nlohmann::json::object())));
        EncodingHeadConfig head_cfg;
        head_cfg.n = n;
        head_cfg.dim = vanilla.dim();
        head_cfg.n_voxels = data.n_voxels();
        head_cfg.seed = cfg.value("head_seed", 7ull);
        model.emplace(std::move(vanilla), EncodingHead(head_cfg));

        snap_vanilla = snapshot_params(model->all_params());
        model->save_checkpoint((out / "checkpoints" / "vanilla.nrc").string());
        artifacts.push_back("checkpoints/vanilla.nrc");

        if (cfg.contains("lambda_grid")) {
            const auto grid = cfg.at("lambda_grid").get<std::vector<double>>();
            const ToyBackbone& bb = model->backbone;
            const EncodingHead& head0 = model->head;
            const LambdaReport report = tune_lambda(grid, [&](double lambda) {
                EncodingModel trial(bb, head0);
                StageConfig trial_cfg = s1;
                trial_cfg.lambda = lambda;
                return run_stage(trial, data, trial_cfg).best_val_mse;
            });
            s1.lambda = report.best_lambda;
            s2.lambda = report.best_lambda;
            std::ofstream f(out / "reports" / "lambda_report.csv", std::ios::trunc);
            f.precision(12);
            f << "lambda,val_mse\n";
            for (const auto& row : report.rows) f << row.lambda << ',' << row.val_mse << '\n';
            f.close();
            artifacts.push_back("reports/lambda_report.csv");
            std::cout << "refine: tuned lambda = " << s1.lambda << "\n";
        }

        const TrainRecord rec1 = run_stage(*model, data, s1);
        snap_stage1 = snapshot_params(model->all_params());
        model->save_checkpoint((out / "checkpoints" / "stage1.nrc").string());
        rec1.save_csv((out / "reports" / "stage1_record.csv").string());
        rec1.save_timing_csv((out / "timing_stage1.csv").string());
        artifacts.insert(artifacts.end(), {"checkpoints/stage1.nrc", "reports/stage1_record.csv"});
        std::cout << "refine: stage 1 best val MSE " << rec1.best_val_mse << " (epoch " << rec1.best_epoch
                  << ")\n";
    }

    const TrainRecord rec2 = run_stage(*model, data, s2);
    const ParamSnapshot snap_stage2 = snapshot_params(model->all_params());
    model->save_checkpoint((out / "checkpoints" / "refined.nrc").string());
    rec2.save_csv((out / "reports" / "stage2_record.csv").string());
    rec2.save_timing_csv((out / "timing_stage2.csv").string());
    artifacts.insert(artifacts.end(), {"checkpoints/refined.nrc", "reports/stage2_record.csv"});
    std::cout << "refine: stage 2 best val MSE " << rec2.best_val_mse << " (epoch " << rec2.best_epoch << ")\n";

    // freeze-contract report
    {
        std::ofstream f(out / "reports" / "freeze_contract.csv", std::ios::trunc);
        f << "contract,holds\n";
        bool stage1_ok = true;
        for (const auto& e : snap_stage1.entries)
            if (e.name.rfind("head.linear.", 0) != 0 && e.values != snap_vanilla.find(e.name)->values)
                stage1_ok = false;
        bool stage2_ok = true;
        for (const auto& e : snap_stage2.entries)
            if (e.name.rfind("head.linear.", 0) == 0 && e.values != snap_stage1.find(e.name)->values)
                stage2_ok = false;
        f << "stage1_backbone_frozen," << (stage1_ok ? 1 : 0) << '\n';
        f << "stage2_linear_frozen," << (stage2_ok ? 1 : 0) << '\n';
        std::cout << "refine: freeze contracts stage1=" << (stage1_ok ? "ok" : "VIOLATED")
                  << " stage2=" << (stage2_ok ? "ok" : "VIOLATED") << "\n";
    }
    artifacts.push_back("reports/freeze_contract.csv");

    write_param_change_reports(out, snap_vanilla, snap_stage2, metric, artifacts);
    finalize_manifest(out, artifacts);
    std::cout << "refine: outputs in " << out.string() << "\n";
    return 0;
}

int cmd_eval(const nlohmann::json& cfg) {
    const fs::path out(resolve_out_dir(require(cfg, "out_dir", "eval").get<std::string>()));
    const std::string dataset_dir = require(cfg, "dataset_dir", "eval").get<std::string>();
    const int n = require(cfg, "n", "eval").get<int>();

    fs::create_directories(out / "reports");
    fs::create_directories(out / "figures");
    write_run_json(out, cfg);

    const LoadedDataset loaded = load_dataset_dir(dataset_dir);
    const WindowedDataset data = build_windowed_dataset(loaded.session, loaded.audio, n, loaded.split);

    EncodingModel vanilla =
        EncodingModel::load_checkpoint(require(cfg, "vanilla_checkpoint", "eval").get<std::string>());
    EncodingModel refined =
        EncodingModel::load_checkpoint(require(cfg, "refined_checkpoint", "eval").get<std::string>());

    RidgeOptions ridge;
    if (cfg.contains("alpha_grid")) ridge.alpha_grid = cfg.at("alpha_grid").get<std::vector<double>>();
    ridge.n_threads = cfg.value("n_threads", 1);

    const EncodingScoreReport rep_v =
        layerwise_encoding_scores(vanilla.backbone, data.windows, data.targets, data.split, ridge);
    const EncodingScoreReport rep_r =
        layerwise_encoding_scores(refined.backbone, data.windows, data.targets, data.split, ridge);

    auto dump_scores = [&](const EncodingScoreReport& rep, const std::string& name) {
        std::ofstream f(out / "reports" / name, std::ios::trunc);
        f.precision(12);
        f << "layer,voxel,pcc,alpha\n";
        for (int l = 0; l < rep.n_layers(); ++l)
            for (std::size_t v = 0; v < rep.pcc[static_cast<std::size_t>(l)].size(); ++v)
                f << l << ',' << v << ',' << rep.pcc[static_cast<std::size_t>(l)][v] << ','
                  << rep.alpha[static_cast<std::size_t>(l)][v] << '\n';
    };
    dump_scores(rep_v, "encoding_vanilla.csv");
    dump_scores(rep_r, "encoding_refined.csv");

    // one-tailed paired t-test per layer over per-voxel PCCs (refined > vanilla)
    nlohmann::json summary;
    summary["vanilla_mean_pcc"] = rep_v.mean_pcc;
    summary["refined_mean_pcc"] = rep_r.mean_pcc;
    summary["vanilla_overall_mean"] = rep_v.overall_mean;
    summary["refined_overall_mean"] = rep_r.overall_mean;
    {
        std::ofstream f(out / "reports" / "ttest.csv", std::ios::trunc);
        f.precision(12);
        f << "layer,t,df,p_one_tailed\n";
        for (int l = 0; l < rep_r.n_layers(); ++l) {
            const auto& rv = rep_v.pcc[static_cast<std::size_t>(l)];
            const auto& rr = rep_r.pcc[static_cast<std::size_t>(l)];
            Vector a(static_cast<Eigen::Index>(rr.size())), b(static_cast<Eigen::Index>(rv.size()));
            for (std::size_t v = 0; v < rr.size(); ++v) {
                a(static_cast<Eigen::Index>(v)) = rr[v];
                b(static_cast<Eigen::Index>(v)) = rv[v];
            }
            try {
                const TTestResult t = paired_t_test_one_tailed(a, b);
                f << l << ',' << t.t << ',' << t.df << ',' << t.p << '\n';
            } catch (const std::exception&) {
                f << l << ",nan," << (rr.size() - 1) << ",nan\n";
            }
        }
    }

    // layer-weight probe on the toy energy task
    const int probe_classes = cfg.value("probe_classes", 3);
    ProbeOptions popt;
    popt.epochs = cfg.value("probe_epochs", 300);
    popt.lr = cfg.value("probe_lr", 0.5);
    popt.seed = cfg.value("probe_seed", 11ull);
    const auto labels = energy_class_labels(data.windows, probe_classes);
    ProbeReport probe;
    probe.tasks = {"energy"};
    probe.vanilla_weights["energy"] = probe_layer_weights(vanilla.backbone, data.windows, labels, probe_classes, popt);
    probe.refined_weights["energy"] = probe_layer_weights(refined.backbone, data.windows, labels, probe_classes, popt);
    probe.change_rates["energy"] =
        layer_weight_change_rate(probe.vanilla_weights["energy"], probe.refined_weights["energy"]);
    {
        std::ofstream f(out / "reports" / "probe_weights.csv", std::ios::trunc);
        f.precision(12);
        f << "task,layer,vanilla_weight,refined_weight,change_rate\n";
        for (std::size_t l = 0; l < probe.vanilla_weights["energy"].size(); ++l) {
            f << "energy," << l << ',' << probe.vanilla_weights["energy"][l] << ','
              << probe.refined_weights["energy"][l] << ',';
            const auto& rate = probe.change_rates["energy"][l];
            if (rate)
                f << *rate;
            else
                f << "undefined";
            f << '\n';
        }
    }
    summary["probe"] = {{"task", "energy"},
                        {"vanilla", probe.vanilla_weights["energy"]},
                        {"refined", probe.refined_weights["energy"]}};
    write_text(out / "reports" / "encoding_summary.json", summary.dump(2) + "\n");

    // figures
    std::vector<std::string> layer_labels;
    for (int l = 0; l < rep_r.n_layers(); ++l) layer_labels.push_back("L" + std::to_string(l));
    write_bar_chart((out / "figures" / "layer_pcc.svg").string(), "Mean held-out encoding PCC per layer",
                    layer_labels, {{"vanilla", rep_v.mean_pcc}, {"refined", rep_r.mean_pcc}});
    write_bar_chart((out / "figures" / "layer_weights.svg").string(), "Probe layer weights (energy task)",
                    layer_labels,
                    {{"vanilla", probe.vanilla_weights["energy"]}, {"refined", probe.refined_weights["energy"]}});

    finalize_manifest(out, {"run.json", "reports/encoding_vanilla.csv", "reports/encoding_refined.csv",
                            "reports/ttest.csv", "reports/probe_weights.csv", "reports/encoding_summary.json",
                            "figures/layer_pcc.svg", "figures/layer_weights.svg"});
    std::cout << "eval: vanilla mean PCC " << fmt2(rep_v.overall_mean) << ", refined mean PCC "
              << fmt2(rep_r.overall_mean) << "\n";
    std::cout << "eval: outputs in " << out.string() << "\n";
    return 0;
}

int cmd_sweep(const nlohmann::json& cfg) {
    const fs::path out(resolve_out_dir(require(cfg, "out_dir", "sweep").get<std::string>()));
    const std::string dataset_dir = require(cfg, "dataset_dir", "sweep").get<std::string>();
    const auto n_values = require(cfg, "n_values", "sweep").get<std::vector<int>>();

    fs::create_directories(out / "reports");
    fs::create_directories(out / "figures");
    write_run_json(out, cfg);

    const LoadedDataset loaded = load_dataset_dir(dataset_dir);
    const ToyBackboneConfig bb_cfg = backbone_config_from(cfg.value("backbone", nlohmann::json::object()));
    RefineConfig rcfg;
    rcfg.stage1 = stage_config_from(cfg, 1);
    rcfg.stage2 = stage_config_from(cfg, 2);
    rcfg.head_seed = cfg.value("head_seed", 7ull);
    RidgeOptions ridge;
    if (cfg.contains("alpha_grid")) ridge.alpha_grid = cfg.at("alpha_grid").get<std::vector<double>>();

    const SweepReport report =
        context_sweep(n_values, loaded.session, loaded.audio, loaded.split, bb_cfg, rcfg, ridge);

    {
        std::ofstream f(out / "reports" / "sweep.csv", std::ios::trunc);
        f.precision(12);
        f << "n,label,val_mse,mean_pcc,stage1_best_val_mse,stage2_best_val_mse\n";
        for (const auto& e : report.entries)
            f << e.n << ',' << e.label << ',' << e.val_mse << ',' << e.mean_pcc << ','
              << e.stage1_best_val_mse << ',' << e.stage2_best_val_mse << '\n';
    }

    std::vector<double> xs;
    ChartSeries pcc_series{"mean encoding PCC", {}};
    ChartSeries mse_series{"val MSE", {}};
    for (const auto& e : report.entries) {
        xs.push_back(e.n);
        pcc_series.values.push_back(e.mean_pcc);
        mse_series.values.push_back(e.val_mse);
    }
    if (xs.size() >= 2)
        write_line_chart((out / "figures" / "sweep.svg").string(), "Context length sweep", xs,
                         {pcc_series, mse_series});

    std::vector<std::string> artifacts{"run.json", "reports/sweep.csv"};
    if (xs.size() >= 2) artifacts.push_back("figures/sweep.svg");
    finalize_manifest(out, artifacts);
    for (const auto& e : report.entries)
        std::cout << "sweep: n=" << e.label << " val_mse=" << e.val_mse << " mean_pcc=" << fmt2(e.mean_pcc)
                  << "\n";
    return 0;
}

int cmd_score(const std::string& csv_path, const std::string& json_out) {
    const ResultsTable table = load_results_csv(csv_path);
    const double aggregate = superb_s(table);

    nlohmann::json per_task = nlohmann::json::object();
    std::cout << "task        score\n";
    for (const TaskResult* r : table.included()) {
        const double s = task_score(*r);
        per_task[r->task] = s;
        std::printf("%-10s %8.2f\n", r->task.c_str(), s);
    }
    for (const auto& r : table.results)
        if (table.excluded_tasks.count(r.task))
            std::printf("%-10s excluded (%s)\n", r.task.c_str(), r.metric.c_str());
    std::printf("overall    %8.2f\n", aggregate);

    if (!json_out.empty()) {
        nlohmann::json j;
        j["per_task"] = per_task;
        j["superb_s"] = aggregate;
        j["excluded"] = std::vector<std::string>(table.excluded_tasks.begin(), table.excluded_tasks.end());
        write_text(json_out, j.dump(2) + "\n");
    }
    return 0;
}

int cmd_analyze_params(const std::string& before_path, const std::string& after_path, const std::string& out_dir,
                       const std::string& metric_name) {
    const fs::path out(resolve_out_dir(out_dir));
    fs::create_directories(out / "reports");
    fs::create_directories(out / "figures");

    const ChangeMetric metric = metric_name == "norm_ratio" ? ChangeMetric::NormRatio : ChangeMetric::RelativeL1;
    const EncodingModel before = EncodingModel::load_checkpoint(before_path);
    const EncodingModel after = EncodingModel::load_checkpoint(after_path);
    // snapshots taken via const_cast-free copies
    EncodingModel b = before;
    EncodingModel a = after;
    const ParamSnapshot snap_b = snapshot_params(b.all_params());
    const ParamSnapshot snap_a = snapshot_params(a.all_params());

    std::vector<std::string> artifacts;
    write_param_change_reports(out, snap_b, snap_a, metric, artifacts);
    finalize_manifest(out, artifacts);
    std::cout << "analyze-params: reports in " << out.string() << "\n";
    return 0;
}

}  // namespace nrf::cli
