#include "commands.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>

namespace {

nlohmann::json load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("config file " + path + " is not valid JSON");
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neurorefine: refine a speech backbone by predicting brain activations"};
    app.set_version_flag("--version", NRF_VERSION);
    app.require_subcommand(1);

    struct {
        std::string config;
        std::string out;
        std::string csv;
        std::string json_out;
        std::string before, after, metric = "relative_l1";
        std::vector<int> n_values;
        long seed = -1;
        int n = 0;
    } opt;

    auto add_config_cmd = [&](const std::string& name, const std::string& desc) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", opt.config, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out, "override out_dir from the config");
        sub->add_option("--seed", opt.seed, "override seed from the config");
        return sub;
    };

    CLI::App* synth = add_config_cmd("synth", "generate a synthetic stimulus + BOLD bundle + teacher file");
    CLI::App* prepare = add_config_cmd("prepare", "standardize, select ROIs and split a session into a dataset dir");
    CLI::App* refine = add_config_cmd("refine", "two-stage refinement; emits checkpoints, records and reports");
    refine->add_option("--n", opt.n, "override context length n");
    CLI::App* eval = add_config_cmd("eval", "layerwise ridge/PCC encoding scores, t-tests and layer-weight probe");
    CLI::App* sweep = add_config_cmd("sweep", "run refine+eval across context lengths n");
    sweep->add_option("--n-values", opt.n_values, "override the n values, e.g. --n-values 1 2 3");

    CLI::App* score = app.add_subcommand("score", "superb-style aggregate over a results CSV");
    score->add_option("csv", opt.csv, "results CSV (task,metric,direction,base,large,value)")
        ->required()
        ->check(CLI::ExistingFile);
    score->add_option("--json", opt.json_out, "also write a full-precision JSON report");

    CLI::App* analyze = app.add_subcommand("analyze-params", "parameter-change report between two checkpoints");
    analyze->add_option("--before", opt.before, "checkpoint before refinement")->required()->check(CLI::ExistingFile);
    analyze->add_option("--after", opt.after, "checkpoint after refinement")->required()->check(CLI::ExistingFile);
    analyze->add_option("--out", opt.out, "output directory")->required();
    analyze->add_option("--metric", opt.metric, "relative_l1 (default) or norm_ratio");

    CLI11_PARSE(app, argc, argv);

    try {
        auto with_overrides = [&]() {
            nlohmann::json cfg = load_config(opt.config);
            if (!opt.out.empty()) cfg["out_dir"] = opt.out;
            if (opt.seed >= 0) cfg["seed"] = opt.seed;
            if (opt.n > 0) cfg["n"] = opt.n;
            if (!opt.n_values.empty()) cfg["n_values"] = opt.n_values;
            return cfg;
        };
        if (synth->parsed()) return nrf::cli::cmd_synth(with_overrides());
        if (prepare->parsed()) return nrf::cli::cmd_prepare(with_overrides());
        if (refine->parsed()) return nrf::cli::cmd_refine(with_overrides());
        if (eval->parsed()) return nrf::cli::cmd_eval(with_overrides());
        if (sweep->parsed()) return nrf::cli::cmd_sweep(with_overrides());
        if (score->parsed()) return nrf::cli::cmd_score(opt.csv, opt.json_out);
        if (analyze->parsed()) return nrf::cli::cmd_analyze_params(opt.before, opt.after, opt.out, opt.metric);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 1;
}
