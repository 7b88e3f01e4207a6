#pragma once

#include <nlohmann/json.hpp>

#include <string>

namespace nrf::cli {

/// Resolves the output directory against NEUROREFINE_OUTPUT_ROOT (relative
/// paths only) and creates it.
std::string resolve_out_dir(const std::string& out_dir);

int cmd_synth(const nlohmann::json& cfg);
int cmd_prepare(const nlohmann::json& cfg);
int cmd_refine(const nlohmann::json& cfg);
int cmd_eval(const nlohmann::json& cfg);
int cmd_sweep(const nlohmann::json& cfg);
int cmd_score(const std::string& csv_path, const std::string& json_out);
int cmd_analyze_params(const std::string& before_path, const std::string& after_path, const std::string& out_dir,
                       const std::string& metric);

}  // namespace nrf::cli
