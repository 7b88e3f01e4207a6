#pragma once

#include <set>
#include <string>
#include <vector>

namespace nrf {

enum class MetricDirection { HigherBetter, LowerBetter };

MetricDirection direction_from_string(const std::string& s);
std::string to_string(MetricDirection d);

/// One downstream-task row: candidate value plus the base (anchor 0) and
/// large (anchor 1000) references.
struct TaskResult {
    std::string task;
    std::string metric;
    MetricDirection direction = MetricDirection::HigherBetter;
    double s_base = 0.0;
    double s_large = 0.0;
    double s_u = 0.0;
};

struct ResultsTable {
    std::vector<TaskResult> results;
    std::set<std::string> excluded_tasks{"SF"};

    /// Rows whose task is not excluded; errors on duplicate included task
    /// names (excluded tasks may repeat across metrics, like SF's F1/CER).
    std::vector<const TaskResult*> included() const;
};

/// 1000 * (s_u - s_base) / (s_large - s_base). Direction-agnostic by
/// construction (the signs cancel); values may leave [0, 1000].
double task_score(const TaskResult& r);

/// Mean of task_score over the included tasks.
double superb_s(const ResultsTable& table);

/// CSV with header `task,metric,direction,base,large,value`. Validates
/// direction tokens, numeric cells, base != large, (task, metric)
/// uniqueness, and direction consistency for the standard metric names
/// (PER/WER/CER/EER lower is better; ACC/F1 higher).
ResultsTable load_results_csv(const std::string& path);

}  // namespace nrf
