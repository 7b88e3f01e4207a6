#include "neurorefine/superb.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace nrf {

MetricDirection direction_from_string(const std::string& s) {
    if (s == "higher" || s == "higher_better") return MetricDirection::HigherBetter;
    if (s == "lower" || s == "lower_better") return MetricDirection::LowerBetter;
    throw std::invalid_argument("unknown direction token '" + s + "' (expected higher|lower)");
}

std::string to_string(MetricDirection d) { return d == MetricDirection::HigherBetter ? "higher" : "lower"; }

std::vector<const TaskResult*> ResultsTable::included() const {
    std::vector<const TaskResult*> out;
    std::set<std::string> seen;
    for (const auto& r : results) {
        if (excluded_tasks.count(r.task)) continue;
        if (!seen.insert(r.task).second)
            throw std::runtime_error("ResultsTable: task '" + r.task + "' appears more than once among included rows");
        out.push_back(&r);
    }
    return out;
}

double task_score(const TaskResult& r) {
    const double den = r.s_large - r.s_base;
    if (den == 0.0)
        throw std::runtime_error("task_score: zero denominator for task '" + r.task + "' (base == large)");
    return 1000.0 * (r.s_u - r.s_base) / den;
}

double superb_s(const ResultsTable& table) {
    const auto rows = table.included();
    if (rows.empty()) throw std::runtime_error("superb_s: no included tasks");
    double sum = 0.0;
    for (const TaskResult* r : rows) sum += task_score(*r);
    return sum / static_cast<double>(rows.size());
}

namespace {

const std::map<std::string, MetricDirection>& known_metrics() {
    static const std::map<std::string, MetricDirection> m = {
        {"PER", MetricDirection::LowerBetter},  {"WER", MetricDirection::LowerBetter},
        {"CER", MetricDirection::LowerBetter},  {"EER", MetricDirection::LowerBetter},
        {"ACC", MetricDirection::HigherBetter}, {"F1", MetricDirection::HigherBetter},
    };
    return m;
}

double parse_number(const std::string& cell, const std::string& what, std::size_t lineno) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &used);
    } catch (const std::exception&) {
        throw std::runtime_error("results CSV row " + std::to_string(lineno) + ": non-numeric " + what + " '" +
                                 cell + "'");
    }
    if (used != cell.size())
        throw std::runtime_error("results CSV row " + std::to_string(lineno) + ": non-numeric " + what + " '" +
                                 cell + "'");
    return v;
}

}  // namespace

ResultsTable load_results_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_results_csv: cannot open " + path);
    std::string line;
    auto strip = [](std::string& s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
    };
    if (!std::getline(f, line)) throw std::runtime_error("load_results_csv: empty file " + path);
    strip(line);
    if (line != "task,metric,direction,base,large,value")
        throw std::runtime_error("load_results_csv: expected header 'task,metric,direction,base,large,value'");

    ResultsTable table;
    std::set<std::pair<std::string, std::string>> seen;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        strip(line);
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string task, metric, dir, base, large, value;
        if (!std::getline(ss, task, ',') || !std::getline(ss, metric, ',') || !std::getline(ss, dir, ',') ||
            !std::getline(ss, base, ',') || !std::getline(ss, large, ',') || !std::getline(ss, value, ','))
            throw std::runtime_error("load_results_csv: malformed row " + std::to_string(lineno));

        TaskResult r;
        r.task = task;
        r.metric = metric;
        r.direction = direction_from_string(dir);
        r.s_base = parse_number(base, "base", lineno);
        r.s_large = parse_number(large, "large", lineno);
        r.s_u = parse_number(value, "value", lineno);

        if (!seen.insert({task, metric}).second)
            throw std::runtime_error("load_results_csv: duplicate task '" + task + "' (metric " + metric + ")");
        if (r.s_base == r.s_large)
            throw std::runtime_error("load_results_csv: task '" + task + "' has base == large (" +
                                     std::to_string(r.s_base) + ")");
        const auto it = known_metrics().find(metric);
        if (it != known_metrics().end() && it->second != r.direction)
            throw std::runtime_error("load_results_csv: metric " + metric + " of task '" + task +
                                     "' should be " + to_string(it->second) + "-is-better");
        table.results.push_back(std::move(r));
    }
    return table;
}

}  // namespace nrf
