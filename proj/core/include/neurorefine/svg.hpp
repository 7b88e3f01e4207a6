#pragma once

#include <string>
#include <vector>

namespace nrf {

/// Minimal dependency-free SVG charts for the report figures.
struct ChartSeries {
    std::string name;
    std::vector<double> values;
};

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::vector<std::string>& group_labels, const std::vector<ChartSeries>& series);

void write_line_chart(const std::string& path, const std::string& title,
                      const std::vector<double>& x, const std::vector<ChartSeries>& series);

}  // namespace nrf
