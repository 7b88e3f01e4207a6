#include "neurorefine/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nrf {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 420;
constexpr int kLeft = 70, kRight = 30, kTop = 50, kBottom = 60;

const char* kPalette[] = {"#3466ac", "#d1495b", "#66a182", "#edae49", "#8d6a9f", "#5b5b5b"};

struct Range {
    double lo = 0.0, hi = 1.0;
};

Range value_range(const std::vector<ChartSeries>& series) {
    Range r{0.0, 0.0};
    bool first = true;
    for (const auto& s : series)
        for (double v : s.values) {
            if (!std::isfinite(v)) continue;
            if (first) {
                r.lo = r.hi = v;
                first = false;
            } else {
                r.lo = std::min(r.lo, v);
                r.hi = std::max(r.hi, v);
            }
        }
    r.lo = std::min(r.lo, 0.0);
    r.hi = std::max(r.hi, 0.0);
    if (r.hi - r.lo < 1e-12) r.hi = r.lo + 1.0;
    const double pad = 0.05 * (r.hi - r.lo);
    if (r.hi > 0) r.hi += pad;
    if (r.lo < 0) r.lo -= pad;
    return r;
}

double y_pixel(double v, const Range& r) {
    return kTop + (r.hi - v) / (r.hi - r.lo) * (kHeight - kTop - kBottom);
}

void open_svg(std::ostringstream& out, const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">"
        << title << "</text>\n";
}

void draw_axes(std::ostringstream& out, const Range& r) {
    const double y0 = y_pixel(0.0, r);
    out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
        << "\" stroke=\"#333\"/>\n";
    out << "<line x1=\"" << kLeft << "\" y1=\"" << y0 << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << y0
        << "\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = r.lo + (r.hi - r.lo) * i / 4.0;
        const double y = y_pixel(v, r);
        out << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3g", v);
        out << buf << "</text>\n";
        out << "<line x1=\"" << kLeft << "\" y1=\"" << y << "\" x2=\"" << kWidth - kRight << "\" y2=\"" << y
            << "\" stroke=\"#ddd\" stroke-dasharray=\"3,3\"/>\n";
    }
}

void draw_legend(std::ostringstream& out, const std::vector<ChartSeries>& series) {
    double x = static_cast<double>(kLeft);
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % (sizeof kPalette / sizeof *kPalette)];
        out << "<rect x=\"" << x << "\" y=\"" << kHeight - 24 << "\" width=\"12\" height=\"12\" fill=\"" << color
            << "\"/>\n";
        out << "<text x=\"" << x + 16 << "\" y=\"" << kHeight - 13
            << "\" font-size=\"12\" font-family=\"sans-serif\">" << series[s].name << "</text>\n";
        x += 22.0 + 7.0 * static_cast<double>(series[s].name.size());
    }
}

void save(const std::string& path, const std::ostringstream& out) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("svg: cannot open " + path);
    f << out.str() << "</svg>\n";
}

}  // namespace

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::vector<std::string>& group_labels, const std::vector<ChartSeries>& series) {
    if (series.empty()) throw std::invalid_argument("write_bar_chart: no series");
    for (const auto& s : series)
        if (s.values.size() != group_labels.size())
            throw std::invalid_argument("write_bar_chart: series length != label count");
    std::ostringstream out;
    open_svg(out, title);
    const Range r = value_range(series);
    draw_axes(out, r);

    const double plot_w = kWidth - kLeft - kRight;
    const double group_w = plot_w / static_cast<double>(group_labels.size());
    const double bar_w = std::max(2.0, 0.8 * group_w / static_cast<double>(series.size()));
    const double y0 = y_pixel(0.0, r);
    for (std::size_t g = 0; g < group_labels.size(); ++g) {
        const double gx = kLeft + (static_cast<double>(g) + 0.1) * group_w;
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double v = series[s].values[g];
            if (!std::isfinite(v)) continue;
            const double y = y_pixel(v, r);
            const char* color = kPalette[s % (sizeof kPalette / sizeof *kPalette)];
            out << "<rect x=\"" << gx + static_cast<double>(s) * bar_w << "\" y=\"" << std::min(y, y0)
                << "\" width=\"" << bar_w - 1 << "\" height=\"" << std::abs(y0 - y) << "\" fill=\"" << color
                << "\"/>\n";
        }
        out << "<text x=\"" << gx + 0.4 * group_w << "\" y=\"" << kHeight - kBottom + 16
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << group_labels[g]
            << "</text>\n";
    }
    draw_legend(out, series);
    save(path, out);
}

void write_line_chart(const std::string& path, const std::string& title, const std::vector<double>& x,
                      const std::vector<ChartSeries>& series) {
    if (series.empty() || x.size() < 2) throw std::invalid_argument("write_line_chart: need >= 2 points");
    for (const auto& s : series)
        if (s.values.size() != x.size()) throw std::invalid_argument("write_line_chart: series length != x length");
    std::ostringstream out;
    open_svg(out, title);
    const Range r = value_range(series);
    draw_axes(out, r);

    const double x_lo = *std::min_element(x.begin(), x.end());
    const double x_hi = *std::max_element(x.begin(), x.end());
    const double span = x_hi - x_lo < 1e-12 ? 1.0 : x_hi - x_lo;
    auto x_pixel = [&](double v) {
        return kLeft + (v - x_lo) / span * (kWidth - kLeft - kRight);
    };
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kPalette[s % (sizeof kPalette / sizeof *kPalette)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < x.size(); ++i) out << x_pixel(x[i]) << ',' << y_pixel(series[s].values[i], r) << ' ';
        out << "\"/>\n";
        for (std::size_t i = 0; i < x.size(); ++i)
            out << "<circle cx=\"" << x_pixel(x[i]) << "\" cy=\"" << y_pixel(series[s].values[i], r)
                << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", x[i]);
        out << "<text x=\"" << x_pixel(x[i]) << "\" y=\"" << kHeight - kBottom + 16
            << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << buf << "</text>\n";
    }
    draw_legend(out, series);
    save(path, out);
}

}  // namespace nrf
