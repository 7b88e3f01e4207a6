#include "neurorefine/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <stdexcept>

namespace nrf {

double pcc(const Vector& x, const Vector& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pcc: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("pcc: need at least 2 samples");
    const double mx = x.mean();
    const double my = y.mean();
    const Vector dx = x.array() - mx;
    const Vector dy = y.array() - my;
    const double sx = dx.squaredNorm();
    const double sy = dy.squaredNorm();
    if (sx <= 0.0 || sy <= 0.0) throw std::invalid_argument("pcc: constant input");
    return dx.dot(dy) / std::sqrt(sx * sy);
}

TTestResult t_test_one_tailed_from_diffs(const Vector& d) {
    const auto n = static_cast<int>(d.size());
    if (n < 2) throw std::invalid_argument("t-test: need at least 2 pairs");
    const double mean = d.mean();
    const double ss = (d.array() - mean).square().sum();
    const double sd = std::sqrt(ss / (n - 1));
    if (sd <= 0.0) throw std::invalid_argument("t-test: differences have zero variance");
    TTestResult r;
    r.n = n;
    r.df = n - 1;
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const boost::math::students_t dist(static_cast<double>(r.df));
    r.p = boost::math::cdf(boost::math::complement(dist, r.t));
    return r;
}

TTestResult paired_t_test_one_tailed(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired t-test: length mismatch");
    return t_test_one_tailed_from_diffs(a - b);
}

}  // namespace nrf
