#pragma once

#include "neurorefine/tensor.hpp"

#include <vector>

namespace nrf {

/// Standard Pearson correlation. Errors on vectors shorter than 2 or with
/// zero variance.
double pcc(const Vector& x, const Vector& y);

struct TTestResult {
    double t = 0.0;
    int df = 0;
    double p = 1.0;  // one-tailed upper
    int n = 0;
};

/// One-tailed paired t-test for H1: mean(a - b) > 0, sample (n-1) standard
/// deviation. Zero-variance differences are an error.
TTestResult paired_t_test_one_tailed(const Vector& a, const Vector& b);

/// Same test given the paired differences directly.
TTestResult t_test_one_tailed_from_diffs(const Vector& d);

}  // namespace nrf
