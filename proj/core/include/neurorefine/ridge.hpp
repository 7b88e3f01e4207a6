#pragma once

#include "neurorefine/tensor.hpp"

namespace nrf {

/// Closed-form ridge solution w = (X^T X + alpha I)^-1 X^T y, no intercept
/// (callers center X and y). alpha = 0 requires full column rank and is
/// solved by column-pivoted QR; alpha > 0 by Cholesky on the regularized
/// normal equations.
Vector fit_ridge(const Matrix& x, const Vector& y, double alpha);

/// Multi-target variant: one factorization, one solve per column of Y.
Matrix fit_ridge_multi(const Matrix& x, const Matrix& y, double alpha);

}  // namespace nrf
