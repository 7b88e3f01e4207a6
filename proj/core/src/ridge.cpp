#include "neurorefine/ridge.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <stdexcept>
#include <string>

namespace nrf {

Matrix fit_ridge_multi(const Matrix& x, const Matrix& y, double alpha) {
    if (x.rows() != y.rows())
        throw std::invalid_argument("fit_ridge: X has " + std::to_string(x.rows()) + " rows, y has " +
                                    std::to_string(y.rows()));
    if (x.rows() < 1) throw std::invalid_argument("fit_ridge: need at least one sample");
    if (alpha < 0) throw std::invalid_argument("fit_ridge: alpha must be >= 0");

    // column-major working copies for the decompositions
    const Eigen::MatrixXd xc = x;
    const Eigen::MatrixXd yc = y;
    if (alpha == 0.0) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
        if (qr.rank() < xc.cols())
            throw std::runtime_error("fit_ridge: singular system at alpha = 0 (rank " +
                                     std::to_string(qr.rank()) + " < " + std::to_string(xc.cols()) + ")");
        return qr.solve(yc);
    }
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += alpha;
    const Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("fit_ridge: Cholesky factorization failed");
    return llt.solve(xc.transpose() * yc);
}

Vector fit_ridge(const Matrix& x, const Vector& y, double alpha) {
    return fit_ridge_multi(x, y, alpha).col(0);
}

}  // namespace nrf
