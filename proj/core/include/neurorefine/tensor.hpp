#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace nrf {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major double tensor with a shape. Parameters, gradients and
/// snapshot entries all use this one representation so serialization and
/// diffing never have to worry about storage order.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        return s.empty() ? 0 : n;
    }

    std::size_t numel() const { return data.size(); }

    void setZero() { std::fill(data.begin(), data.end(), 0.0); }

    // 2-D view (rows x cols); requires shape to collapse accordingly.
    Eigen::Map<Matrix> mat(int rows, int cols) {
        if (static_cast<std::size_t>(rows) * cols != numel())
            throw std::logic_error("Tensor::mat: shape mismatch");
        return Eigen::Map<Matrix>(data.data(), rows, cols);
    }
    Eigen::Map<const Matrix> mat(int rows, int cols) const {
        if (static_cast<std::size_t>(rows) * cols != numel())
            throw std::logic_error("Tensor::mat: shape mismatch");
        return Eigen::Map<const Matrix>(data.data(), rows, cols);
    }
    Eigen::Map<Vector> vec() { return Eigen::Map<Vector>(data.data(), static_cast<Eigen::Index>(numel())); }
    Eigen::Map<const Vector> vec() const {
        return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(numel()));
    }
};

/// A named trainable parameter: value plus accumulated gradient.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param() = default;
    Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}
};

/// Ordered registry of parameters owned elsewhere. Registration order is the
/// construction order of the model, which makes every parameter walk
/// (updates, snapshots, serialization) deterministic.
class ParamRegistry {
public:
    void add(Param* p) {
        if (index_.count(p->name)) throw std::logic_error("duplicate parameter name: " + p->name);
        index_[p->name] = params_.size();
        params_.push_back(p);
    }

    void merge(const ParamRegistry& other) {
        for (Param* p : other.params_) add(p);
    }

    std::size_t size() const { return params_.size(); }
    Param* at(std::size_t i) const { return params_[i]; }

    Param* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : params_[it->second];
    }

    const std::vector<Param*>& items() const { return params_; }

    void zero_grad() const {
        for (Param* p : params_) p->grad.setZero();
    }

private:
    std::vector<Param*> params_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace nrf
