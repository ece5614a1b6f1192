#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace dapp {

// Dense row-major matrices; problem sizes here never call for sparsity.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string shape_str(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// softplus(x) = log(1 + e^x), overflow-safe on both tails.
inline double softplus(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Inverse of softplus; y must be positive.
inline double softplus_inv(double y) {
    if (y <= 0.0) throw DomainError("softplus_inv: argument must be positive");
    if (y > 35.0) return y;
    return std::log(std::expm1(y));
}

}  // namespace dapp
