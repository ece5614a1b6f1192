#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <vector>

#include "dapp/matrix.hpp"
#include "dapp/rng.hpp"

namespace dapp {

// Raw feature dot products can dip below zero at finite D; the score clamps
// them here to honor the R+ codomain and keep the normalized weights defined.
inline constexpr double kScoreFloor = 1e-6;

// D sampled frequencies with one uniform phase per frequency.
struct FourierFeatureBatch {
    Mat omegas;  // D x r
    Vec phases;  // D entries in [0, 2pi)
    int head = 0;

    [[nodiscard]] int count() const { return static_cast<int>(omegas.rows()); }
    [[nodiscard]] int feature_dim() const { return static_cast<int>(omegas.cols()); }
};

struct KeyMap {
    Mat W_u;  // r x d
};

inline Vec draw_phases(int D, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 2.0 * std::numbers::pi);
    Vec b(D);
    for (int j = 0; j < D; ++j) b[j] = unif(rng);
    return b;
}

inline FourierFeatureBatch make_feature_batch(Mat omegas, Rng& rng, int head = 0) {
    FourierFeatureBatch fb;
    fb.phases = draw_phases(static_cast<int>(omegas.rows()), rng);
    fb.omegas = std::move(omegas);
    fb.head = head;
    return fb;
}

// Phi(x)_j = sqrt(2/D) cos(omega_j^T W_u x + b_j). The 1/sqrt(D) factor is
// folded in so Phi(x)^T Phi(x') is exactly the D-sample average of
// 2 cos(.) cos(.).
inline Vec feature_map(const Vec& x, const FourierFeatureBatch& fb, const KeyMap& km) {
    if (km.W_u.cols() != x.size())
        throw ShapeMismatch("feature_map: key map " + shape_str(km.W_u) + " vs x of length " +
                            std::to_string(x.size()));
    if (fb.omegas.cols() != km.W_u.rows())
        throw ShapeMismatch("feature_map: omegas " + shape_str(fb.omegas) + " vs key map " +
                            shape_str(km.W_u));
    const Vec key = km.W_u * x;
    const double s = std::sqrt(2.0 / fb.count());
    Vec phi = fb.omegas * key + fb.phases;
    for (int j = 0; j < phi.size(); ++j) phi[j] = s * std::cos(phi[j]);
    return phi;
}

// Feature columns for a batch of embedded points X (d x n) -> (D x n).
inline Mat feature_matrix(const Mat& X, const FourierFeatureBatch& fb, const KeyMap& km) {
    if (km.W_u.cols() != X.rows())
        throw ShapeMismatch("feature_matrix: key map " + shape_str(km.W_u) + " vs points " +
                            shape_str(X));
    Mat phases_col = fb.phases;
    Mat phi = (fb.omegas * (km.W_u * X)).colwise() + phases_col.col(0);
    const double s = std::sqrt(2.0 / fb.count());
    return s * phi.array().cos().matrix();
}

inline double raw_score(const Vec& x, const Vec& x_prime, const FourierFeatureBatch& fb,
                        const KeyMap& km) {
    return feature_map(x, fb, km).dot(feature_map(x_prime, fb, km));
}

// Empirical score, symmetric and clamped into R+.
inline double score(const Vec& x, const Vec& x_prime, const FourierFeatureBatch& fb,
                    const KeyMap& km) {
    return std::max(raw_score(x, x_prime, fb, km), kScoreFloor);
}

// Right-hand side of the uniform concentration bound:
// (48 R sigma_p / eps)^2 exp(-D eps^2 / (4 (d + 2))).
inline double concentration_bound(double radius, double sigma_p, double eps, int d, int D) {
    const double c = 48.0 * radius * sigma_p / eps;
    return c * c * std::exp(-static_cast<double>(D) * eps * eps / (4.0 * (d + 2)));
}

using SpectrumSampler = std::function<Mat(int D, Rng&)>;
using ShiftKernel = std::function<double(const Vec& delta)>;

struct ConcentrationResult {
    int D = 0;
    std::vector<double> sup_errors;  // one entry per feature redraw
};

// Empirical sup-error of the D-feature score against a known kernel, over all
// pairs from `points`, repeated over independent feature redraws. Key map is
// the identity: the probe works directly in the projected space.
inline std::vector<ConcentrationResult> concentration_probe(const SpectrumSampler& sampler,
                                                            const ShiftKernel& kernel,
                                                            const std::vector<Vec>& points,
                                                            const std::vector<int>& feature_counts,
                                                            int redraws, Rng& rng) {
    if (points.empty()) throw std::invalid_argument("concentration_probe: no points");
    const int r = static_cast<int>(points[0].size());
    const KeyMap identity{Mat::Identity(r, r)};
    Mat X(r, static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = points[i];

    const std::size_t n = points.size();
    Mat truth(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) truth(i, j) = kernel(points[i] - points[j]);

    std::vector<ConcentrationResult> results;
    for (int D : feature_counts) {
        ConcentrationResult res;
        res.D = D;
        for (int rep = 0; rep < redraws; ++rep) {
            FourierFeatureBatch fb = make_feature_batch(sampler(D, rng), rng);
            const Mat phi = feature_matrix(X, fb, identity);
            const Mat emp = phi.transpose() * phi;
            res.sup_errors.push_back((emp - truth).cwiseAbs().maxCoeff());
        }
        results.push_back(std::move(res));
    }
    return results;
}

// Sampled (omega, b) rows as CSV, for spectrum scatter plots.
inline void export_feature_batch_csv(const FourierFeatureBatch& fb, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (int j = 0; j < fb.feature_dim(); ++j) out << "omega" << j << ",";
    out << "phase\n";
    out.precision(17);
    for (int i = 0; i < fb.count(); ++i) {
        for (int j = 0; j < fb.feature_dim(); ++j) out << fb.omegas(i, j) << ",";
        out << fb.phases[i] << "\n";
    }
}

}  // namespace dapp
