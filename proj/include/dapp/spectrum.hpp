#pragma once

#include <random>
#include <vector>

#include "dapp/autodiff.hpp"
#include "dapp/matrix.hpp"
#include "dapp/rng.hpp"

namespace dapp {

// Noise-to-frequency generator: a fully connected net R^q -> R^r with
// softplus hidden layers and an affine output. The pushforward of the
// standard-normal noise prior through this map is the head's spectral
// distribution over frequencies.
struct GeneratorParams {
    int noise_dim = 16;    // q
    int feature_dim = 16;  // r
    std::vector<Mat> weights;  // layer l maps (in -> out), stored (in x out)
    std::vector<Mat> biases;   // (1 x out)

    static GeneratorParams make(int q, int r, const std::vector<int>& hidden = {128, 256, 128}) {
        GeneratorParams gp;
        gp.noise_dim = q;
        gp.feature_dim = r;
        int in = q;
        for (int h : hidden) {
            gp.weights.emplace_back(Mat::Zero(in, h));
            gp.biases.emplace_back(Mat::Zero(1, h));
            in = h;
        }
        gp.weights.emplace_back(Mat::Zero(in, r));
        gp.biases.emplace_back(Mat::Zero(1, r));
        return gp;
    }

    void init_random(Rng& rng) {
        std::normal_distribution<double> norm;
        for (Mat& w : weights) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(w.rows()));
            for (Eigen::Index i = 0; i < w.rows(); ++i)
                for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = scale * norm(rng);
        }
        for (Mat& b : biases) b.setZero();
    }

    [[nodiscard]] std::size_t layer_count() const { return weights.size(); }
};

// D i.i.d. standard normal noise vectors, one per row.
inline Mat sample_noise(int q, int D, Rng& rng) {
    if (D < 1 || q < 1) throw std::invalid_argument("sample_noise: D and q must be >= 1");
    std::normal_distribution<double> norm;
    Mat z(D, q);
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = norm(rng);
    return z;
}

// Forward pass z_batch (D x q) -> omega batch (D x r); value path.
inline Mat generate_features(const GeneratorParams& gp, const Mat& z_batch) {
    if (z_batch.cols() != gp.noise_dim)
        throw ShapeMismatch("generate_features: noise width " + shape_str(z_batch) + " != q=" +
                            std::to_string(gp.noise_dim));
    Mat h = z_batch;
    for (std::size_t l = 0; l < gp.weights.size(); ++l) {
        Mat pre = (h * gp.weights[l]).rowwise() + gp.biases[l].row(0);
        if (l + 1 < gp.weights.size())
            h = pre.unaryExpr([](double x) { return softplus(x); });
        else
            h = std::move(pre);
    }
    return h;
}

// Tape-bound generator: same forward, differentiable w.r.t. weights and
// biases; gradients flow through the emitted frequencies (reparameterization).
struct GeneratorNodes {
    std::vector<ad::NodeId> weights;
    std::vector<ad::NodeId> biases;
};

inline GeneratorNodes bind_generator(ad::Tape& tape, const GeneratorParams& gp) {
    GeneratorNodes nodes;
    for (const Mat& w : gp.weights) nodes.weights.push_back(tape.param(w));
    for (const Mat& b : gp.biases) nodes.biases.push_back(tape.param(b));
    return nodes;
}

inline ad::NodeId generate_features_graph(ad::Tape& tape, const GeneratorNodes& gen,
                                          const Mat& z_batch) {
    ad::NodeId h = tape.constant(z_batch);
    for (std::size_t l = 0; l < gen.weights.size(); ++l) {
        ad::NodeId pre = tape.add_rowvec(tape.matmul(h, gen.weights[l]), gen.biases[l]);
        h = l + 1 < gen.weights.size() ? tape.softplus(pre) : pre;
    }
    return h;
}

// Oracle spectrum: omega ~ N(0, sigma^2 I_r) corresponds to the kernel
// kappa(delta) = exp(-sigma^2 ||delta||^2 / 2).
inline Mat gaussian_spectrum_reference(double sigma, int r, int D, Rng& rng) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_spectrum_reference: sigma must be > 0");
    return sigma * sample_noise(r, D, rng);
}

}  // namespace dapp
