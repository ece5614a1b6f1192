#include <gtest/gtest.h>

#include "dapp/spectrum.hpp"

using namespace dapp;

TEST(Spectrum, NoiseShapeAndDeterminism) {
    Rng a = make_stream(1, 0), b = make_stream(1, 0), c = make_stream(2, 0);
    const Mat z1 = sample_noise(2, 3, a);
    EXPECT_EQ(z1.rows(), 3);
    EXPECT_EQ(z1.cols(), 2);
    const Mat z2 = sample_noise(2, 3, b);
    EXPECT_EQ((z1 - z2).cwiseAbs().maxCoeff(), 0.0);
    const Mat z3 = sample_noise(2, 3, c);
    EXPECT_GT((z1 - z3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Spectrum, NoiseMeanNearZero) {
    Rng rng = make_stream(9, 0);
    const int D = 100000;
    const Mat z = sample_noise(3, D, rng);
    // CLT bound: 3 / sqrt(D) < 0.01, spec allows 0.02
    for (int j = 0; j < 3; ++j) EXPECT_LT(std::abs(z.col(j).mean()), 0.02);
}

TEST(Spectrum, ZeroWeightsGivePointMassAtBias) {
    GeneratorParams gp = GeneratorParams::make(2, 3, {8});
    gp.biases.back() << 0.4, -1.0, 2.5;
    Rng rng = make_stream(4, 0);
    const Mat omega = generate_features(gp, sample_noise(2, 5, rng));
    for (int i = 0; i < 5; ++i) {
        EXPECT_DOUBLE_EQ(omega(i, 0), 0.4);
        EXPECT_DOUBLE_EQ(omega(i, 1), -1.0);
        EXPECT_DOUBLE_EQ(omega(i, 2), 2.5);
    }
}

TEST(Spectrum, IdentitySingleLayerPassesNoiseThrough) {
    GeneratorParams gp = GeneratorParams::make(3, 3, {});
    gp.weights[0] = Mat::Identity(3, 3);
    Rng rng = make_stream(4, 1);
    const Mat z = sample_noise(3, 7, rng);
    EXPECT_LT((generate_features(gp, z) - z).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Spectrum, RejectsWrongNoiseWidth) {
    GeneratorParams gp = GeneratorParams::make(4, 2, {8});
    Rng rng = make_stream(4, 2);
    EXPECT_THROW(generate_features(gp, sample_noise(3, 5, rng)), ShapeMismatch);
}

TEST(Spectrum, ForwardMatchesStraightLineReimplementation) {
    GeneratorParams gp = GeneratorParams::make(2, 2, {5, 4});
    Rng rng = make_stream(21, 0);
    gp.init_random(rng);
    for (Mat& b : gp.biases) b.setRandom();
    const Mat z = sample_noise(2, 50, rng);
    const Mat omega = generate_features(gp, z);

    // independent per-coordinate recomputation
    for (int i = 0; i < z.rows(); ++i) {
        std::vector<double> h(z.cols());
        for (int j = 0; j < z.cols(); ++j) h[static_cast<std::size_t>(j)] = z(i, j);
        for (std::size_t l = 0; l < gp.weights.size(); ++l) {
            std::vector<double> next(static_cast<std::size_t>(gp.weights[l].cols()), 0.0);
            for (std::size_t o = 0; o < next.size(); ++o) {
                double acc = gp.biases[l](0, static_cast<Eigen::Index>(o));
                for (std::size_t in = 0; in < h.size(); ++in)
                    acc += h[in] * gp.weights[l](static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(o));
                next[o] = l + 1 < gp.weights.size() ? std::log1p(std::exp(acc)) : acc;
            }
            h = std::move(next);
        }
        for (int j = 0; j < omega.cols(); ++j)
            ASSERT_NEAR(omega(i, j), h[static_cast<std::size_t>(j)], 1e-12);
    }
}

TEST(Spectrum, TapeForwardMatchesValuePath) {
    GeneratorParams gp = GeneratorParams::make(3, 2, {6, 5});
    Rng rng = make_stream(33, 0);
    gp.init_random(rng);
    const Mat z = sample_noise(3, 10, rng);
    ad::Tape tape;
    GeneratorNodes gen = bind_generator(tape, gp);
    const Mat omega_tape = tape.value(generate_features_graph(tape, gen, z));
    EXPECT_LT((omega_tape - generate_features(gp, z)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Spectrum, GeneratorGradientPassesGradCheck) {
    // scalar function of the generated frequencies w.r.t. every generator weight
    Rng rng = make_stream(77, 0);
    const Mat z = sample_noise(2, 4, rng);
    GeneratorParams gp = GeneratorParams::make(2, 2, {3});
    gp.init_random(rng);

    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    std::vector<double> point;
    for (const Mat& m : {gp.weights[0], gp.weights[1], gp.biases[0], gp.biases[1]}) {
        shapes.emplace_back(m.rows(), m.cols());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) point.push_back(m(i, j));
    }
    const auto build = [&](ad::Tape& t, const std::vector<ad::NodeId>& leaves) {
        GeneratorNodes gen;
        gen.weights = {leaves[0], leaves[1]};
        gen.biases = {leaves[2], leaves[3]};
        ad::NodeId omega = generate_features_graph(t, gen, z);
        return t.sum(t.cos(omega));  // smooth scalar readout
    };
    EXPECT_LT(ad::grad_check(build, shapes, point, 1e-6), 1e-4);
}

TEST(Spectrum, GaussianReferenceMoments) {
    Rng rng = make_stream(5, 5);
    const Mat w = gaussian_spectrum_reference(1.0, 1, 100000, rng);
    const double mu = w.col(0).mean();
    double var = 0.0;
    for (int i = 0; i < w.rows(); ++i) var += (w(i, 0) - mu) * (w(i, 0) - mu);
    var /= static_cast<double>(w.rows() - 1);
    EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(Spectrum, GaussianReferenceEdges) {
    Rng rng = make_stream(5, 6);
    EXPECT_THROW(gaussian_spectrum_reference(0.0, 1, 10, rng), std::invalid_argument);
    const Mat w = gaussian_spectrum_reference(2.0, 3, 1, rng);
    EXPECT_EQ(w.rows(), 1);
    EXPECT_EQ(w.cols(), 3);
}
