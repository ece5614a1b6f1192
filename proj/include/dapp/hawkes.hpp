#pragma once

#include <cmath>
#include <vector>

#include "dapp/autodiff.hpp"
#include "dapp/events.hpp"
#include "dapp/likelihood.hpp"

namespace dapp {

// Exponential-kernel Hawkes baseline with the normalized kernel
// g(t) = alpha beta e^{-beta t}, so alpha is the branching ratio.
struct HawkesParams {
    double mu = 1.0;
    double alpha = 0.5;
    double beta = 1.0;
};

// lambda(t) with history = the first `prefix` events of seq.
inline double hawkes_intensity(const HawkesParams& hp, const EventSequence& seq, double t,
                               int prefix) {
    double acc = 0.0;
    for (int i = 0; i < prefix; ++i) acc += std::exp(-hp.beta * (t - seq.events[static_cast<std::size_t>(i)].t));
    return hp.mu + hp.alpha * hp.beta * acc;
}

inline IntensityFn hawkes_intensity_fn(const HawkesParams& hp, const EventSequence& seq) {
    return [hp, &seq](double t, int, int prefix) { return hawkes_intensity(hp, seq, t, prefix); };
}

// Closed-form log-likelihood using the O(n) recursion
// A_1 = 0, A_i = e^{-beta (t_i - t_{i-1})} (1 + A_{i-1}).
inline double hawkes_loglik(const EventSequence& seq, const HawkesParams& hp) {
    double ll = -hp.mu * seq.horizon;
    double a = 0.0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i > 0) a = std::exp(-hp.beta * (seq.events[i].t - seq.events[i - 1].t)) * (1.0 + a);
        ll += std::log(hp.mu + hp.alpha * hp.beta * a);
        ll -= hp.alpha * (1.0 - std::exp(-hp.beta * (seq.horizon - seq.events[i].t)));
    }
    return ll;
}

inline double hawkes_loglik(const Dataset& ds, const HawkesParams& hp) {
    double ll = 0.0;
    for (const EventSequence& s : ds.sequences) ll += hawkes_loglik(s, hp);
    return ll;
}

struct HawkesFit {
    HawkesParams params;
    double loglik = 0.0;
    int iterations = 0;
    bool boundary = false;  // all-empty data: mu pinned at the smallest useful value
};

namespace detail {

// Total log-likelihood as a tape node, vectorized across sequences: the A
// recursion advances one event index at a time over a column holding every
// sequence, with a mask for sequences that already ended.
inline ad::NodeId hawkes_loglik_graph(ad::Tape& tape, const Dataset& ds, ad::NodeId mu,
                                      ad::NodeId alpha, ad::NodeId beta) {
    const std::size_t n_seq = ds.sequences.size();
    std::size_t max_len = 0;
    double total_horizon = 0.0;
    std::size_t total_events = 0;
    for (const EventSequence& s : ds.sequences) {
        max_len = std::max(max_len, s.size());
        total_horizon += s.horizon;
        total_events += s.size();
    }

    // compensator: -mu sum_s T_s - alpha sum_i (1 - e^{-beta (T - t_i)})
    ad::NodeId ll = tape.neg(tape.scale(mu, total_horizon));
    if (total_events > 0) {
        Mat tails(1, static_cast<Eigen::Index>(total_events));
        Eigen::Index at = 0;
        for (const EventSequence& s : ds.sequences)
            for (const Event& e : s.events) tails(0, at++) = s.horizon - e.t;
        ad::NodeId decayed = tape.sum(tape.exp(tape.neg(tape.mul(tape.constant(tails), beta))));
        ad::NodeId branch =
            tape.mul(tape.sub(tape.constant_scalar(static_cast<double>(total_events)), decayed), alpha);
        ll = tape.sub(ll, branch);
    }

    // event terms, one masked column step per event index
    Mat mask(static_cast<Eigen::Index>(n_seq), 1), gaps(static_cast<Eigen::Index>(n_seq), 1);
    ad::NodeId a = tape.constant(Mat::Zero(static_cast<Eigen::Index>(n_seq), 1));
    for (std::size_t i = 0; i < max_len; ++i) {
        for (std::size_t s = 0; s < n_seq; ++s) {
            const EventSequence& seq = ds.sequences[s];
            const bool active = i < seq.size();
            mask(static_cast<Eigen::Index>(s), 0) = active ? 1.0 : 0.0;
            gaps(static_cast<Eigen::Index>(s), 0) =
                (active && i > 0) ? seq.events[i].t - seq.events[i - 1].t : 0.0;
        }
        ad::NodeId mask_c = tape.constant(mask);
        if (i > 0) {
            ad::NodeId decay = tape.exp(tape.neg(tape.mul(tape.constant(gaps), beta)));
            a = tape.mul(tape.mul(decay, tape.add(a, tape.constant_scalar(1.0))), mask_c);
        }
        ad::NodeId lam = tape.add(tape.mul(tape.mul(a, alpha), beta), mu);
        ll = tape.add(ll, tape.sum(tape.mul(tape.log(lam), mask_c)));
    }
    return ll;
}

}  // namespace detail

// Maximum-likelihood fit by full-batch adaptive-moment ascent over
// softplus-reparameterized parameters; stops at relative improvement < 1e-8
// or the iteration cap.
inline HawkesFit fit_hawkes(const Dataset& ds, int max_iterations = 4000,
                            double learning_rate = 0.05, double rel_tol = 1e-8) {
    if (ds.sequences.empty()) throw EmptyDataset();
    std::size_t total_events = 0;
    double total_horizon = 0.0;
    for (const EventSequence& s : ds.sequences) {
        total_events += s.size();
        total_horizon += s.horizon;
    }
    if (total_events == 0) {
        // likelihood -mu T is maximized at the boundary mu -> 0+
        HawkesFit fit;
        fit.params = HawkesParams{softplus(-40.0), softplus(-40.0), 1.0};
        fit.loglik = hawkes_loglik(ds, fit.params);
        fit.boundary = true;
        return fit;
    }

    const double rate = static_cast<double>(total_events) / total_horizon;
    Mat raw(3, 1);
    raw(0, 0) = softplus_inv(0.75 * rate);
    raw(1, 0) = softplus_inv(0.25);
    raw(2, 0) = softplus_inv(1.0);

    AdamOptimizer opt(learning_rate, /*clip=*/0.0);
    std::vector<Mat*> params{&raw};
    double prev = -std::numeric_limits<double>::infinity();
    HawkesFit fit;
    for (int it = 0; it < max_iterations; ++it) {
        ad::Tape tape(static_cast<std::size_t>(64 + 8 * 64));
        ad::NodeId raw_node = tape.param(raw);
        ad::NodeId mu = tape.softplus(tape.gather_cols(tape.transpose(raw_node), {0}));
        ad::NodeId alpha = tape.softplus(tape.gather_cols(tape.transpose(raw_node), {1}));
        ad::NodeId beta = tape.softplus(tape.gather_cols(tape.transpose(raw_node), {2}));
        ad::NodeId ll = detail::hawkes_loglik_graph(tape, ds, mu, alpha, beta);
        const double value = tape.value(ll)(0, 0);
        fit.iterations = it + 1;
        tape.backward(ll);
        std::vector<Mat> grads{Mat(-tape.grad(raw_node))};  // ascend
        opt.step(params, grads);
        if (std::abs(value - prev) < rel_tol * (std::abs(value) + 1.0)) {
            prev = value;
            break;
        }
        prev = value;
    }
    fit.params = HawkesParams{softplus(raw(0, 0)), softplus(raw(1, 0)), softplus(raw(2, 0))};
    fit.loglik = hawkes_loglik(ds, fit.params);
    return fit;
}

}  // namespace dapp
