#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "dapp/attention.hpp"
#include "dapp/events.hpp"
#include "dapp/stats.hpp"

namespace dapp {

struct ProposalBudgetExceeded : std::runtime_error {
    ProposalBudgetExceeded()
        : std::runtime_error("thinning rejected too many proposals for one event") {}
};

struct ThinningConfig {
    double safety_factor = 2.0;  // c >= 1, inflates the proposal rate
    int max_rejects = 10000;     // per accepted event
};

struct ThinningStats {
    long proposals = 0;
    long accepted = 0;
    long bound_violations = 0;  // lambda exceeded the proposal bound; bound refreshed
};

// Rejection sampling of a point process on [0, T). The model supplies the
// conditional intensity given the events accepted so far and absorbs each
// accepted event. The proposal bound c*lambda(t+, m') is refreshed after
// every accepted event and whenever the intensity is caught above it; samples
// are exact whenever the intensity is non-increasing between events and the
// safety factor covers any rise otherwise (violations are counted).
template <typename Model>
EventSequence thin_sample(Model& model, double T, const MarkSpace& ms, const ThinningConfig& cfg,
                          Rng& rng, ThinningStats* stats = nullptr) {
    if (cfg.safety_factor < 1.0) throw std::invalid_argument("thin_sample: safety factor < 1");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> mark_dist(0, std::max(0, ms.size - 1));
    const int channels = ms.channels();
    const auto draw_mark = [&]() -> std::optional<int> {
        if (ms.size == 0) return std::nullopt;
        return mark_dist(rng);
    };

    EventSequence seq;
    seq.horizon = T;
    double t = 0.0;
    std::optional<int> last_mark = draw_mark();
    double lam_bar = cfg.safety_factor * model.lambda(t, last_mark);
    int rejects = 0;
    ThinningStats local;

    while (true) {
        const double total_rate = lam_bar * channels;
        if (!(total_rate > 0.0)) break;
        const double gap = -std::log(1.0 - unif(rng)) / total_rate;
        const double t_cand = t + gap;
        if (t_cand >= T) break;
        ++local.proposals;
        const std::optional<int> m_cand = draw_mark();
        const double lam = model.lambda(t_cand, m_cand);
        if (lam > lam_bar) {
            // proposal invalidated; move up and refresh the bound
            ++local.bound_violations;
            t = t_cand;
            lam_bar = cfg.safety_factor * model.lambda(t, last_mark);
            if (++rejects > cfg.max_rejects) throw ProposalBudgetExceeded();
            continue;
        }
        t = t_cand;
        if (unif(rng) * lam_bar <= lam) {
            seq.events.push_back({t_cand, m_cand});
            model.push(t_cand, m_cand);
            last_mark = m_cand;
            lam_bar = cfg.safety_factor * model.lambda(t_cand, last_mark);
            rejects = 0;
            ++local.accepted;
        } else if (++rejects > cfg.max_rejects) {
            throw ProposalBudgetExceeded();
        }
    }
    if (stats) *stats = local;
    return seq;
}

// ---- DAPP sampler -----------------------------------------------------------

namespace detail {

struct DappModelAdapter {
    DappIntensity eval;
    DappModelAdapter(const ModelParams& mp, const std::vector<FourierFeatureBatch>& fbs)
        : eval(mp, fbs) {}
    double lambda(double t, std::optional<int> mark) const { return eval.intensity(t, mark); }
    void push(double t, std::optional<int> mark) { eval.push_event(t, mark); }
};

}  // namespace detail

inline EventSequence sample_dapp(const ModelParams& mp, const std::vector<FourierFeatureBatch>& fbs,
                                 double T, const ThinningConfig& cfg, Rng& rng,
                                 ThinningStats* stats = nullptr) {
    detail::DappModelAdapter model(mp, fbs);
    return thin_sample(model, T, mp.mark_space, cfg, rng, stats);
}

// ---- synthetic generators (temporal only) -------------------------------------

namespace detail {

// lambda(t) = mu + alpha beta sum exp(-beta (t - t_i)), maintained through the
// exponential-decay recursion. Non-increasing between events, so thinning with
// safety factor 1 is exact.
struct HawkesModel {
    double mu, alpha, beta;
    double s_last = 0.0;
    double t_last = 0.0;

    double decay_sum(double t) const { return s_last * std::exp(-beta * (t - t_last)); }
    double lambda(double t, std::optional<int>) const { return mu + alpha * beta * decay_sum(t); }
    void push(double t, std::optional<int>) {
        s_last = decay_sum(t) + 1.0;
        t_last = t;
    }
};

inline double logaddexp(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace detail

inline EventSequence sample_hawkes(double mu, double alpha, double beta, double T, Rng& rng) {
    detail::HawkesModel model{mu, alpha, beta};
    return thin_sample(model, T, MarkSpace{}, ThinningConfig{1.0, 1 << 24}, rng);
}

inline Dataset gen_hawkes(double mu, double alpha, double beta, double T, int n_seq,
                          std::uint64_t seed) {
    if (mu <= 0.0 || alpha <= 0.0 || beta <= 0.0 || T <= 0.0)
        throw std::invalid_argument("gen_hawkes: parameters must be positive");
    Dataset ds;
    ds.truth = TruthDescriptor{"hawkes", {mu, alpha, beta}, {}};
    for (int i = 0; i < n_seq; ++i) {
        Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
        ds.sequences.push_back(sample_hawkes(mu, alpha, beta, T, rng));
    }
    return ds;
}

// Self-correction process lambda(t) = exp(mu t - n alpha), sampled by exact
// inversion of the inter-event compensator against Exp(1) draws.
inline EventSequence sample_self_correction(double mu, double alpha, double T, Rng& rng) {
    std::exponential_distribution<double> exp1(1.0);
    EventSequence seq;
    seq.horizon = T;
    double t = 0.0;
    int n = 0;
    while (true) {
        // solve e^{-n alpha} (e^{mu t'} - e^{mu t}) / mu = E for t'
        const double e = exp1(rng);
        const double t_next =
            detail::logaddexp(mu * t, std::log(mu * e) + static_cast<double>(n) * alpha) / mu;
        if (t_next >= T) break;
        seq.events.push_back({t_next, std::nullopt});
        t = t_next;
        ++n;
    }
    return seq;
}

inline Dataset gen_self_correction(double mu, double alpha, double T, int n_seq,
                                   std::uint64_t seed) {
    if (mu <= 0.0 || alpha <= 0.0 || T <= 0.0)
        throw std::invalid_argument("gen_self_correction: parameters must be positive");
    Dataset ds;
    ds.truth = TruthDescriptor{"self_correction", {mu, alpha}, {}};
    for (int i = 0; i < n_seq; ++i) {
        Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
        ds.sequences.push_back(sample_self_correction(mu, alpha, T, rng));
    }
    return ds;
}

namespace detail {

// Non-homogeneous Poisson with a fixed deterministic rate; thinned against a
// constant dominating bound.
inline EventSequence sample_nhpp(const std::function<double(double)>& rate, double bound, double T,
                                 Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    EventSequence seq;
    seq.horizon = T;
    if (!(bound > 0.0)) return seq;
    double t = 0.0;
    while (true) {
        t += -std::log(1.0 - unif(rng)) / bound;
        if (t >= T) break;
        if (unif(rng) * bound <= rate(t)) seq.events.push_back({t, std::nullopt});
    }
    return seq;
}

}  // namespace detail

// lambda(t) = c u phi(t - 0.5) on [0, 1), one uniform scale u per sequence.
inline Dataset gen_nhpp1(double c, int n_seq, std::uint64_t seed, double T = 1.0) {
    if (c <= 0.0) throw std::invalid_argument("gen_nhpp1: scale must be positive");
    Dataset ds;
    ds.truth = TruthDescriptor{"nhpp1", {c}, {}};
    for (int i = 0; i < n_seq; ++i) {
        Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        ds.truth->scales.push_back(u);
        const auto rate = [&](double t) { return c * u * stats::normal_pdf(t - 0.5); };
        ds.sequences.push_back(detail::sample_nhpp(rate, c * u * stats::normal_pdf(0.0), T, rng));
    }
    return ds;
}

// lambda(t) = u (c1 phi(6(t - 0.35)) + c2 phi(6(t - 0.75))) on [0, 1).
inline Dataset gen_nhpp2(double c1, double c2, int n_seq, std::uint64_t seed, double T = 1.0) {
    if (c1 <= 0.0 || c2 <= 0.0) throw std::invalid_argument("gen_nhpp2: scales must be positive");
    Dataset ds;
    ds.truth = TruthDescriptor{"nhpp2", {c1, c2}, {}};
    for (int i = 0; i < n_seq; ++i) {
        Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        ds.truth->scales.push_back(u);
        const auto rate = [&](double t) {
            return u * (c1 * stats::normal_pdf(6.0 * (t - 0.35)) +
                        c2 * stats::normal_pdf(6.0 * (t - 0.75)));
        };
        const double bound = u * (c1 + c2) * stats::normal_pdf(0.0);
        ds.sequences.push_back(detail::sample_nhpp(rate, bound, T, rng));
    }
    return ds;
}

// Bisects the horizon until pilot runs hit the target mean sequence length.
inline double calibrate_horizon(const std::function<EventSequence(double, Rng&)>& simulate,
                                double target_len, int pilots, std::uint64_t seed,
                                double t_hi_start = 1.0) {
    const auto mean_len = [&](double T) {
        double acc = 0.0;
        for (int i = 0; i < pilots; ++i) {
            Rng rng = make_stream(seed, 0xCAB0 + static_cast<std::uint64_t>(i));
            acc += static_cast<double>(simulate(T, rng).size());
        }
        return acc / pilots;
    };
    double lo = 0.0, hi = t_hi_start;
    while (mean_len(hi) < target_len) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e6) throw std::runtime_error("calibrate_horizon: horizon diverged");
    }
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mean_len(mid) < target_len)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// ---- tagged generator dispatch -------------------------------------------------

struct GeneratorSpec {
    enum class Kind { Hawkes, SelfCorrection, Nhpp1, Nhpp2 };
    Kind kind = Kind::Hawkes;
    double mu = 10.0, alpha = 1.0, beta = 1.0;  // hawkes / self-correction
    double c = 100.0, c1 = 50.0, c2 = 50.0;     // non-homogeneous scales
    double horizon = 0.0;  // 0: calibrate to target_len (unit horizon for NHPPs)
    double target_len = 30.0;
    int count = 5000;
};

inline GeneratorSpec::Kind generator_kind_from_name(const std::string& name) {
    if (name == "hawkes") return GeneratorSpec::Kind::Hawkes;
    if (name == "self_correction") return GeneratorSpec::Kind::SelfCorrection;
    if (name == "nhpp1") return GeneratorSpec::Kind::Nhpp1;
    if (name == "nhpp2") return GeneratorSpec::Kind::Nhpp2;
    throw std::invalid_argument("unknown generator: " + name);
}

inline Dataset generate(const GeneratorSpec& spec, std::uint64_t seed) {
    switch (spec.kind) {
        case GeneratorSpec::Kind::Hawkes: {
            double T = spec.horizon;
            if (T <= 0.0)
                T = calibrate_horizon(
                    [&](double h, Rng& r) { return sample_hawkes(spec.mu, spec.alpha, spec.beta, h, r); },
                    spec.target_len, 200, seed);
            return gen_hawkes(spec.mu, spec.alpha, spec.beta, T, spec.count, seed);
        }
        case GeneratorSpec::Kind::SelfCorrection: {
            double T = spec.horizon;
            if (T <= 0.0)
                T = calibrate_horizon(
                    [&](double h, Rng& r) { return sample_self_correction(spec.mu, spec.alpha, h, r); },
                    spec.target_len, 200, seed);
            return gen_self_correction(spec.mu, spec.alpha, T, spec.count, seed);
        }
        case GeneratorSpec::Kind::Nhpp1:
            return gen_nhpp1(spec.c, spec.count, seed, spec.horizon > 0.0 ? spec.horizon : 1.0);
        case GeneratorSpec::Kind::Nhpp2:
            return gen_nhpp2(spec.c1, spec.c2, spec.count, seed,
                             spec.horizon > 0.0 ? spec.horizon : 1.0);
    }
    throw std::logic_error("unreachable");
}

}  // namespace dapp
