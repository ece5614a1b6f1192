#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "dapp/attention.hpp"
#include "dapp/autodiff.hpp"
#include "dapp/events.hpp"

namespace dapp {

struct IntegrationConfig {
    int grid_points = 200;  // uniform grid per sequence, unioned with event times
};

struct TrainConfig {
    int iterations = 1000;
    int minibatch = 32;
    int fourier_features = 20;  // D per iteration
    double learning_rate = 1e-3;
    double grad_clip = 10.0;
    std::uint64_t seed = 0;
    bool online = false;
    double eta_fraction = 0.5;  // online memory budget as a fraction of max length
};

struct DivergedLoss : std::runtime_error {
    int iteration;
    explicit DivergedLoss(int it)
        : std::runtime_error("loss diverged at iteration " + std::to_string(it)), iteration(it) {}
};

struct EmptyDataset : std::runtime_error {
    EmptyDataset() : std::runtime_error("dataset has no sequences") {}
};

// ---- integration plan -------------------------------------------------------

// Evaluation schedule for one sequence: the compensator is integrated by
// trapezoid per inter-event segment on the union of the uniform grid and the
// event times (the intensity is smooth between events and jumps at them), and
// each event contributes a log term evaluated with the history strictly
// before it.
struct SequencePlan {
    struct Channel {
        std::vector<double> times;
        std::vector<int> prefixes;   // history length per evaluation point
        std::vector<double> weights; // trapezoid quadrature weights
    };
    std::vector<Channel> channels;
    std::vector<std::pair<int, int>> log_points;  // per event: (channel, column)
    // contiguous column ranges sharing one history prefix: (first, count, prefix)
    std::vector<std::array<int, 3>> segments;     // identical across channels
};

inline SequencePlan build_plan(const EventSequence& seq, int channels, int grid_points) {
    if (grid_points < 2) throw std::invalid_argument("build_plan: need at least 2 grid points");
    const double T = seq.horizon;
    const std::size_t n = seq.size();

    std::vector<double> grid(static_cast<std::size_t>(grid_points));
    for (int g = 0; g < grid_points; ++g)
        grid[static_cast<std::size_t>(g)] = T * static_cast<double>(g) / (grid_points - 1);

    SequencePlan plan;
    plan.channels.resize(static_cast<std::size_t>(channels));
    plan.log_points.resize(n);

    std::size_t g_at = 0;
    for (std::size_t i = 0; i <= n; ++i) {
        const double lo = i == 0 ? 0.0 : seq.events[i - 1].t;
        const double hi = i == n ? T : seq.events[i].t;
        std::vector<double> pts{lo};
        while (g_at < grid.size() && grid[g_at] <= lo) ++g_at;
        while (g_at < grid.size() && grid[g_at] < hi) pts.push_back(grid[g_at++]);
        pts.push_back(hi);

        const int first = static_cast<int>(plan.channels[0].times.size());
        plan.segments.push_back({first, static_cast<int>(pts.size()), static_cast<int>(i)});
        for (auto& ch : plan.channels) {
            for (double t : pts) {
                ch.times.push_back(t);
                ch.prefixes.push_back(static_cast<int>(i));
                ch.weights.push_back(0.0);
            }
            for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
                const double half = 0.5 * (pts[k + 1] - pts[k]);
                ch.weights[static_cast<std::size_t>(first) + k] += half;
                ch.weights[static_cast<std::size_t>(first) + k + 1] += half;
            }
        }
        if (i < n) {
            // right endpoint of this segment doubles as the log term of event i
            const int ch = channels == 1 ? 0 : seq.events[i].mark.value_or(0);
            plan.log_points[i] = {ch, first + static_cast<int>(pts.size()) - 1};
        }
    }
    return plan;
}

// ---- generic numeric log-likelihood -----------------------------------------

// Works for any conditional intensity lambda(t, channel, prefix); the DAPP and
// Hawkes evaluators plug in here, as does any oracle in tests.
using IntensityFn = std::function<double(double t, int channel, int prefix)>;

inline double sequence_loglik(const IntensityFn& intensity, const EventSequence& seq, int channels,
                              const IntegrationConfig& ic) {
    const SequencePlan plan = build_plan(seq, channels, ic.grid_points);
    double ll = 0.0;
    std::vector<std::vector<double>> lambda(plan.channels.size());
    for (std::size_t c = 0; c < plan.channels.size(); ++c) {
        const auto& ch = plan.channels[c];
        lambda[c].resize(ch.times.size());
        for (std::size_t j = 0; j < ch.times.size(); ++j) {
            const double l = intensity(ch.times[j], static_cast<int>(c), ch.prefixes[j]);
            lambda[c][j] = l;
            ll -= ch.weights[j] * l;
        }
    }
    for (std::size_t i = 0; i < seq.size(); ++i) {
        const auto [c, col] = plan.log_points[i];
        const double l = lambda[static_cast<std::size_t>(c)][static_cast<std::size_t>(col)];
        if (!(l > 0.0)) throw DomainError("sequence_loglik: non-positive intensity at event");
        ll += std::log(l);
    }
    return ll;
}

// DAPP log-likelihood, value path. With `eta` set, each history is the
// per-head active set maintained by the online selection rule.
inline double dapp_sequence_loglik(const ModelParams& mp,
                                   const std::vector<FourierFeatureBatch>& fbs,
                                   const EventSequence& seq, const IntegrationConfig& ic,
                                   std::optional<int> eta = std::nullopt) {
    DappIntensity eval(mp, fbs, seq);
    const int channels = mp.mark_space.channels();
    const auto mark_of = [&](int channel) -> std::optional<int> {
        return mp.mark_space.size == 0 ? std::nullopt : std::optional<int>(channel);
    };
    if (!eta) {
        return sequence_loglik(
            [&](double t, int c, int prefix) { return eval.intensity(t, mark_of(c), prefix); }, seq,
            channels, ic);
    }
    const auto snapshots = OnlineAttention::replay(mp, fbs, seq, *eta);
    return sequence_loglik(
        [&](double t, int c, int prefix) {
            return eval.intensity_with_indices(t, mark_of(c), snapshots[static_cast<std::size_t>(prefix)]);
        },
        seq, channels, ic);
}

// ---- differentiable loss graph ----------------------------------------------

struct BoundParams {
    std::vector<GeneratorNodes> generators;
    std::vector<ad::NodeId> W_u, W_v;
    ad::NodeId W, b, mu_raw;
    std::vector<ad::NodeId> ordered;  // same order as ModelParams::for_each_param
};

inline BoundParams bind_params(ad::Tape& tape, const ModelParams& mp) {
    BoundParams bp;
    for (const HeadParams& hp : mp.heads) {
        GeneratorNodes gen;
        for (std::size_t l = 0; l < hp.generator.weights.size(); ++l) {
            gen.weights.push_back(tape.param(hp.generator.weights[l]));
            gen.biases.push_back(tape.param(hp.generator.biases[l]));
            bp.ordered.push_back(gen.weights.back());
            bp.ordered.push_back(gen.biases.back());
        }
        bp.generators.push_back(std::move(gen));
        bp.W_u.push_back(tape.param(hp.W_u));
        bp.W_v.push_back(tape.param(hp.W_v));
        bp.ordered.push_back(bp.W_u.back());
        bp.ordered.push_back(bp.W_v.back());
    }
    bp.W = tape.param(mp.W);
    bp.b = tape.param(mp.b);
    bp.mu_raw = tape.param(mp.mu_raw);
    bp.ordered.push_back(bp.W);
    bp.ordered.push_back(bp.b);
    bp.ordered.push_back(bp.mu_raw);
    return bp;
}

// Per-head frequencies on the tape (gradients flow into the generator) plus
// their fixed phases; `values` carries the same frequencies as plain numbers
// for the online replay.
struct BoundFeatureBatch {
    ad::NodeId omegas;
    Mat phases;  // D x 1
};

inline std::vector<BoundFeatureBatch> bind_feature_draw(
    ad::Tape& tape, const BoundParams& bp, const std::vector<FourierFeatureBatch>& fbs,
    const std::vector<Mat>& noise) {
    std::vector<BoundFeatureBatch> out;
    for (std::size_t k = 0; k < bp.generators.size(); ++k) {
        BoundFeatureBatch bf;
        bf.omegas = generate_features_graph(tape, bp.generators[k], noise[k]);
        bf.phases = fbs[k].phases;
        out.push_back(std::move(bf));
    }
    return out;
}

// Intensity rows (one 1 x n_points node per mark channel) over a plan's
// evaluation points. `history_sets` selects each prefix's attended events per
// head; offline attention passes the full prefixes.
inline std::vector<ad::NodeId> lambda_rows_graph(
    ad::Tape& tape, const BoundParams& bp, const ModelParams& mp,
    const std::vector<BoundFeatureBatch>& feats, const EventSequence& seq,
    const SequencePlan& plan,
    const std::vector<std::vector<std::vector<int>>>& history_sets) {
    const int K = mp.config.heads;
    const int p = mp.config.value_dim;
    const Mat X = mp.embed_sequence(seq);
    const double scale = feats.empty() ? 1.0 : std::sqrt(2.0 / static_cast<double>(feats[0].phases.rows()));

    // per-head feature and value columns over the sequence's events
    std::vector<ad::NodeId> phi_hist(static_cast<std::size_t>(K)), values(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        if (X.cols() > 0) {
            ad::NodeId keys = tape.matmul(bp.W_u[ku], tape.constant(X));
            ad::NodeId proj = tape.matmul(feats[ku].omegas, keys);
            phi_hist[ku] = tape.scale(tape.cos(tape.add_colvec(proj, tape.constant(feats[ku].phases))), scale);
            values[ku] = tape.matmul(bp.W_v[ku], tape.constant(X));
        }
    }

    std::vector<ad::NodeId> channel_lambda;
    for (std::size_t c = 0; c < plan.channels.size(); ++c) {
        const auto& ch = plan.channels[c];
        const std::optional<int> mark =
            mp.mark_space.size == 0 ? std::nullopt : std::optional<int>(static_cast<int>(c));
        Mat Xe(mp.dim(), static_cast<Eigen::Index>(ch.times.size()));
        for (std::size_t j = 0; j < ch.times.size(); ++j)
            Xe.col(static_cast<Eigen::Index>(j)) = mp.embed(ch.times[j], mark);

        std::vector<ad::NodeId> head_rows;
        for (int k = 0; k < K; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            ad::NodeId keys = tape.matmul(bp.W_u[ku], tape.constant(Xe));
            ad::NodeId proj = tape.matmul(feats[ku].omegas, keys);
            ad::NodeId phi_eval =
                tape.scale(tape.cos(tape.add_colvec(proj, tape.constant(feats[ku].phases))), scale);

            std::vector<ad::NodeId> seg_outputs;
            for (const auto& [first, count, prefix] : plan.segments) {
                const std::vector<int>& hist = history_sets[static_cast<std::size_t>(prefix)][ku];
                if (hist.empty()) {
                    seg_outputs.push_back(tape.constant(Mat::Zero(p, count)));
                    continue;
                }
                std::vector<int> cols(static_cast<std::size_t>(count));
                std::iota(cols.begin(), cols.end(), first);
                ad::NodeId phi_seg = tape.gather_cols(phi_eval, cols);
                ad::NodeId phi_h = tape.gather_cols(phi_hist[ku], hist);
                ad::NodeId raw = tape.matmul(tape.transpose(phi_h), phi_seg);
                ad::NodeId clamped = tape.clamp_min(raw, kScoreFloor);
                ad::NodeId weights = tape.div_rowvec(clamped, tape.colsum(clamped));
                seg_outputs.push_back(tape.matmul(tape.gather_cols(values[ku], hist), weights));
            }
            head_rows.push_back(tape.hcat(seg_outputs));
        }
        ad::NodeId h_all = K == 1 ? head_rows[0] : tape.vcat(head_rows);
        ad::NodeId trigger = tape.add(tape.matmul(tape.transpose(bp.W), h_all), bp.b);
        ad::NodeId mu_c = tape.softplus(tape.gather_cols(tape.transpose(bp.mu_raw), {static_cast<int>(c)}));
        channel_lambda.push_back(tape.add(tape.softplus(trigger), mu_c));
    }
    return channel_lambda;
}

// Log-likelihood of one sequence as a tape node (Eq. 1 with the plan's quadrature).
inline ad::NodeId sequence_loglik_graph(
    ad::Tape& tape, const BoundParams& bp, const ModelParams& mp,
    const std::vector<BoundFeatureBatch>& feats, const EventSequence& seq,
    const SequencePlan& plan,
    const std::vector<std::vector<std::vector<int>>>& history_sets) {
    const std::vector<ad::NodeId> channel_lambda =
        lambda_rows_graph(tape, bp, mp, feats, seq, plan, history_sets);

    ad::NodeId loglik = tape.constant_scalar(0.0);
    for (std::size_t c = 0; c < plan.channels.size(); ++c) {
        const auto& ch = plan.channels[c];
        Mat w(static_cast<Eigen::Index>(ch.weights.size()), 1);
        for (std::size_t j = 0; j < ch.weights.size(); ++j) w(static_cast<Eigen::Index>(j), 0) = ch.weights[j];
        loglik = tape.sub(loglik, tape.matmul(channel_lambda[c], tape.constant(w)));

        std::vector<int> cols;
        for (const auto& [evch, col] : plan.log_points)
            if (evch == static_cast<int>(c)) cols.push_back(col);
        if (!cols.empty())
            loglik = tape.add(loglik, tape.sum(tape.log(tape.gather_cols(channel_lambda[c], cols))));
    }
    return loglik;
}

// Rebuilds the bound-parameter structure from an externally created leaf list
// (ModelParams::for_each_param order); used by gradient checks.
inline BoundParams bound_params_from_leaves(const std::vector<ad::NodeId>& leaves,
                                            const ModelParams& shape) {
    BoundParams bp;
    std::size_t at = 0;
    for (const HeadParams& hp : shape.heads) {
        GeneratorNodes gen;
        for (std::size_t l = 0; l < hp.generator.weights.size(); ++l) {
            gen.weights.push_back(leaves[at++]);
            gen.biases.push_back(leaves[at++]);
        }
        bp.generators.push_back(std::move(gen));
        bp.W_u.push_back(leaves[at++]);
        bp.W_v.push_back(leaves[at++]);
    }
    bp.W = leaves[at++];
    bp.b = leaves[at++];
    bp.mu_raw = leaves[at++];
    bp.ordered = leaves;
    return bp;
}

// Full prefixes (offline attention) for a sequence of length n.
inline std::vector<std::vector<std::vector<int>>> offline_history_sets(std::size_t n, int heads) {
    std::vector<std::vector<std::vector<int>>> sets(n + 1);
    std::vector<int> prefix;
    for (std::size_t i = 0; i <= n; ++i) {
        sets[i].assign(static_cast<std::size_t>(heads), prefix);
        if (i < n) prefix.push_back(static_cast<int>(i));
    }
    return sets;
}

// ---- optimizer ---------------------------------------------------------------

// Adaptive-moment gradient step with global-norm clipping.
class AdamOptimizer {
public:
    explicit AdamOptimizer(double lr, double clip = 10.0) : lr_(lr), clip_(clip) {}

    void step(std::vector<Mat*>& params, std::vector<Mat>& grads) {
        if (m_.empty()) {
            for (const Mat* p : params) {
                m_.emplace_back(Mat::Zero(p->rows(), p->cols()));
                v_.emplace_back(Mat::Zero(p->rows(), p->cols()));
            }
        }
        double sq = 0.0;
        for (const Mat& g : grads) sq += g.squaredNorm();
        const double norm = std::sqrt(sq);
        if (clip_ > 0.0 && norm > clip_) {
            const double s = clip_ / norm;
            for (Mat& g : grads) g *= s;
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
            const Mat mhat = m_[i] / c1;
            const Mat vhat = v_[i] / c2;
            *params[i] -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
        }
    }

private:
    double lr_, clip_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::vector<Mat> m_, v_;
    int t_ = 0;
};

// ---- training loop (maximum likelihood) ---------------------------------------

struct TrainResult {
    ModelParams params;
    std::vector<double> loss_trace;  // negative mean log-likelihood per iteration
    int eta = 0;                     // online memory budget actually used
};

inline double empirical_rate(const Dataset& ds) {
    double events = 0.0, mass = 0.0;
    for (const EventSequence& s : ds.sequences) {
        events += static_cast<double>(s.size());
        mass += s.horizon * ds.mark_space.channels();
    }
    return mass > 0.0 ? std::max(events / mass, 1e-4) : 1.0;
}

inline TrainResult train(const Dataset& ds, const DappConfig& cfg, const TrainConfig& tc,
                         const IntegrationConfig& ic) {
    if (ds.sequences.empty()) throw EmptyDataset();
    Rng init_rng = make_stream(tc.seed, 0xA11CE);
    ModelParams mp = ModelParams::init(cfg, ds.mark_space, init_rng, empirical_rate(ds));

    std::size_t max_len = 0;
    for (const EventSequence& s : ds.sequences) max_len = std::max(max_len, s.size());
    const int eta = tc.online
                        ? std::max(1, static_cast<int>(std::ceil(tc.eta_fraction * static_cast<double>(max_len))))
                        : 0;

    std::vector<SequencePlan> plans;
    plans.reserve(ds.sequences.size());
    for (const EventSequence& s : ds.sequences)
        plans.push_back(build_plan(s, ds.mark_space.channels(), ic.grid_points));

    AdamOptimizer opt(tc.learning_rate, tc.grad_clip);
    std::vector<Mat*> param_ptrs;
    mp.for_each_param([&](const std::string&, Mat& m) { param_ptrs.push_back(&m); });

    TrainResult result;
    Rng batch_rng = make_stream(tc.seed, 0xBA7C4);
    Rng feat_rng = make_stream(tc.seed, 0xF0F0);

    for (int it = 0; it < tc.iterations; ++it) {
        // minibatch draw
        std::vector<std::size_t> batch;
        const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(tc.minibatch), ds.sequences.size());
        {
            std::vector<std::size_t> pool(ds.sequences.size());
            std::iota(pool.begin(), pool.end(), 0);
            std::shuffle(pool.begin(), pool.end(), batch_rng);
            batch.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
        }
        // per-iteration feature draw, shared across the minibatch
        std::vector<Mat> noise;
        std::vector<FourierFeatureBatch> fbs;
        for (int k = 0; k < cfg.heads; ++k) {
            noise.push_back(sample_noise(cfg.noise_dim, tc.fourier_features, feat_rng));
            FourierFeatureBatch fb;
            fb.omegas = generate_features(mp.heads[static_cast<std::size_t>(k)].generator, noise.back());
            fb.phases = draw_phases(tc.fourier_features, feat_rng);
            fb.head = k;
            fbs.push_back(std::move(fb));
        }

        ad::Tape tape(1 << 16);
        BoundParams bp = bind_params(tape, mp);
        std::vector<BoundFeatureBatch> feats = bind_feature_draw(tape, bp, fbs, noise);

        std::vector<ad::NodeId> terms;
        for (std::size_t idx : batch) {
            const EventSequence& seq = ds.sequences[idx];
            const auto sets = tc.online
                                  ? OnlineAttention::replay(mp, fbs, seq, eta)
                                  : offline_history_sets(seq.size(), cfg.heads);
            terms.push_back(sequence_loglik_graph(tape, bp, mp, feats, seq, plans[idx], sets));
        }
        ad::NodeId total = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
        ad::NodeId loss = tape.scale(total, -1.0 / static_cast<double>(terms.size()));

        const double loss_value = tape.value(loss)(0, 0);
        if (!std::isfinite(loss_value)) throw DivergedLoss(it);
        result.loss_trace.push_back(loss_value);

        tape.backward(loss);
        std::vector<Mat> grads;
        grads.reserve(bp.ordered.size());
        for (ad::NodeId id : bp.ordered) grads.push_back(tape.grad(id));
        opt.step(param_ptrs, grads);
    }

    result.params = std::move(mp);
    result.eta = eta;
    return result;
}

// Mean per-sequence log-likelihood under one frozen large feature draw.
inline double heldout_avg_loglik(const Dataset& ds, const ModelParams& mp, int d_eval,
                                 const IntegrationConfig& ic, std::uint64_t feature_seed,
                                 std::optional<int> eta = std::nullopt) {
    if (ds.sequences.empty()) throw EmptyDataset();
    Rng rng = make_stream(feature_seed, 0xEEE);
    const std::vector<FourierFeatureBatch> fbs = draw_feature_batches(mp, d_eval, rng);
    double acc = 0.0;
    for (const EventSequence& seq : ds.sequences)
        acc += dapp_sequence_loglik(mp, fbs, seq, ic, eta);
    return acc / static_cast<double>(ds.sequences.size());
}

}  // namespace dapp
