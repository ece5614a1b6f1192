#pragma once

#include <vector>

#include "dapp/attention.hpp"
#include "dapp/likelihood.hpp"

namespace dapp::testing {

// Small model so gradient checks and toys stay fast and well conditioned.
inline ModelParams tiny_model(std::uint64_t seed, int marks = 0, int heads = 2,
                              double init_rate = 1.0) {
    DappConfig cfg;
    cfg.heads = heads;
    cfg.value_dim = 2;
    cfg.feature_dim = 2;
    cfg.noise_dim = 2;
    cfg.hidden = {4};
    Rng rng = make_stream(seed, 0x71);
    return ModelParams::init(cfg, MarkSpace{marks}, rng, init_rate);
}

inline EventSequence make_seq(std::vector<double> ts, double T,
                              const std::vector<int>& marks = {}) {
    EventSequence s;
    s.horizon = T;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        Event e{ts[i], std::nullopt};
        if (!marks.empty()) e.mark = marks[i];
        s.events.push_back(e);
    }
    return s;
}

struct FlatParams {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    std::vector<double> point;
};

inline FlatParams flatten(const ModelParams& mp) {
    FlatParams fp;
    mp.for_each_param([&](const std::string&, const Mat& m) {
        fp.shapes.emplace_back(m.rows(), m.cols());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) fp.point.push_back(m(i, j));
    });
    return fp;
}

// Gradient check of the full minibatch loss (offline attention) against
// central finite differences, over every parameter group.
inline double loss_grad_check(const ModelParams& mp, const std::vector<EventSequence>& seqs,
                              const IntegrationConfig& ic, int D, std::uint64_t seed,
                              double step = 1e-5) {
    Rng rng = make_stream(seed, 0x5EED);
    std::vector<Mat> noise;
    std::vector<Mat> phases;
    for (int k = 0; k < mp.config.heads; ++k) {
        noise.push_back(sample_noise(mp.config.noise_dim, D, rng));
        phases.emplace_back(draw_phases(D, rng));
    }
    std::vector<SequencePlan> plans;
    for (const EventSequence& s : seqs)
        plans.push_back(build_plan(s, mp.mark_space.channels(), ic.grid_points));

    const FlatParams fp = flatten(mp);
    const auto build = [&](ad::Tape& tape, const std::vector<ad::NodeId>& leaves) {
        BoundParams bp = bound_params_from_leaves(leaves, mp);
        std::vector<BoundFeatureBatch> feats;
        for (int k = 0; k < mp.config.heads; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            feats.push_back(BoundFeatureBatch{
                generate_features_graph(tape, bp.generators[ku], noise[ku]), phases[ku]});
        }
        ad::NodeId total = tape.constant_scalar(0.0);
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            const auto sets = offline_history_sets(seqs[i].size(), mp.config.heads);
            total = tape.add(total,
                             sequence_loglik_graph(tape, bp, mp, feats, seqs[i], plans[i], sets));
        }
        return tape.scale(total, -1.0 / static_cast<double>(seqs.size()));
    };
    return ad::grad_check(build, fp.shapes, fp.point, step);
}

}  // namespace dapp::testing
