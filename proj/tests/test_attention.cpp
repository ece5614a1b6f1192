#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "dapp/attention.hpp"
#include "test_util.hpp"

using namespace dapp;

namespace {

struct Fixture {
    ModelParams mp;
    std::vector<FourierFeatureBatch> fbs;

    explicit Fixture(std::uint64_t seed, int D = 8, int marks = 0)
        : mp(dapp::testing::tiny_model(seed, marks)) {
        Rng rng = make_stream(seed, 0xFEA7);
        fbs = draw_feature_batches(mp, D, rng);
    }
};

}  // namespace

TEST(Attention, SinglePastEventGetsWeightOne) {
    Fixture f(1);
    const Mat hist = f.mp.embed(0.2, std::nullopt);
    const Vec w = normalized_scores(f.mp.embed(0.9, std::nullopt), hist, f.fbs[0],
                                    KeyMap{f.mp.heads[0].W_u});
    ASSERT_EQ(w.size(), 1);
    EXPECT_DOUBLE_EQ(w[0], 1.0);
}

TEST(Attention, NormalizedScoresSumToOne) {
    Fixture f(2);
    Rng rng = make_stream(2, 99);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> ts;
        for (int i = 0; i < 50; ++i) ts.push_back(unif(rng));
        std::sort(ts.begin(), ts.end());
        ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
        Mat hist(f.mp.dim(), static_cast<Eigen::Index>(ts.size()));
        for (std::size_t i = 0; i < ts.size(); ++i) hist.col(static_cast<Eigen::Index>(i)) = f.mp.embed(ts[i], std::nullopt);
        const Vec w = normalized_scores(f.mp.embed(1.5, std::nullopt), hist, f.fbs[0],
                                        KeyMap{f.mp.heads[0].W_u});
        EXPECT_NEAR(w.sum(), 1.0, 1e-12);
        EXPECT_GE(w.minCoeff(), 0.0);
    }
}

TEST(Attention, RatioNormalizationArithmetic) {
    // raw scores {0.2, 0.6} normalize to {0.25, 0.75}
    Vec s(2);
    s << 0.2, 0.6;
    const Vec w = s / s.sum();
    EXPECT_DOUBLE_EQ(w[0], 0.25);
    EXPECT_DOUBLE_EQ(w[1], 0.75);
}

TEST(Attention, NormalizationIsScaleInvariant) {
    Fixture f(3);
    DappIntensity eval(f.mp, f.fbs);
    for (double t : {0.1, 0.3, 0.45}) eval.push_event(t, std::nullopt);
    const Vec s = eval.scores(0.8, std::nullopt, {0, 1, 2}, 0);
    const Vec w1 = s / s.sum();
    const Vec s2 = 37.5 * s;
    const Vec w2 = s2 / s2.sum();
    EXPECT_LT((w1 - w2).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Attention, EmptyHistoryConventions) {
    Fixture f(4);
    const Mat empty(f.mp.dim(), 0);
    EXPECT_THROW(
        normalized_scores(f.mp.embed(0.5, std::nullopt), empty, f.fbs[0], KeyMap{f.mp.heads[0].W_u}),
        EmptyHistory);
    const Vec h = attention_head(f.mp.embed(0.5, std::nullopt), empty, f.fbs[0], f.mp.heads[0]);
    EXPECT_EQ(h.size(), f.mp.config.value_dim);
    EXPECT_DOUBLE_EQ(h.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Attention, SinglePastEventHeadIsValueEmbedding) {
    Fixture f(5);
    const Vec x1 = f.mp.embed(0.2, std::nullopt);
    Mat hist(f.mp.dim(), 1);
    hist.col(0) = x1;
    const Vec h = attention_head(f.mp.embed(0.7, std::nullopt), hist, f.fbs[0], f.mp.heads[0]);
    EXPECT_LT((h - f.mp.heads[0].W_v * x1).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, HeadMatchesHandRolledToy) {
    Fixture f(6, 4);
    const std::vector<double> ts{0.15, 0.4, 0.75};
    Mat hist(f.mp.dim(), 3);
    for (int i = 0; i < 3; ++i) hist.col(i) = f.mp.embed(ts[static_cast<std::size_t>(i)], std::nullopt);
    const Vec x = f.mp.embed(0.95, std::nullopt);
    const Vec h = attention_head(x, hist, f.fbs[0], f.mp.heads[0]);

    // independent straight-line recomputation with explicit loops
    const auto& fb = f.fbs[0];
    const Mat& wu = f.mp.heads[0].W_u;
    const int D = fb.count();
    const auto phi = [&](const Vec& v) {
        std::vector<double> out;
        for (int j = 0; j < D; ++j) {
            double dot = fb.phases[j];
            for (int a = 0; a < wu.rows(); ++a) {
                double key = 0.0;
                for (int c = 0; c < wu.cols(); ++c) key += wu(a, c) * v[c];
                dot += fb.omegas(j, a) * key;
            }
            out.push_back(std::sqrt(2.0 / D) * std::cos(dot));
        }
        return out;
    };
    const auto phix = phi(x);
    std::vector<double> scores;
    double denom = 0.0;
    for (int i = 0; i < 3; ++i) {
        const auto phii = phi(hist.col(i));
        double s = 0.0;
        for (int j = 0; j < D; ++j) s += phix[static_cast<std::size_t>(j)] * phii[static_cast<std::size_t>(j)];
        s = std::max(s, kScoreFloor);
        scores.push_back(s);
        denom += s;
    }
    Vec expected = Vec::Zero(f.mp.config.value_dim);
    for (int i = 0; i < 3; ++i)
        expected += (scores[static_cast<std::size_t>(i)] / denom) * (f.mp.heads[0].W_v * hist.col(i));
    EXPECT_LT((h - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, HeadIsPermutationInvariant) {
    Fixture f(7);
    Rng rng = make_stream(7, 5);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> ts;
    for (int i = 0; i < 12; ++i) ts.push_back(unif(rng));
    std::sort(ts.begin(), ts.end());
    Mat hist(f.mp.dim(), 12);
    for (int i = 0; i < 12; ++i) hist.col(i) = f.mp.embed(ts[static_cast<std::size_t>(i)], std::nullopt);
    const Vec x = f.mp.embed(1.4, std::nullopt);
    const Vec h0 = attention_head(x, hist, f.fbs[0], f.mp.heads[0]);

    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Mat shuffled(f.mp.dim(), 12);
    for (int i = 0; i < 12; ++i) shuffled.col(i) = hist.col(perm[static_cast<std::size_t>(i)]);
    const Vec h1 = attention_head(x, shuffled, f.fbs[0], f.mp.heads[0]);
    EXPECT_LT((h0 - h1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, IntensityWithEmptyHistory) {
    Fixture f(8);
    f.mp.mu_raw(0, 0) = softplus_inv(1.0);
    f.mp.b(0, 0) = 0.0;
    const Mat empty(f.mp.dim(), 0);
    EXPECT_NEAR(intensity(f.mp, f.fbs, 0.3, std::nullopt, empty), 1.0 + std::log(2.0), 1e-12);
}

TEST(Attention, IntensityApproachesMuWhenTriggerUnderflows) {
    Fixture f(9);
    f.mp.W.setZero();
    f.mp.b(0, 0) = -30.0;
    const Mat empty(f.mp.dim(), 0);
    const double mu = f.mp.mu(std::nullopt);
    EXPECT_NEAR(intensity(f.mp, f.fbs, 0.3, std::nullopt, empty), mu, 1e-12);
}

TEST(Attention, IntensityMatchesStraightLineToy) {
    Fixture f(10, 4);
    const std::vector<double> ts{0.15, 0.4, 0.75};
    Mat hist(f.mp.dim(), 3);
    for (int i = 0; i < 3; ++i) hist.col(i) = f.mp.embed(ts[static_cast<std::size_t>(i)], std::nullopt);
    const double lam = intensity(f.mp, f.fbs, 0.95, std::nullopt, hist);

    double trigger = f.mp.b(0, 0);
    const Vec x = f.mp.embed(0.95, std::nullopt);
    for (int k = 0; k < f.mp.config.heads; ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const Vec h = attention_head(x, hist, f.fbs[ku], f.mp.heads[ku]);
        for (int i = 0; i < f.mp.config.value_dim; ++i)
            trigger += f.mp.W(k * f.mp.config.value_dim + i, 0) * h[i];
    }
    const double expected = f.mp.mu(std::nullopt) + std::log1p(std::exp(trigger));
    EXPECT_NEAR(lam, expected, 1e-12);
}

TEST(Attention, IntensityStrictlyAboveMu) {
    Fixture f(11);
    Rng rng = make_stream(11, 2);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    DappIntensity eval(f.mp, f.fbs);
    for (double t : {0.1, 0.2, 0.6}) eval.push_event(t, std::nullopt);
    for (int rep = 0; rep < 25; ++rep) {
        const double t = 0.61 + unif(rng);
        const double lam = eval.intensity(t, std::nullopt);
        EXPECT_GT(lam, f.mp.mu(std::nullopt));
        EXPECT_GT(f.mp.mu(std::nullopt), 0.0);
    }
}

TEST(Attention, EvaluatorMatchesReferenceIntensity) {
    Fixture f(12, 8);
    Rng rng = make_stream(12, 7);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> ts;
    for (int i = 0; i < 10; ++i) ts.push_back(unif(rng));
    std::sort(ts.begin(), ts.end());
    DappIntensity eval(f.mp, f.fbs);
    for (double t : ts) eval.push_event(t, std::nullopt);
    for (int prefix : {0, 1, 4, 10}) {
        const double t = ts[static_cast<std::size_t>(std::max(0, prefix - 1))] + 0.01;
        Mat hist(f.mp.dim(), prefix);
        for (int i = 0; i < prefix; ++i) hist.col(i) = f.mp.embed(ts[static_cast<std::size_t>(i)], std::nullopt);
        EXPECT_NEAR(eval.intensity(t, std::nullopt, prefix),
                    intensity(f.mp, f.fbs, t, std::nullopt, hist), 1e-12);
    }
}

TEST(Attention, MarkedIntensityUsesPerMarkBaseRate) {
    Fixture f(13, 8, 2);
    f.mp.mu_raw(0, 0) = softplus_inv(1.0);
    f.mp.mu_raw(1, 0) = softplus_inv(3.0);
    f.mp.W.setZero();
    f.mp.b(0, 0) = -40.0;
    const Mat empty(f.mp.dim(), 0);
    EXPECT_NEAR(intensity(f.mp, f.fbs, 0.1, 0, empty), 1.0, 1e-12);
    EXPECT_NEAR(intensity(f.mp, f.fbs, 0.1, 1, empty), 3.0, 1e-12);
    EXPECT_THROW(f.mp.channel(5), MarkOutOfRange);
}

// ---- online attention -------------------------------------------------------

TEST(Attention, FullBudgetActiveSetEqualsHistory) {
    Fixture f(14);
    const std::vector<double> ts{0.1, 0.25, 0.4, 0.62, 0.8};
    OnlineAttention online(f.mp, f.fbs, /*eta=*/16);
    DappIntensity offline(f.mp, f.fbs);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        online.absorb(ts[i], std::nullopt);
        offline.push_event(ts[i], std::nullopt);
        for (const ActiveSet& s : online.sets()) {
            std::vector<int> want(i + 1);
            std::iota(want.begin(), want.end(), 0);
            EXPECT_EQ(s.indices(), want);
        }
        // identical attended sets imply bit-identical intensities
        const double t = ts[i] + 0.03;
        EXPECT_EQ(online.intensity(t, std::nullopt), offline.intensity(t, std::nullopt));
    }
}

TEST(Attention, EtaOneKeepsOnlyMostRecentEvent) {
    Fixture f(15);
    OnlineAttention online(f.mp, f.fbs, 1);
    const std::vector<double> ts{0.1, 0.3, 0.5, 0.7};
    for (std::size_t i = 0; i < ts.size(); ++i) {
        online.absorb(ts[i], std::nullopt);
        for (const ActiveSet& s : online.sets()) {
            ASSERT_EQ(s.entries.size(), 1u);
            EXPECT_EQ(s.entries[0].index, static_cast<int>(i));
        }
    }
}

TEST(Attention, EmptyActiveSetIntensityIsBase) {
    Fixture f(16);
    OnlineAttention online(f.mp, f.fbs, 3);
    const double expected = f.mp.mu(std::nullopt) + softplus(f.mp.b(0, 0));
    EXPECT_NEAR(online.intensity(0.05, std::nullopt), expected, 1e-15);
}

TEST(Attention, OutOfOrderArrivalThrows) {
    Fixture f(17);
    OnlineAttention online(f.mp, f.fbs, 3);
    online.absorb(0.5, std::nullopt);
    EXPECT_THROW(online.absorb(0.4, std::nullopt), OutOfOrderEvent);
    EXPECT_THROW(online.absorb(0.5, std::nullopt), OutOfOrderEvent);
}

TEST(Attention, TiedAveragesEvictOldest) {
    ActiveSet set;
    Vec none(0);
    update_active_set(set, 0, none, 2);
    Vec one(1);
    one << 0.5;
    update_active_set(set, 1, one, 2);  // entry 0 has avg 0.5
    Vec two(2);
    two << 0.5, 0.5;  // entry 1 reaches avg 0.5 as well
    update_active_set(set, 2, two, 2);  // size 3 > eta=2: tie between 0 and 1
    ASSERT_EQ(set.entries.size(), 2u);
    EXPECT_EQ(set.entries[0].index, 1);  // oldest (0) evicted
    EXPECT_EQ(set.entries[1].index, 2);
}

TEST(Attention, EvictionMatchesBruteForceReplay) {
    Fixture f(18, 6);
    const std::vector<double> ts{0.08, 0.21, 0.33, 0.47, 0.61, 0.78};
    const int eta = 3;
    OnlineAttention online(f.mp, f.fbs, eta);
    DappIntensity eval(f.mp, f.fbs);

    // brute force: store full score lists, recompute averages from scratch
    std::vector<std::vector<std::vector<double>>> score_lists(
        f.fbs.size(), std::vector<std::vector<double>>(ts.size()));
    std::vector<std::vector<int>> retained(f.fbs.size());

    for (std::size_t i = 0; i < ts.size(); ++i) {
        for (std::size_t k = 0; k < f.fbs.size(); ++k) {
            auto& kept = retained[k];
            if (!kept.empty()) {
                const Vec w = eval.normalized_scores(ts[i], std::nullopt, kept, static_cast<int>(k));
                for (std::size_t j = 0; j < kept.size(); ++j)
                    score_lists[k][static_cast<std::size_t>(kept[j])].push_back(w[static_cast<Eigen::Index>(j)]);
            }
            kept.push_back(static_cast<int>(i));
            if (static_cast<int>(kept.size()) > eta) {
                std::size_t worst = 0;
                double best_avg = std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j + 1 < kept.size(); ++j) {
                    const auto& lst = score_lists[k][static_cast<std::size_t>(kept[j])];
                    const double avg =
                        lst.empty() ? 0.0
                                    : std::accumulate(lst.begin(), lst.end(), 0.0) /
                                          static_cast<double>(lst.size());
                    if (avg < best_avg) {
                        best_avg = avg;
                        worst = j;
                    }
                }
                kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(worst));
            }
        }
        eval.push_event(ts[i], std::nullopt);
        online.absorb(ts[i], std::nullopt);
        for (std::size_t k = 0; k < f.fbs.size(); ++k)
            EXPECT_EQ(online.sets()[k].indices(), retained[k]) << "step " << i << " head " << k;
    }
}

TEST(Attention, LambdaGradientPassesGradCheckForAllGroups) {
    // gradient of lambda at a query point w.r.t. every parameter group
    for (std::uint64_t seed : {31u, 32u, 33u}) {
        const ModelParams mp = dapp::testing::tiny_model(seed);
        const EventSequence seq = dapp::testing::make_seq({0.2, 0.5, 0.8}, 1.0);
        Rng rng = make_stream(seed, 0x5EED);
        std::vector<Mat> noise, phases;
        for (int k = 0; k < mp.config.heads; ++k) {
            noise.push_back(sample_noise(mp.config.noise_dim, 4, rng));
            phases.emplace_back(draw_phases(4, rng));
        }
        const SequencePlan plan = build_plan(seq, 1, 8);
        const auto sets = offline_history_sets(seq.size(), mp.config.heads);
        const auto fp = dapp::testing::flatten(mp);
        const auto build = [&](ad::Tape& tape, const std::vector<ad::NodeId>& leaves) {
            BoundParams bp = bound_params_from_leaves(leaves, mp);
            std::vector<BoundFeatureBatch> feats;
            for (int k = 0; k < mp.config.heads; ++k) {
                const auto ku = static_cast<std::size_t>(k);
                feats.push_back(BoundFeatureBatch{
                    generate_features_graph(tape, bp.generators[ku], noise[ku]), phases[ku]});
            }
            const auto rows = lambda_rows_graph(tape, bp, mp, feats, seq, plan, sets);
            const int last = static_cast<int>(plan.channels[0].times.size()) - 1;
            return tape.gather_cols(rows[0], {last});  // lambda at T with full history
        };
        EXPECT_LT(ad::grad_check(build, fp.shapes, fp.point, 1e-5), 1e-4) << "seed " << seed;
    }
}
