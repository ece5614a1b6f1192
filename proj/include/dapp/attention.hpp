#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dapp/events.hpp"
#include "dapp/fourier_score.hpp"
#include "dapp/spectrum.hpp"

namespace dapp {

struct EmptyHistory : std::runtime_error {
    explicit EmptyHistory(const std::string& what) : std::runtime_error(what) {}
};

struct OutOfOrderEvent : std::runtime_error {
    explicit OutOfOrderEvent(const std::string& what) : std::runtime_error(what) {}
};

struct DappConfig {
    int heads = 2;                            // K
    int value_dim = 8;                        // p
    int feature_dim = 16;                     // r
    int noise_dim = 16;                       // q
    std::vector<int> hidden = {128, 256, 128};
    double time_scale = 1.0;  // multiplies the time coordinate before embedding
};

struct HeadParams {
    GeneratorParams generator;
    Mat W_u;  // r x d key map
    Mat W_v;  // p x d value map
};

// All trainable state of the model. Base intensity is one unconstrained real
// per mark channel, mapped through softplus.
struct ModelParams {
    DappConfig config;
    MarkSpace mark_space;
    std::vector<HeadParams> heads;
    Mat W;       // (K p) x 1 output weights
    Mat b;       // 1 x 1 output bias
    Mat mu_raw;  // channels x 1

    [[nodiscard]] int dim() const { return mark_space.dim(); }

    [[nodiscard]] int channel(std::optional<int> mark) const {
        if (mark_space.size == 0) return 0;
        if (!mark) throw MarkOutOfRange("marked model requires a mark");
        if (*mark < 0 || *mark >= mark_space.size)
            throw MarkOutOfRange("mark " + std::to_string(*mark) + " out of range");
        return *mark;
    }

    [[nodiscard]] double mu(std::optional<int> mark) const {
        return softplus(mu_raw(channel(mark), 0));
    }

    static ModelParams init(const DappConfig& cfg, const MarkSpace& ms, Rng& rng,
                            double initial_rate = 1.0) {
        ModelParams mp;
        mp.config = cfg;
        mp.mark_space = ms;
        const int d = ms.dim();
        std::normal_distribution<double> norm;
        const auto randn = [&](Eigen::Index r, Eigen::Index c, double scale) {
            Mat m(r, c);
            for (Eigen::Index i = 0; i < r; ++i)
                for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * norm(rng);
            return m;
        };
        for (int k = 0; k < cfg.heads; ++k) {
            HeadParams hp;
            hp.generator = GeneratorParams::make(cfg.noise_dim, cfg.feature_dim, cfg.hidden);
            hp.generator.init_random(rng);
            hp.W_u = randn(cfg.feature_dim, d, 1.0 / std::sqrt(static_cast<double>(d)));
            hp.W_v = randn(cfg.value_dim, d, 1.0 / std::sqrt(static_cast<double>(d)));
            mp.heads.push_back(std::move(hp));
        }
        mp.W = randn(cfg.heads * cfg.value_dim, 1,
                     1.0 / std::sqrt(static_cast<double>(cfg.heads * cfg.value_dim)));
        // start with a small triggering term so the initial intensity sits
        // near the base rate estimate
        mp.b = Mat::Constant(1, 1, -2.0);
        mp.mu_raw = Mat::Constant(ms.channels(), 1, softplus_inv(std::max(initial_rate, 1e-8)));
        return mp;
    }

    template <typename F>
    void for_each_param(F&& fn) {
        for (std::size_t k = 0; k < heads.size(); ++k) {
            const std::string h = "head" + std::to_string(k) + ".";
            for (std::size_t l = 0; l < heads[k].generator.weights.size(); ++l) {
                fn(h + "gen.w" + std::to_string(l), heads[k].generator.weights[l]);
                fn(h + "gen.b" + std::to_string(l), heads[k].generator.biases[l]);
            }
            fn(h + "W_u", heads[k].W_u);
            fn(h + "W_v", heads[k].W_v);
        }
        fn("W", W);
        fn("b", b);
        fn("mu_raw", mu_raw);
    }

    template <typename F>
    void for_each_param(F&& fn) const {
        const_cast<ModelParams*>(this)->for_each_param(
            [&](const std::string& name, Mat& m) { fn(name, static_cast<const Mat&>(m)); });
    }

    // Event embedding with the configured time scaling applied.
    [[nodiscard]] Vec embed(double t, std::optional<int> mark) const {
        Vec x = embed_event(t, mark, mark_space);
        x[0] *= config.time_scale;
        return x;
    }

    [[nodiscard]] Mat embed_sequence(const EventSequence& seq) const {
        Mat x = dapp::embed_sequence(seq, mark_space);
        if (x.cols() > 0) x.row(0) *= config.time_scale;
        return x;
    }
};

// One feature batch per head, drawn through the head's generator.
inline std::vector<FourierFeatureBatch> draw_feature_batches(const ModelParams& mp, int D,
                                                             Rng& rng) {
    std::vector<FourierFeatureBatch> fbs;
    for (std::size_t k = 0; k < mp.heads.size(); ++k) {
        const Mat z = sample_noise(mp.config.noise_dim, D, rng);
        FourierFeatureBatch fb =
            make_feature_batch(generate_features(mp.heads[k].generator, z), rng, static_cast<int>(k));
        fbs.push_back(std::move(fb));
    }
    return fbs;
}

// ---- reference (straight-line) attention surface -------------------------

// Normalized scores of query x against history columns (Eq. 3 ratio form).
inline Vec normalized_scores(const Vec& x, const Mat& history, const FourierFeatureBatch& fb,
                             const KeyMap& km) {
    if (history.cols() == 0) throw EmptyHistory("normalized_scores: empty history");
    Vec s(history.cols());
    for (Eigen::Index i = 0; i < history.cols(); ++i)
        s[i] = score(x, Vec(history.col(i)), fb, km);
    return s / s.sum();
}

// Attention head output: score-weighted sum of value embeddings; zero vector
// on empty history.
inline Vec attention_head(const Vec& x, const Mat& history, const FourierFeatureBatch& fb,
                          const HeadParams& hp) {
    if (hp.W_v.cols() != x.size())
        throw ShapeMismatch("attention_head: W_v " + shape_str(hp.W_v) + " vs x of length " +
                            std::to_string(x.size()));
    if (history.cols() == 0) return Vec::Zero(hp.W_v.rows());
    const Vec weights = normalized_scores(x, history, fb, KeyMap{hp.W_u});
    return hp.W_v * history * weights;
}

// Conditional intensity at the embedded query (Eq. 5); history columns are
// the model-embedded past events, shared by all heads.
inline double intensity(const ModelParams& mp, const std::vector<FourierFeatureBatch>& fbs,
                        double t, std::optional<int> mark, const Mat& history) {
    const Vec x = mp.embed(t, mark);
    Vec h(mp.config.heads * mp.config.value_dim);
    for (int k = 0; k < mp.config.heads; ++k)
        h.segment(k * mp.config.value_dim, mp.config.value_dim) =
            attention_head(x, history, fbs[static_cast<std::size_t>(k)], mp.heads[static_cast<std::size_t>(k)]);
    const double trigger = (mp.W.col(0).dot(h)) + mp.b(0, 0);
    return mp.mu(mark) + softplus(trigger);
}

// ---- batched evaluator ----------------------------------------------------

// Precomputes per-event feature and value columns so repeated intensity
// queries against prefixes or index subsets of the history stay cheap.
// push_event appends accepted events in time order.
class DappIntensity {
public:
    DappIntensity(const ModelParams& mp, const std::vector<FourierFeatureBatch>& fbs)
        : model_(&mp), features_(&fbs) {
        if (static_cast<int>(fbs.size()) != mp.config.heads)
            throw ShapeMismatch("DappIntensity: feature batches != heads");
        phi_.resize(fbs.size());
        values_.resize(fbs.size());
        const int D = fbs[0].count();
        for (std::size_t k = 0; k < fbs.size(); ++k) {
            phi_[k].resize(D, 0);
            values_[k].resize(mp.config.value_dim, 0);
        }
    }

    DappIntensity(const ModelParams& mp, const std::vector<FourierFeatureBatch>& fbs,
                  const EventSequence& seq)
        : DappIntensity(mp, fbs) {
        for (const Event& e : seq.events) push_event(e.t, e.mark);
    }

    void push_event(double t, std::optional<int> mark) {
        if (!times_.empty() && t <= times_.back())
            throw OutOfOrderEvent("push_event: time " + std::to_string(t) + " not increasing");
        const Vec x = model_->embed(t, mark);
        for (std::size_t k = 0; k < phi_.size(); ++k) {
            const Eigen::Index n = phi_[k].cols();
            phi_[k].conservativeResize(Eigen::NoChange, n + 1);
            phi_[k].col(n) = feature_map(x, (*features_)[k], KeyMap{model_->heads[k].W_u});
            values_[k].conservativeResize(Eigen::NoChange, n + 1);
            values_[k].col(n) = model_->heads[k].W_v * x;
        }
        times_.push_back(t);
    }

    void pop_event() {
        for (std::size_t k = 0; k < phi_.size(); ++k) {
            phi_[k].conservativeResize(Eigen::NoChange, phi_[k].cols() - 1);
            values_[k].conservativeResize(Eigen::NoChange, values_[k].cols() - 1);
        }
        times_.pop_back();
    }

    [[nodiscard]] int history_size() const { return static_cast<int>(times_.size()); }
    [[nodiscard]] const std::vector<double>& times() const { return times_; }

    // lambda(t, mark) with history = first `prefix` pushed events (-1: all).
    [[nodiscard]] double intensity(double t, std::optional<int> mark, int prefix = -1) const {
        const int n = prefix < 0 ? history_size() : prefix;
        double trigger = model_->b(0, 0);
        const Vec x = model_->embed(t, mark);
        for (std::size_t k = 0; k < phi_.size(); ++k)
            trigger += head_trigger(k, x, [&](auto&& fn) {
                for (int i = 0; i < n; ++i) fn(i);
            });
        return model_->mu(mark) + softplus(trigger);
    }

    // Same with an explicit per-head history index set (online attention).
    [[nodiscard]] double intensity_with_indices(double t, std::optional<int> mark,
                                                const std::vector<std::vector<int>>& idx) const {
        double trigger = model_->b(0, 0);
        const Vec x = model_->embed(t, mark);
        for (std::size_t k = 0; k < phi_.size(); ++k)
            trigger += head_trigger(k, x, [&](auto&& fn) {
                for (int i : idx[k]) fn(i);
            });
        return model_->mu(mark) + softplus(trigger);
    }

    // Raw clamped scores of a query against chosen history columns.
    [[nodiscard]] Vec scores(double t, std::optional<int> mark, const std::vector<int>& idx,
                             int head) const {
        const Vec x = model_->embed(t, mark);
        const Vec phi_x = feature_map(x, (*features_)[static_cast<std::size_t>(head)],
                                      KeyMap{model_->heads[static_cast<std::size_t>(head)].W_u});
        Vec s(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j)
            s[static_cast<Eigen::Index>(j)] =
                std::max(phi_x.dot(phi_[static_cast<std::size_t>(head)].col(idx[j])), kScoreFloor);
        return s;
    }

    [[nodiscard]] Vec normalized_scores(double t, std::optional<int> mark,
                                        const std::vector<int>& idx, int head) const {
        Vec s = scores(t, mark, idx, head);
        return s / s.sum();
    }

private:
    const ModelParams* model_;
    const std::vector<FourierFeatureBatch>* features_;
    std::vector<Mat> phi_;     // per head: D x n feature columns
    std::vector<Mat> values_;  // per head: p x n value columns
    std::vector<double> times_;

    template <typename ForEach>
    double head_trigger(std::size_t k, const Vec& x, ForEach&& for_each) const {
        const Vec phi_x = feature_map(x, (*features_)[k], KeyMap{model_->heads[k].W_u});
        double denom = 0.0;
        Vec acc = Vec::Zero(model_->config.value_dim);
        bool any = false;
        for_each([&](int i) {
            const double s = std::max(phi_x.dot(phi_[k].col(i)), kScoreFloor);
            denom += s;
            acc += s * values_[k].col(i);
            any = true;
        });
        if (!any) return 0.0;
        const int p = model_->config.value_dim;
        return model_->W.col(0).segment(static_cast<Eigen::Index>(k) * p, p).dot(acc / denom);
    }
};

// ---- online attention (bounded history) ------------------------------------

// Per-head bounded set of retained events with running average scores.
struct ActiveSetEntry {
    int index = 0;  // position in the arrival order
    double score_sum = 0.0;
    int score_count = 0;

    [[nodiscard]] double average() const {
        return score_count == 0 ? 0.0 : score_sum / score_count;
    }
};

struct ActiveSet {
    std::vector<ActiveSetEntry> entries;  // kept in arrival order

    [[nodiscard]] std::vector<int> indices() const {
        std::vector<int> out;
        out.reserve(entries.size());
        for (const ActiveSetEntry& e : entries) out.push_back(e.index);
        return out;
    }
};

// Event selection: insert the new arrival, extend every retained past event's
// score set with its normalized score against the arrival, then evict the
// past event with the smallest running average when more than eta events are
// retained. The arrival itself is exempt at its own step; ties evict the
// oldest.
inline void update_active_set(ActiveSet& set, int new_index, const Vec& normalized_past_scores,
                              int eta) {
    if (static_cast<Eigen::Index>(set.entries.size()) != normalized_past_scores.size())
        throw ShapeMismatch("update_active_set: score count != retained count");
    for (std::size_t j = 0; j < set.entries.size(); ++j) {
        set.entries[j].score_sum += normalized_past_scores[static_cast<Eigen::Index>(j)];
        set.entries[j].score_count += 1;
    }
    set.entries.push_back(ActiveSetEntry{new_index, 0.0, 0});
    if (static_cast<int>(set.entries.size()) > eta && set.entries.size() > 1) {
        std::size_t worst = 0;
        for (std::size_t j = 1; j + 1 < set.entries.size(); ++j)
            if (set.entries[j].average() < set.entries[worst].average()) worst = j;
        set.entries.erase(set.entries.begin() + static_cast<std::ptrdiff_t>(worst));
    }
}

// Streaming state over one sequence: per-head active sets maintained with the
// model's own normalized scores.
class OnlineAttention {
public:
    OnlineAttention(const ModelParams& mp, const std::vector<FourierFeatureBatch>& fbs, int eta)
        : eval_(mp, fbs), eta_(eta), sets_(static_cast<std::size_t>(mp.config.heads)) {}

    void absorb(double t, std::optional<int> mark) {
        const int idx = eval_.history_size();
        std::vector<Vec> scores(sets_.size());
        for (std::size_t k = 0; k < sets_.size(); ++k) {
            const std::vector<int> prev = sets_[k].indices();
            scores[k] = prev.empty() ? Vec(0)
                                     : eval_.normalized_scores(t, mark, prev, static_cast<int>(k));
        }
        eval_.push_event(t, mark);  // throws OutOfOrderEvent on misordered input
        for (std::size_t k = 0; k < sets_.size(); ++k)
            update_active_set(sets_[k], idx, scores[k], eta_);
    }

    [[nodiscard]] double intensity(double t, std::optional<int> mark) const {
        std::vector<std::vector<int>> idx;
        idx.reserve(sets_.size());
        for (const ActiveSet& s : sets_) idx.push_back(s.indices());
        return eval_.intensity_with_indices(t, mark, idx);
    }

    [[nodiscard]] const std::vector<ActiveSet>& sets() const { return sets_; }
    [[nodiscard]] const DappIntensity& evaluator() const { return eval_; }

    // Active-set snapshots after each arrival, for replay-style evaluation.
    [[nodiscard]] static std::vector<std::vector<std::vector<int>>> replay(
        const ModelParams& mp, const std::vector<FourierFeatureBatch>& fbs,
        const EventSequence& seq, int eta) {
        OnlineAttention online(mp, fbs, eta);
        std::vector<std::vector<std::vector<int>>> snapshots;
        snapshots.reserve(seq.size() + 1);
        std::vector<std::vector<int>> empty(static_cast<std::size_t>(mp.config.heads));
        snapshots.push_back(empty);
        for (const Event& e : seq.events) {
            online.absorb(e.t, e.mark);
            std::vector<std::vector<int>> snap;
            snap.reserve(online.sets_.size());
            for (const ActiveSet& s : online.sets_) snap.push_back(s.indices());
            snapshots.push_back(std::move(snap));
        }
        return snapshots;
    }

private:
    DappIntensity eval_;
    int eta_;
    std::vector<ActiveSet> sets_;
};

}  // namespace dapp
