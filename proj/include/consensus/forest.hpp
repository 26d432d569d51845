#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "consensus/error.hpp"
#include "consensus/parallel.hpp"
#include "consensus/rng.hpp"

namespace consensus {

inline constexpr std::int8_t kUnlabeled = -1;

/// Row-major feature storage. The toolkit's pipelines always use 181 columns
/// but the forest itself is dimension-agnostic.
struct FeatureMatrix {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> data;

    void resize(std::uint32_t r, std::uint32_t c) {
        rows = r;
        cols = c;
        data.assign(static_cast<std::size_t>(r) * c, 0.f);
    }
    float at(std::uint32_t r, std::uint32_t c) const {
        return data[static_cast<std::size_t>(r) * cols + c];
    }
    float* row(std::uint32_t r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const float* row(std::uint32_t r) const {
        return data.data() + static_cast<std::size_t>(r) * cols;
    }
};

/// Where a sample row came from: slice index, pixel index within the slice
/// image, and the expert whose label it carries (-1 for unlabeled rows).
struct RowTag {
    std::uint32_t slice = 0;
    std::uint32_t pixel = 0;
    std::int32_t expert = -1;
};

/// Training rows. labels holds {-1 unlabeled, 0, 1}. For probe forests the
/// optional expert_labels matrix carries one label column per expert.
struct SampleSet {
    FeatureMatrix features;
    std::vector<std::int8_t> labels;
    std::vector<RowTag> tags;
    std::vector<std::vector<std::int8_t>> expert_labels;

    std::uint32_t size() const { return features.rows; }
};

struct ForestConfig {
    std::uint32_t n_trees = 50;
    std::uint32_t max_depth = 20;
    std::uint32_t min_samples = 5;
    std::uint32_t candidate_features = 14; // ceil(sqrt(181))
    std::uint32_t thresholds_per_candidate = 10;
    double ssl_alpha = 1.0;
    double bagging_fraction = 1.0; // sampled with replacement

    void validate() const {
        require(n_trees >= 1 && max_depth >= 1 && min_samples >= 1 &&
                    candidate_features >= 1 && thresholds_per_candidate >= 1,
                "invalid-argument", "forest counts must be >= 1");
        require(ssl_alpha >= 0.0, "invalid-argument", "ssl alpha must be >= 0");
        require(bagging_fraction > 0.0 && bagging_fraction <= 1.0, "invalid-argument",
                "bagging fraction must be in (0,1]");
    }
};

/// Flat-array tree node. feature < 0 marks a leaf. n_samples counts the
/// training rows that reached the node; hist is the labeled class histogram
/// stored at leaves. expert_gains (per split node, probe forests only) hold
/// the mean per-expert information-gain estimates over the node's candidate
/// set.
struct TreeNode {
    std::int32_t feature = -1;
    float threshold = 0.f;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::uint32_t n_samples = 0;
    std::array<std::uint64_t, 2> hist = {0, 0};

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;                   // nodes[0] is the root
    std::vector<std::vector<double>> expert_gains; // parallel to nodes; may be empty
};

struct Forest {
    std::vector<Tree> trees;
    ForestConfig config;
    std::uint64_t seed = 0;
};

struct TrainStats {
    double oob_accuracy = 0.0;
    bool ssl_fell_back_supervised = false;
};

// ---------------------------------------------------------------------------
// Split objectives
// ---------------------------------------------------------------------------

struct LabelCounts {
    std::uint64_t n0 = 0;
    std::uint64_t n1 = 0;
    std::uint64_t total() const { return n0 + n1; }
};

inline double binary_entropy_bits(std::uint64_t n0, std::uint64_t n1) {
    const std::uint64_t n = n0 + n1;
    if (n == 0 || n0 == 0 || n1 == 0) return 0.0;
    const double p0 = static_cast<double>(n0) / static_cast<double>(n);
    const double p1 = static_cast<double>(n1) / static_cast<double>(n);
    return -p0 * std::log2(p0) - p1 * std::log2(p1);
}

/// Shannon information gain (base 2) of splitting `parent` into `left` and
/// `right`; in [0,1] for binary labels.
inline double info_gain(const LabelCounts& parent, const LabelCounts& left,
                        const LabelCounts& right) {
    require(parent.total() > 0, "invalid-argument", "info_gain on empty parent");
    require(left.n0 + right.n0 == parent.n0 && left.n1 + right.n1 == parent.n1,
            "invalid-argument", "children do not partition the parent");
    const double n = static_cast<double>(parent.total());
    double gain = binary_entropy_bits(parent.n0, parent.n1);
    gain -= (static_cast<double>(left.total()) / n) * binary_entropy_bits(left.n0, left.n1);
    gain -= (static_cast<double>(right.total()) / n) * binary_entropy_bits(right.n0, right.n1);
    return gain < 0.0 ? 0.0 : gain;
}

inline constexpr double kCovarianceRidge = 1e-6;

namespace detail {

// log|cov + ridge*I| over the given subspace; rows with fewer than dim+1
// entries fall back to the ridge floor.
inline double log_det_covariance(const FeatureMatrix& f, std::span<const std::uint32_t> rows,
                                 std::span<const int> subspace) {
    const int d = static_cast<int>(subspace.size());
    if (rows.size() < static_cast<std::size_t>(d) + 1)
        return d * std::log(kCovarianceRidge);

    std::vector<double> mean(d, 0.0);
    for (const auto r : rows)
        for (int j = 0; j < d; ++j) mean[j] += f.at(r, static_cast<std::uint32_t>(subspace[j]));
    for (auto& m : mean) m /= static_cast<double>(rows.size());

    std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> centered(d);
    for (const auto r : rows) {
        for (int j = 0; j < d; ++j)
            centered[j] = f.at(r, static_cast<std::uint32_t>(subspace[j])) - mean[j];
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) cov[i * d + j] += centered[i] * centered[j];
    }
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            cov[i * d + j] /= static_cast<double>(rows.size());
            cov[j * d + i] = cov[i * d + j];
        }
    for (int i = 0; i < d; ++i) cov[i * d + i] += kCovarianceRidge;

    // Cholesky log-determinant; the ridge keeps the matrix positive definite.
    double logdet = 0.0;
    std::vector<double> chol(cov);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = chol[i * d + j];
            for (int k = 0; k < j; ++k) s -= chol[i * d + k] * chol[j * d + k];
            if (i == j) {
                s = std::max(s, kCovarianceRidge * 1e-3);
                chol[i * d + i] = std::sqrt(s);
                logdet += 2.0 * std::log(chol[i * d + i]);
            } else {
                chol[i * d + j] = s / chol[j * d + j];
            }
        }
    }
    return logdet;
}

} // namespace detail

/// Differential-entropy gain of a split, measured by log-determinants of the
/// node covariances over the given feature subspace (ridge 1e-6).
inline double unlabeled_gain(const FeatureMatrix& features,
                             std::span<const std::uint32_t> parent,
                             std::span<const std::uint32_t> left,
                             std::span<const std::uint32_t> right,
                             std::span<const int> subspace) {
    require(!subspace.empty(), "invalid-argument", "empty feature subspace");
    require(parent.size() >= 2, "invalid-argument", "unlabeled_gain needs >= 2 parent rows");
    require(left.size() + right.size() == parent.size(), "invalid-argument",
            "children do not partition the parent");
    const double n = static_cast<double>(parent.size());
    double gain = detail::log_det_covariance(features, parent, subspace);
    if (!left.empty())
        gain -= (static_cast<double>(left.size()) / n) *
                detail::log_det_covariance(features, left, subspace);
    if (!right.empty())
        gain -= (static_cast<double>(right.size()) / n) *
                detail::log_det_covariance(features, right, subspace);
    return gain;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

/// Interpolated quantile thresholds of the (sorted) candidate-feature values:
/// quantiles k/(T+1), k = 1..T. Scale-free and deterministic.
inline void quantile_thresholds(std::span<const float> sorted_values, std::uint32_t count,
                                std::vector<float>& out) {
    out.clear();
    const std::size_t n = sorted_values.size();
    for (std::uint32_t k = 1; k <= count; ++k) {
        const double pos =
            static_cast<double>(k) * static_cast<double>(n - 1) / (count + 1.0);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, n - 1);
        const double frac = pos - static_cast<double>(lo);
        out.push_back(static_cast<float>(sorted_values[lo] +
                                         (sorted_values[hi] - sorted_values[lo]) * frac));
    }
}

/// k distinct feature indices, ascending. Consumes exactly k bounded draws.
inline void draw_features(Rng& rng, std::uint32_t dim, std::uint32_t k,
                          std::vector<int>& scratch, std::vector<int>& out) {
    k = std::min(k, dim);
    scratch.resize(dim);
    std::iota(scratch.begin(), scratch.end(), 0);
    for (std::uint32_t i = 0; i < k; ++i) {
        const std::uint64_t j = i + rng.bounded(dim - i);
        std::swap(scratch[i], scratch[j]);
    }
    out.assign(scratch.begin(), scratch.begin() + k);
    std::sort(out.begin(), out.end());
}

enum class TrainMode { kSupervised, kSsl, kProbe };

struct TreeBuilder {
    const SampleSet& samples;
    const ForestConfig& cfg;
    TrainMode mode;
    std::uint64_t tree_seed;
    Tree tree;

    // scratch
    std::vector<std::uint32_t> order;     // row indices sorted by candidate value
    std::vector<float> values;            // per-row candidate values
    std::vector<float> sorted_values;
    std::vector<float> thresholds;
    std::vector<int> feature_scratch;
    std::vector<int> candidate_features;

    TreeBuilder(const SampleSet& s, const ForestConfig& c, TrainMode m, std::uint64_t ts)
        : samples(s), cfg(c), mode(m), tree_seed(ts) {}

    std::uint32_t expert_count() const {
        return static_cast<std::uint32_t>(samples.expert_labels.size());
    }

    void build(std::vector<std::uint32_t>& rows) {
        tree.nodes.clear();
        tree.expert_gains.clear();
        build_node(rows, 0, rows.size(), 0, 1, LabelCounts{});
    }

    LabelCounts count_labels(std::span<const std::uint32_t> rows) const {
        LabelCounts c;
        for (const auto r : rows) {
            const std::int8_t l = samples.labels[r];
            if (l == 0)
                ++c.n0;
            else if (l == 1)
                ++c.n1;
        }
        return c;
    }

    // Buffers for per-threshold split statistics.
    struct SplitEval {
        double best_score = 0.0;
        int best_feature = -1;
        float best_threshold = 0.f;
        bool found = false;
    };

    std::uint32_t make_leaf(std::uint32_t n_samples, const LabelCounts& own,
                            const LabelCounts& fallback) {
        TreeNode node;
        node.n_samples = n_samples;
        const LabelCounts& h = own.total() > 0 ? own : fallback;
        node.hist = {h.n0, h.n1};
        tree.nodes.push_back(node);
        tree.expert_gains.emplace_back();
        return static_cast<std::uint32_t>(tree.nodes.size() - 1);
    }

    // Builds the subtree over rows[begin,end); returns its root node index.
    std::uint32_t build_node(std::vector<std::uint32_t>& rows, std::size_t begin,
                             std::size_t end, std::uint32_t depth, std::uint64_t path_id,
                             const LabelCounts& parent_hist) {
        const std::span<const std::uint32_t> node_rows(rows.data() + begin, end - begin);
        const std::uint32_t n = static_cast<std::uint32_t>(node_rows.size());
        const LabelCounts labeled = count_labels(node_rows);

        const bool at_depth = depth >= cfg.max_depth;
        const bool too_small = n < cfg.min_samples;
        const bool pure_supervised =
            mode == TrainMode::kSupervised && (labeled.n0 == 0 || labeled.n1 == 0);
        if (at_depth || too_small || n < 2 || pure_supervised)
            return make_leaf(n, labeled, parent_hist);

        Rng rng(derive_seed(tree_seed, path_id));
        draw_features(rng, samples.features.cols, cfg.candidate_features, feature_scratch,
                      candidate_features);

        SplitEval best;
        std::vector<double> node_expert_gain;
        std::uint64_t candidate_count = 0;
        if (mode == TrainMode::kProbe) node_expert_gain.assign(expert_count(), 0.0);

        for (const int feat : candidate_features)
            evaluate_feature(node_rows, labeled, feat, best, node_expert_gain,
                             candidate_count);

        if (!best.found || best.best_score <= 0.0)
            return make_leaf(n, labeled, parent_hist);

        // Emit the split node, then recurse. Children are appended after the
        // parent so indices stay valid.
        TreeNode node;
        node.feature = best.best_feature;
        node.threshold = best.best_threshold;
        node.n_samples = n;
        tree.nodes.push_back(node);
        tree.expert_gains.emplace_back();
        const std::uint32_t index = static_cast<std::uint32_t>(tree.nodes.size() - 1);
        if (mode == TrainMode::kProbe && candidate_count > 0) {
            for (auto& g : node_expert_gain) g /= static_cast<double>(candidate_count);
            tree.expert_gains[index] = std::move(node_expert_gain);
        }

        const float t = best.best_threshold;
        const std::uint32_t feat = static_cast<std::uint32_t>(best.best_feature);
        const auto mid_it = std::partition(
            rows.begin() + static_cast<std::ptrdiff_t>(begin),
            rows.begin() + static_cast<std::ptrdiff_t>(end),
            [&](std::uint32_t r) { return samples.features.at(r, feat) < t; });
        const std::size_t mid = static_cast<std::size_t>(mid_it - rows.begin());

        const LabelCounts& fallback = labeled.total() > 0 ? labeled : parent_hist;
        const std::uint32_t left = build_node(rows, begin, mid, depth + 1, path_id * 2, fallback);
        const std::uint32_t right =
            build_node(rows, mid, end, depth + 1, path_id * 2 + 1, fallback);
        tree.nodes[index].left = left;
        tree.nodes[index].right = right;
        return index;
    }

    void evaluate_feature(std::span<const std::uint32_t> node_rows, const LabelCounts& labeled,
                          int feat, SplitEval& best, std::vector<double>& expert_gain_acc,
                          std::uint64_t& candidate_count) {
        const std::uint32_t n = static_cast<std::uint32_t>(node_rows.size());
        values.resize(n);
        order.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            values[i] = samples.features.at(node_rows[i], static_cast<std::uint32_t>(feat));
            order[i] = i;
        }
        std::sort(order.begin(), order.end(),
                  [&](std::uint32_t a, std::uint32_t b) { return values[a] < values[b]; });
        sorted_values.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) sorted_values[i] = values[order[i]];
        quantile_thresholds(sorted_values, cfg.thresholds_per_candidate, thresholds);

        // Prefix statistics in sorted order.
        const std::uint32_t experts = expert_count();
        prefix_label0.assign(n + 1, 0);
        prefix_label1.assign(n + 1, 0);
        if (mode == TrainMode::kSsl) {
            prefix_sum.assign(n + 1, 0.0);
            prefix_sumsq.assign(n + 1, 0.0);
        }
        if (mode == TrainMode::kProbe) {
            prefix_expert0.assign(static_cast<std::size_t>(experts) * (n + 1), 0);
            prefix_expert1.assign(static_cast<std::size_t>(experts) * (n + 1), 0);
        }
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint32_t r = node_rows[order[i]];
            const std::int8_t l = samples.labels[r];
            prefix_label0[i + 1] = prefix_label0[i] + (l == 0 ? 1 : 0);
            prefix_label1[i + 1] = prefix_label1[i] + (l == 1 ? 1 : 0);
            if (mode == TrainMode::kSsl) {
                const double v = sorted_values[i];
                prefix_sum[i + 1] = prefix_sum[i] + v;
                prefix_sumsq[i + 1] = prefix_sumsq[i] + v * v;
            }
            if (mode == TrainMode::kProbe) {
                for (std::uint32_t e = 0; e < experts; ++e) {
                    const std::size_t base = static_cast<std::size_t>(e) * (n + 1);
                    const std::int8_t el = samples.expert_labels[e][r];
                    prefix_expert0[base + i + 1] = prefix_expert0[base + i] + (el == 0 ? 1 : 0);
                    prefix_expert1[base + i + 1] = prefix_expert1[base + i] + (el == 1 ? 1 : 0);
                }
            }
        }

        for (std::uint32_t k = 0; k < thresholds.size(); ++k) {
            const float t = thresholds[k];
            const std::uint32_t cut = static_cast<std::uint32_t>(
                std::lower_bound(sorted_values.begin(), sorted_values.end(), t) -
                sorted_values.begin());
            double score = 0.0;
            if (mode == TrainMode::kProbe) {
                // Mean per-expert gain drives the split; per-expert gains are
                // accumulated for the self-consistency estimates either way.
                ++candidate_count;
                double mean_gain = 0.0;
                for (std::uint32_t e = 0; e < experts; ++e) {
                    const std::size_t base = static_cast<std::size_t>(e) * (n + 1);
                    const LabelCounts p{prefix_expert0[base + n], prefix_expert1[base + n]};
                    const LabelCounts l{prefix_expert0[base + cut], prefix_expert1[base + cut]};
                    const LabelCounts r{p.n0 - l.n0, p.n1 - l.n1};
                    const double g = p.total() > 0 ? info_gain(p, l, r) : 0.0;
                    expert_gain_acc[e] += g;
                    mean_gain += g;
                }
                score = experts > 0 ? mean_gain / experts : 0.0;
            }
            // Degenerate candidates (everything on one side) still count
            // toward the probe estimates but cannot be selected as splits.
            if (cut == 0 || cut == n) continue;
            switch (mode) {
            case TrainMode::kSupervised: {
                const LabelCounts l{prefix_label0[cut], prefix_label1[cut]};
                const LabelCounts r{labeled.n0 - l.n0, labeled.n1 - l.n1};
                score = info_gain(labeled, l, r);
                break;
            }
            case TrainMode::kSsl: {
                score = ssl_objective(n, cut, labeled);
                break;
            }
            case TrainMode::kProbe:
                break;
            }
            // Strictly-greater wins; ties keep the first candidate, which is
            // the lowest (feature, threshold index) by iteration order.
            if (score > 0.0 && (!best.found || score > best.best_score)) {
                best.best_score = score;
                best.best_feature = feat;
                best.best_threshold = t;
                best.found = true;
            }
        }
    }

    double ssl_objective(std::uint32_t n, std::uint32_t cut, const LabelCounts& labeled) const {
        auto variance = [](double sum, double sumsq, std::uint32_t m) {
            const double mean = sum / m;
            return std::max(0.0, sumsq / m - mean * mean);
        };
        auto log_lambda = [&](std::uint32_t lo, std::uint32_t hi) {
            const std::uint32_t m = hi - lo;
            if (m < 2) return std::log(kCovarianceRidge);
            const double var =
                variance(prefix_sum[hi] - prefix_sum[lo], prefix_sumsq[hi] - prefix_sumsq[lo], m);
            return std::log(var + kCovarianceRidge);
        };
        const double wl = static_cast<double>(cut) / n;
        const double wr = static_cast<double>(n - cut) / n;
        double score = log_lambda(0, n) - wl * log_lambda(0, cut) - wr * log_lambda(cut, n);

        if (labeled.total() > 0) {
            const LabelCounts l{prefix_label0[cut], prefix_label1[cut]};
            const LabelCounts r{labeled.n0 - l.n0, labeled.n1 - l.n1};
            score += cfg.ssl_alpha * info_gain(labeled, l, r);
        }
        return score;
    }

    std::vector<std::uint32_t> prefix_label0, prefix_label1;
    std::vector<std::uint32_t> prefix_expert0, prefix_expert1;
    std::vector<double> prefix_sum, prefix_sumsq;
};

inline std::vector<std::uint32_t> draw_bag(Rng& rng, std::span<const std::uint32_t> rows,
                                           double fraction) {
    const std::size_t n = rows.size();
    const std::size_t bag_size =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * n)));
    std::vector<std::uint32_t> bag(bag_size);
    for (std::size_t i = 0; i < bag_size; ++i) bag[i] = rows[rng.bounded(n)];
    return bag;
}

inline Forest train_forest(const SampleSet& samples, const ForestConfig& cfg,
                           std::uint64_t seed, TrainMode mode,
                           std::span<const std::uint32_t> rows, int threads) {
    Forest forest;
    forest.config = cfg;
    forest.seed = seed;
    forest.trees.resize(cfg.n_trees);
    parallel_for(cfg.n_trees, threads, [&](std::size_t t) {
        const std::uint64_t tree_seed = seed + t;
        Rng bag_rng(derive_seed(tree_seed, 0));
        std::vector<std::uint32_t> bag = draw_bag(bag_rng, rows, cfg.bagging_fraction);
        TreeBuilder builder(samples, cfg, mode, tree_seed);
        builder.build(bag);
        forest.trees[t] = std::move(builder.tree);
    });
    return forest;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

template <class Scalar>
inline const TreeNode& descend(const Tree& tree, const Scalar* features) {
    const TreeNode* node = &tree.nodes[0];
    while (!node->is_leaf()) {
        const double v = static_cast<double>(features[node->feature]);
        node = v < static_cast<double>(node->threshold) ? &tree.nodes[node->left]
                                                        : &tree.nodes[node->right];
    }
    return *node;
}

/// Class posterior (p0, p1): the average of per-tree normalized leaf
/// histograms; always sums to 1.
template <class Scalar>
inline std::array<double, 2> predict(const Forest& forest, const Scalar* features) {
    double p1 = 0.0;
    for (const auto& tree : forest.trees) {
        const TreeNode& leaf = descend(tree, features);
        const double total = static_cast<double>(leaf.hist[0] + leaf.hist[1]);
        p1 += total > 0 ? static_cast<double>(leaf.hist[1]) / total : 0.5;
    }
    p1 /= static_cast<double>(forest.trees.size());
    return {1.0 - p1, p1};
}

template <class Scalar>
inline std::array<double, 2> predict(const Forest& forest, std::span<const Scalar> features) {
    return predict(forest, features.data());
}

// ---------------------------------------------------------------------------
// Public training entry points
// ---------------------------------------------------------------------------

/// Trains a supervised forest on the labeled rows of `samples`. Deterministic
/// for a fixed (samples, config, seed); trees use derived per-tree seeds and
/// may train in parallel. When `stats` is given, out-of-bag accuracy is
/// computed by replaying each tree's bag draw.
inline Forest train_supervised(const SampleSet& samples, const ForestConfig& cfg,
                               std::uint64_t seed, TrainStats* stats = nullptr,
                               int threads = 0) {
    cfg.validate();
    std::vector<std::uint32_t> rows;
    LabelCounts counts;
    for (std::uint32_t i = 0; i < samples.size(); ++i) {
        if (samples.labels[i] == kUnlabeled) continue;
        rows.push_back(i);
        if (samples.labels[i] == 0)
            ++counts.n0;
        else
            ++counts.n1;
    }
    require(rows.size() >= cfg.min_samples, "degenerate-labels",
            "fewer labeled rows than min_samples");
    require(counts.n0 > 0 && counts.n1 > 0, "degenerate-labels",
            "supervised training requires both classes");

    Forest forest =
        detail::train_forest(samples, cfg, seed, detail::TrainMode::kSupervised, rows, threads);

    if (stats) {
        // Replay the bag draws (first draws of each tree's bagging stream).
        std::vector<double> vote(samples.size(), 0.0);
        std::vector<std::uint32_t> n_votes(samples.size(), 0);
        std::vector<std::uint8_t> in_bag(samples.size());
        for (std::uint32_t t = 0; t < cfg.n_trees; ++t) {
            Rng bag_rng(derive_seed(seed + t, 0));
            std::fill(in_bag.begin(), in_bag.end(), 0);
            for (const auto r : detail::draw_bag(bag_rng, rows, cfg.bagging_fraction))
                in_bag[r] = 1;
            for (const auto r : rows) {
                if (in_bag[r]) continue;
                const TreeNode& leaf = descend(forest.trees[t], samples.features.row(r));
                const double total = static_cast<double>(leaf.hist[0] + leaf.hist[1]);
                vote[r] += total > 0 ? static_cast<double>(leaf.hist[1]) / total : 0.5;
                ++n_votes[r];
            }
        }
        std::uint64_t correct = 0, counted = 0;
        for (const auto r : rows) {
            if (n_votes[r] == 0) continue;
            const int pred = vote[r] / n_votes[r] > 0.5 ? 1 : 0;
            correct += pred == samples.labels[r];
            ++counted;
        }
        stats->oob_accuracy =
            counted > 0 ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;
    }
    return forest;
}

/// Single-shot semi-supervised training: node objective is the differential-
/// entropy gain over all rows (on the candidate feature) plus alpha times the
/// labeled information gain. Falls back to supervised training when there are
/// no unlabeled rows.
inline Forest train_ssl(const SampleSet& samples, const ForestConfig& cfg, std::uint64_t seed,
                        TrainStats* stats = nullptr, int threads = 0) {
    cfg.validate();
    LabelCounts counts;
    bool any_unlabeled = false;
    for (std::uint32_t i = 0; i < samples.size(); ++i) {
        if (samples.labels[i] == kUnlabeled)
            any_unlabeled = true;
        else if (samples.labels[i] == 0)
            ++counts.n0;
        else
            ++counts.n1;
    }
    require(counts.n0 > 0 && counts.n1 > 0, "degenerate-labels",
            "ssl training requires at least one labeled row of each class");
    if (!any_unlabeled) {
        Forest forest = train_supervised(samples, cfg, seed, stats, threads);
        if (stats) stats->ssl_fell_back_supervised = true;
        return forest;
    }
    std::vector<std::uint32_t> rows(samples.size());
    std::iota(rows.begin(), rows.end(), 0);
    return detail::train_forest(samples, cfg, seed, detail::TrainMode::kSsl, rows, threads);
}

// ---------------------------------------------------------------------------
// Serialization (versioned JSON)
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json node_to_json(const Tree& tree, std::uint32_t index) {
    const TreeNode& node = tree.nodes[index];
    nlohmann::json j;
    j["n"] = node.n_samples;
    if (node.is_leaf()) {
        j["hist"] = {node.hist[0], node.hist[1]};
        return j;
    }
    j["feature"] = node.feature;
    j["threshold"] = node.threshold;
    if (!tree.expert_gains[index].empty()) j["expert_gains"] = tree.expert_gains[index];
    j["left"] = node_to_json(tree, node.left);
    j["right"] = node_to_json(tree, node.right);
    return j;
}

inline std::uint32_t node_from_json(const nlohmann::json& j, Tree& tree) {
    TreeNode node;
    node.n_samples = j.at("n").get<std::uint32_t>();
    if (!j.contains("feature")) {
        const auto h = j.at("hist");
        node.hist = {h.at(0).get<std::uint64_t>(), h.at(1).get<std::uint64_t>()};
        tree.nodes.push_back(node);
        tree.expert_gains.emplace_back();
        return static_cast<std::uint32_t>(tree.nodes.size() - 1);
    }
    node.feature = j.at("feature").get<std::int32_t>();
    node.threshold = j.at("threshold").get<float>();
    tree.nodes.push_back(node);
    tree.expert_gains.emplace_back();
    const std::uint32_t index = static_cast<std::uint32_t>(tree.nodes.size() - 1);
    if (j.contains("expert_gains"))
        tree.expert_gains[index] = j.at("expert_gains").get<std::vector<double>>();
    const std::uint32_t left = node_from_json(j.at("left"), tree);
    const std::uint32_t right = node_from_json(j.at("right"), tree);
    tree.nodes[index].left = left;
    tree.nodes[index].right = right;
    return index;
}

} // namespace detail

inline nlohmann::json forest_to_json(const Forest& forest) {
    nlohmann::json j;
    j["version"] = 1;
    j["seed"] = forest.seed;
    j["config"] = {{"n_trees", forest.config.n_trees},
                   {"max_depth", forest.config.max_depth},
                   {"min_samples", forest.config.min_samples},
                   {"candidate_features", forest.config.candidate_features},
                   {"thresholds_per_candidate", forest.config.thresholds_per_candidate},
                   {"ssl_alpha", forest.config.ssl_alpha},
                   {"bagging_fraction", forest.config.bagging_fraction}};
    j["trees"] = nlohmann::json::array();
    for (const auto& tree : forest.trees) j["trees"].push_back(detail::node_to_json(tree, 0));
    return j;
}

inline Forest forest_from_json(const nlohmann::json& j) {
    require(j.value("version", 0) == 1, "bad-forest-file", "unsupported forest version");
    Forest forest;
    try {
        forest.seed = j.at("seed").get<std::uint64_t>();
        const auto& c = j.at("config");
        forest.config.n_trees = c.at("n_trees").get<std::uint32_t>();
        forest.config.max_depth = c.at("max_depth").get<std::uint32_t>();
        forest.config.min_samples = c.at("min_samples").get<std::uint32_t>();
        forest.config.candidate_features = c.at("candidate_features").get<std::uint32_t>();
        forest.config.thresholds_per_candidate =
            c.at("thresholds_per_candidate").get<std::uint32_t>();
        forest.config.ssl_alpha = c.at("ssl_alpha").get<double>();
        forest.config.bagging_fraction = c.at("bagging_fraction").get<double>();
        for (const auto& tj : j.at("trees")) {
            Tree tree;
            detail::node_from_json(tj, tree); // parent pushed first, root at 0
            forest.trees.push_back(std::move(tree));
        }
    } catch (const nlohmann::json::exception& ex) {
        fail("bad-forest-file", ex.what());
    }
    return forest;
}

inline std::string forest_to_string(const Forest& forest) { return forest_to_json(forest).dump(); }

} // namespace consensus
