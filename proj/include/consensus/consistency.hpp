#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "consensus/dataset.hpp"
#include "consensus/features.hpp"
#include "consensus/forest.hpp"
#include "consensus/sampling.hpp"

namespace consensus {

/// Per-expert self-consistency scores derived from a probe forest.
struct ScReport {
    std::vector<double> sc;                      // one score per expert, in [0,1]
    std::vector<std::vector<double>> per_tree_q; // [expert][tree] mean path performance
    std::uint32_t n_trees = 0;
    std::uint64_t n_nodes = 0;                   // split nodes across all trees
    std::uint64_t seed = 0;
    std::vector<std::uint8_t> single_class;      // experts scored 0 with a warning
};

/// Mean information gain of expert r's labels over an explicit candidate set
/// (feature index, threshold); candidates that separate nothing contribute 0.
inline double node_gain_estimate(const SampleSet& samples,
                                 std::span<const std::uint32_t> rows, int expert,
                                 std::span<const std::pair<int, float>> candidates) {
    require(!candidates.empty(), "invalid-argument", "need at least one candidate");
    require(rows.size() >= 2, "invalid-argument", "need at least two samples");
    const auto& labels = samples.expert_labels.at(static_cast<std::size_t>(expert));
    LabelCounts parent;
    for (const auto r : rows) {
        if (labels[r] == 0)
            ++parent.n0;
        else if (labels[r] == 1)
            ++parent.n1;
    }
    require(parent.total() >= 2, "invalid-argument", "expert has fewer than two labels here");

    double acc = 0.0;
    for (const auto& [feature, threshold] : candidates) {
        LabelCounts left;
        for (const auto r : rows) {
            if (samples.features.at(r, static_cast<std::uint32_t>(feature)) >= threshold)
                continue;
            if (labels[r] == 0)
                ++left.n0;
            else if (labels[r] == 1)
                ++left.n1;
        }
        const LabelCounts right{parent.n0 - left.n0, parent.n1 - left.n1};
        acc += info_gain(parent, left, right);
    }
    return acc / static_cast<double>(candidates.size());
}

inline std::vector<std::int32_t> tree_parents(const Tree& tree) {
    std::vector<std::int32_t> parents(tree.nodes.size(), -1);
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        if (tree.nodes[i].is_leaf()) continue;
        parents[tree.nodes[i].left] = static_cast<std::int32_t>(i);
        parents[tree.nodes[i].right] = static_cast<std::int32_t>(i);
    }
    return parents;
}

/// Path-weighted performance level q of an expert at a split node: the
/// sample-count weighted mean of the stored gain estimates along the
/// root-to-node chain.
inline double path_performance(const Tree& tree, std::uint32_t node_index, int expert) {
    const std::vector<std::int32_t> parents = tree_parents(tree);
    double weighted = 0.0, weight = 0.0;
    std::int32_t v = static_cast<std::int32_t>(node_index);
    while (v >= 0) {
        const auto& gains = tree.expert_gains[static_cast<std::size_t>(v)];
        require(!gains.empty(), "invalid-argument",
                "node without stored gain estimates on the path");
        const double n = static_cast<double>(tree.nodes[static_cast<std::size_t>(v)].n_samples);
        weighted += n * gains.at(static_cast<std::size_t>(expert));
        weight += n;
        v = parents[static_cast<std::size_t>(v)];
    }
    return weighted / weight;
}

namespace detail {

// Accumulates, for one tree, the mean q per expert over its split nodes.
struct QAccumulator {
    const Tree& tree;
    std::uint32_t experts;
    std::vector<double> sum;
    std::uint64_t split_nodes = 0;

    QAccumulator(const Tree& t, std::uint32_t e) : tree(t), experts(e), sum(e, 0.0) {}

    void walk(std::uint32_t node, std::vector<double> weighted, double weight) {
        const TreeNode& n = tree.nodes[node];
        if (n.is_leaf()) return;
        const auto& gains = tree.expert_gains[node];
        const double w = static_cast<double>(n.n_samples);
        for (std::uint32_t e = 0; e < experts; ++e) {
            weighted[e] += w * gains[e];
            sum[e] += weighted[e] / (weight + w);
        }
        ++split_nodes;
        walk(n.left, weighted, weight + w);
        walk(n.right, weighted, weight + w);
    }
};

} // namespace detail

/// SC score per expert: a probe forest is grown where splits maximize the
/// mean per-expert information gain; every split node records each expert's
/// mean gain over the node's candidate set, and SC is the mean of the
/// path-weighted estimates over split nodes (per tree, then across trees).
/// Experts with single-class labels over the sampled ROI are scored 0.
inline ScReport self_consistency(const AnnotationSet& ann,
                                 const std::vector<FeatureContext>& contexts,
                                 const std::vector<Roi>& rois, const ForestConfig& cfg,
                                 std::uint64_t seed, const SampleBudget& budget = {},
                                 const std::vector<std::uint32_t>& slice_subset = {},
                                 int threads = 0) {
    cfg.validate();
    require(ann.expert_count() >= 2, "invalid-argument",
            "self-consistency needs at least two experts");
    const SampleSet samples =
        build_probe_samples(ann, contexts, rois, budget, seed, slice_subset, threads);
    require(samples.size() >= 2, "invalid-argument", "not enough probe samples");
    const std::uint32_t experts = static_cast<std::uint32_t>(ann.experts.size());

    ScReport report;
    report.seed = seed;
    report.n_trees = cfg.n_trees;
    report.single_class.assign(experts, 0);
    for (std::uint32_t e = 0; e < experts; ++e) {
        LabelCounts c;
        for (const auto l : samples.expert_labels[e]) {
            if (l == 0)
                ++c.n0;
            else if (l == 1)
                ++c.n1;
        }
        if (c.n0 == 0 || c.n1 == 0) report.single_class[e] = 1;
    }

    std::vector<std::uint32_t> rows(samples.size());
    std::iota(rows.begin(), rows.end(), 0);
    const Forest probe =
        detail::train_forest(samples, cfg, seed, detail::TrainMode::kProbe, rows, threads);

    report.per_tree_q.assign(experts, std::vector<double>(cfg.n_trees, 0.0));
    std::vector<double> total(experts, 0.0);
    std::uint32_t trees_with_splits = 0;
    for (std::uint32_t t = 0; t < cfg.n_trees; ++t) {
        detail::QAccumulator acc(probe.trees[t], experts);
        acc.walk(0, std::vector<double>(experts, 0.0), 0.0);
        report.n_nodes += acc.split_nodes;
        if (acc.split_nodes == 0) continue;
        ++trees_with_splits;
        for (std::uint32_t e = 0; e < experts; ++e) {
            const double mean_q = acc.sum[e] / static_cast<double>(acc.split_nodes);
            report.per_tree_q[e][t] = mean_q;
            total[e] += mean_q;
        }
    }
    report.sc.assign(experts, 0.0);
    for (std::uint32_t e = 0; e < experts; ++e) {
        if (report.single_class[e]) continue;
        if (trees_with_splits > 0) report.sc[e] = total[e] / trees_with_splits;
    }
    return report;
}

inline nlohmann::json sc_report_to_json(const ScReport& report,
                                        const std::vector<std::string>& expert_ids) {
    nlohmann::json j;
    j["experts"] = nlohmann::json::array();
    for (std::size_t e = 0; e < report.sc.size(); ++e)
        j["experts"].push_back({{"id", expert_ids.at(e)}, {"sc", report.sc[e]}});
    j["n_nodes"] = report.n_nodes;
    j["n_trees"] = report.n_trees;
    j["seed"] = report.seed;
    return j;
}

} // namespace consensus
