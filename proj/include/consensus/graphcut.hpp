#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "consensus/error.hpp"

namespace consensus {

/// Result of an exact s-t min-cut. labels[v] is 0 when v ends on the source
/// side, 1 otherwise; flow equals the min-cut capacity.
struct CutResult {
    std::vector<std::uint8_t> labels;
    double flow = 0.0;
};

/// s-t flow network over implicit source/sink terminals, solved with a
/// Boykov-Kolmogorov style augmenting-path search (grow / augment / adopt
/// with search-tree reuse). The final labeling is recomputed by a BFS over
/// the residual graph so that the returned cut is the canonical one:
/// exactly the nodes unreachable from the source take label 1.
class FlowGraph {
public:
    explicit FlowGraph(int n_nodes) : nodes_(static_cast<std::size_t>(n_nodes)) {
        require(n_nodes >= 0, "invalid-argument", "negative node count");
    }

    int node_count() const { return static_cast<int>(nodes_.size()); }

    /// Accumulates terminal capacities for a node. The common part of the two
    /// capacities is settled immediately and only the difference is kept.
    void add_terminal_capacities(int v, double to_source, double to_sink) {
        check_node(v);
        require(to_source >= 0.0 && to_sink >= 0.0 && std::isfinite(to_source) &&
                    std::isfinite(to_sink),
                "invalid-argument", "terminal capacities must be finite and >= 0");
        const double delta = nodes_[v].tr_cap;
        if (delta > 0)
            to_source += delta;
        else
            to_sink -= delta;
        settled_ += to_source < to_sink ? to_source : to_sink;
        nodes_[v].tr_cap = to_source - to_sink;
    }

    void add_edge(int u, int v, double cap, double rev_cap) {
        check_node(u);
        check_node(v);
        require(u != v, "invalid-argument", "self-edges are not allowed");
        require(cap >= 0.0 && rev_cap >= 0.0 && std::isfinite(cap) && std::isfinite(rev_cap),
                "invalid-argument", "edge capacities must be finite and >= 0");
        const int a = static_cast<int>(arcs_.size());
        arcs_.push_back({v, nodes_[u].first_arc, cap});
        nodes_[u].first_arc = a;
        arcs_.push_back({u, nodes_[v].first_arc, rev_cap});
        nodes_[v].first_arc = a + 1;
    }

    CutResult max_flow() {
        run();
        CutResult result;
        result.flow = settled_ + flow_;
        result.labels = residual_labels();
        return result;
    }

private:
    enum class Tree : std::uint8_t { kFree, kSource, kSink };
    static constexpr int kParentNone = -1;
    static constexpr int kParentTerminal = -2;
    static constexpr int kParentOrphan = -3;

    struct Node {
        int first_arc = -1;
        int parent_arc = kParentNone; // arc from this node to its parent
        std::uint64_t ts = 0;
        int dist = 0;
        Tree tree = Tree::kFree;
        bool in_active = false;
        double tr_cap = 0.0; // >0: residual source->v; <0: residual v->sink
    };
    struct Arc {
        int head;
        int next;
        double r_cap;
    };

    void check_node(int v) const {
        require(v >= 0 && v < node_count(), "invalid-argument", "node index out of range");
    }

    void activate(int v) {
        if (!nodes_[v].in_active) {
            nodes_[v].in_active = true;
            active_.push_back(v);
        }
    }

    // Capacity usable to grow tree T from node p through arc a (a leaves p).
    double growth_cap(Tree t, int a) const {
        return t == Tree::kSource ? arcs_[a].r_cap : arcs_[a ^ 1].r_cap;
    }

    void run() {
        flow_ = 0.0;
        time_ = 0;
        active_.clear();
        orphans_.clear();
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            Node& n = nodes_[i];
            n.parent_arc = kParentNone;
            n.tree = Tree::kFree;
            n.ts = 0;
            n.dist = 0;
            n.in_active = false;
            if (n.tr_cap > 0) {
                n.tree = Tree::kSource;
                n.parent_arc = kParentTerminal;
                n.dist = 1;
                activate(static_cast<int>(i));
            } else if (n.tr_cap < 0) {
                n.tree = Tree::kSink;
                n.parent_arc = kParentTerminal;
                n.dist = 1;
                activate(static_cast<int>(i));
            }
        }

        for (;;) {
            const int middle = grow();
            if (middle < 0) break;
            ++time_;
            augment(middle);
            while (!orphans_.empty()) {
                const int v = orphans_.front();
                orphans_.pop_front();
                adopt(v);
            }
        }
    }

    // Returns an arc from a source-tree node to a sink-tree node, or -1.
    int grow() {
        while (!active_.empty()) {
            const int p = active_.front();
            if (nodes_[p].tree == Tree::kFree) {
                active_.pop_front();
                nodes_[p].in_active = false;
                continue;
            }
            const Tree tp = nodes_[p].tree;
            bool boundary = false;
            int middle = -1;
            for (int a = nodes_[p].first_arc; a != -1; a = arcs_[a].next) {
                if (growth_cap(tp, a) <= 0) continue;
                const int q = arcs_[a].head;
                if (nodes_[q].tree == Tree::kFree) {
                    nodes_[q].tree = tp;
                    nodes_[q].parent_arc = a ^ 1;
                    nodes_[q].ts = nodes_[p].ts;
                    nodes_[q].dist = nodes_[p].dist + 1;
                    activate(q);
                } else if (nodes_[q].tree != tp) {
                    middle = tp == Tree::kSource ? a : (a ^ 1);
                    boundary = true;
                    break;
                }
            }
            if (boundary) return middle;
            active_.pop_front();
            nodes_[p].in_active = false;
        }
        return -1;
    }

    void make_orphan(int v) {
        nodes_[v].parent_arc = kParentOrphan;
        orphans_.push_back(v);
    }

    void augment(int middle) {
        double bottleneck = arcs_[middle].r_cap;
        // Source side: walk from the tail of the middle arc to the root.
        for (int v = arcs_[middle ^ 1].head;;) {
            const int a = nodes_[v].parent_arc;
            if (a == kParentTerminal) {
                bottleneck = std::min(bottleneck, nodes_[v].tr_cap);
                break;
            }
            bottleneck = std::min(bottleneck, arcs_[a ^ 1].r_cap);
            v = arcs_[a].head;
        }
        // Sink side.
        for (int v = arcs_[middle].head;;) {
            const int a = nodes_[v].parent_arc;
            if (a == kParentTerminal) {
                bottleneck = std::min(bottleneck, -nodes_[v].tr_cap);
                break;
            }
            bottleneck = std::min(bottleneck, arcs_[a].r_cap);
            v = arcs_[a].head;
        }

        arcs_[middle].r_cap -= bottleneck;
        arcs_[middle ^ 1].r_cap += bottleneck;
        for (int v = arcs_[middle ^ 1].head;;) {
            const int a = nodes_[v].parent_arc;
            if (a == kParentTerminal) {
                nodes_[v].tr_cap -= bottleneck;
                if (nodes_[v].tr_cap <= 0) make_orphan(v);
                break;
            }
            arcs_[a].r_cap += bottleneck;
            arcs_[a ^ 1].r_cap -= bottleneck;
            if (arcs_[a ^ 1].r_cap <= 0) make_orphan(v);
            v = arcs_[a].head;
        }
        for (int v = arcs_[middle].head;;) {
            const int a = nodes_[v].parent_arc;
            if (a == kParentTerminal) {
                nodes_[v].tr_cap += bottleneck;
                if (nodes_[v].tr_cap >= 0) make_orphan(v);
                break;
            }
            arcs_[a].r_cap -= bottleneck;
            arcs_[a ^ 1].r_cap += bottleneck;
            if (arcs_[a].r_cap <= 0) make_orphan(v);
            v = arcs_[a].head;
        }
        flow_ += bottleneck;
    }

    // Distance from q to its tree root, or -1 when q currently has no valid
    // origin. Caches distances with the current timestamp.
    int origin_distance(int q) {
        int d = 0;
        int u = q;
        for (;;) {
            if (nodes_[u].ts == time_) {
                d += nodes_[u].dist;
                break;
            }
            const int pa = nodes_[u].parent_arc;
            ++d;
            if (pa == kParentTerminal) {
                nodes_[u].ts = time_;
                nodes_[u].dist = 1;
                break;
            }
            if (pa == kParentNone || pa == kParentOrphan) return -1;
            u = arcs_[pa].head;
        }
        // Second pass: store distances along the validated chain.
        int remaining = d;
        for (int u2 = q; nodes_[u2].ts != time_;) {
            nodes_[u2].ts = time_;
            nodes_[u2].dist = remaining--;
            u2 = arcs_[nodes_[u2].parent_arc].head;
        }
        return d;
    }

    void adopt(int v) {
        const Tree t = nodes_[v].tree;
        int best_arc = -1;
        int best_dist = std::numeric_limits<int>::max();
        for (int a = nodes_[v].first_arc; a != -1; a = arcs_[a].next) {
            const double cap = t == Tree::kSource ? arcs_[a ^ 1].r_cap : arcs_[a].r_cap;
            if (cap <= 0) continue;
            const int q = arcs_[a].head;
            if (nodes_[q].tree != t) continue;
            const int d = origin_distance(q);
            if (d >= 0 && d < best_dist) {
                best_dist = d;
                best_arc = a;
            }
        }
        if (best_arc != -1) {
            nodes_[v].parent_arc = best_arc;
            nodes_[v].ts = time_;
            nodes_[v].dist = best_dist + 1;
            return;
        }
        // No parent found: v leaves the tree; children become orphans and
        // potential re-growth neighbors are re-activated.
        for (int a = nodes_[v].first_arc; a != -1; a = arcs_[a].next) {
            const int q = arcs_[a].head;
            if (nodes_[q].tree != t) continue;
            const double cap = t == Tree::kSource ? arcs_[a ^ 1].r_cap : arcs_[a].r_cap;
            if (cap > 0) activate(q);
            const int qa = nodes_[q].parent_arc;
            if (qa >= 0 && arcs_[qa].head == v) make_orphan(q);
        }
        nodes_[v].tree = Tree::kFree;
        nodes_[v].parent_arc = kParentNone;
    }

    std::vector<std::uint8_t> residual_labels() const {
        std::vector<std::uint8_t> labels(nodes_.size(), 1);
        std::deque<int> queue;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].tr_cap > 0) {
                labels[i] = 0;
                queue.push_back(static_cast<int>(i));
            }
        }
        while (!queue.empty()) {
            const int v = queue.front();
            queue.pop_front();
            for (int a = nodes_[v].first_arc; a != -1; a = arcs_[a].next) {
                if (arcs_[a].r_cap <= 0) continue;
                const int q = arcs_[a].head;
                if (labels[q] == 0) continue;
                labels[q] = 0;
                queue.push_back(q);
            }
        }
        return labels;
    }

    std::vector<Node> nodes_;
    std::vector<Arc> arcs_;
    std::deque<int> active_;
    std::deque<int> orphans_;
    double settled_ = 0.0;
    double flow_ = 0.0;
    std::uint64_t time_ = 0;
};

/// Potts pairwise term: weight paid iff the two endpoint labels differ.
struct MrfEdge {
    int u = 0;
    int v = 0;
    double weight = 0.0;
};

struct MrfResult {
    std::vector<std::uint8_t> labels;
    double energy = 0.0;
};

/// Energy of a labeling under sum of unaries plus Potts pairwise terms.
/// Terms are accumulated in input order (pixels first, then edges).
inline double mrf_energy(const std::vector<std::array<double, 2>>& unary,
                         const std::vector<MrfEdge>& edges,
                         const std::vector<std::uint8_t>& labels) {
    double e = 0.0;
    for (std::size_t i = 0; i < unary.size(); ++i) e += unary[i][labels[i]];
    for (const auto& edge : edges)
        if (labels[edge.u] != labels[edge.v]) e += edge.weight;
    return e;
}

/// Exact global minimizer of sum_s D(L_s) + sum_(s,t) w_st * [L_s != L_t].
/// Ties between the two labels of an isolated node resolve to 0.
inline MrfResult minimize_binary_mrf(const std::vector<std::array<double, 2>>& unary,
                                     const std::vector<MrfEdge>& edges) {
    FlowGraph graph(static_cast<int>(unary.size()));
    // Unaries may be negative (e.g. -log likelihoods): shift each pixel by
    // its cheaper label, which changes the energy by a labeling-independent
    // constant that is added back below.
    double offset = 0.0;
    for (std::size_t i = 0; i < unary.size(); ++i) {
        require(std::isfinite(unary[i][0]) && std::isfinite(unary[i][1]), "invalid-argument",
                "unary costs must be finite");
        const double shift = std::min(unary[i][0], unary[i][1]);
        offset += shift;
        // to-source carries the label-0 cost so that the canonical cut
        // (unreachable -> sink side) maps ties to label 0 after inversion.
        graph.add_terminal_capacities(static_cast<int>(i), unary[i][0] - shift,
                                      unary[i][1] - shift);
    }
    for (const auto& e : edges) {
        require(e.weight >= 0.0, "non-submodular", "negative pairwise weight");
        graph.add_edge(e.u, e.v, e.weight, e.weight);
    }
    CutResult cut = graph.max_flow();
    MrfResult result;
    result.labels.resize(cut.labels.size());
    for (std::size_t i = 0; i < cut.labels.size(); ++i) result.labels[i] = 1 - cut.labels[i];
    result.energy = cut.flow + offset;
    return result;
}

/// DIMACS max-flow dump of an MRF instance, for cross-checking with external
/// solvers. Node ids are 1-based; 1 is the source and 2 the sink.
inline void write_dimacs_max_flow(const std::vector<std::array<double, 2>>& unary,
                                  const std::vector<MrfEdge>& edges,
                                  const std::filesystem::path& path) {
    std::ofstream out(path);
    require(out.good(), "io-error", "cannot write " + path.string());
    const std::size_t n = unary.size();
    out << "p max " << n + 2 << " " << 2 * n + 2 * edges.size() << "\n";
    out << "n 1 s\nn 2 t\n";
    out.precision(17);
    for (std::size_t i = 0; i < n; ++i) {
        out << "a 1 " << i + 3 << " " << unary[i][0] << "\n";
        out << "a " << i + 3 << " 2 " << unary[i][1] << "\n";
    }
    for (const auto& e : edges) {
        out << "a " << e.u + 3 << " " << e.v + 3 << " " << e.weight << "\n";
        out << "a " << e.v + 3 << " " << e.u + 3 << " " << e.weight << "\n";
    }
}

} // namespace consensus
