#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "cf2/graph.hpp"
#include "cf2/rng.hpp"

namespace cf2 {

namespace detail {

class EdgeSet {
public:
    explicit EdgeSet(std::size_t n) : n_(n) {}

    bool add(std::size_t a, std::size_t b) {
        if (a == b) return false;
        return edges_.insert(Edge::make(a, b)).second;
    }
    bool contains(std::size_t a, std::size_t b) const { return edges_.contains(Edge::make(a, b)); }
    std::size_t size() const { return edges_.size(); }
    std::vector<Edge> list() const { return {edges_.begin(), edges_.end()}; }
    std::size_t nodes() const { return n_; }

private:
    std::size_t n_;
    std::set<Edge> edges_;
};

// Preferential attachment: the first m nodes form a star seed on node m, then
// each new node links to m distinct targets drawn from the degree-weighted pool.
inline void barabasi_albert(EdgeSet& es, std::size_t n, std::size_t m, Rng& rng) {
    std::vector<std::size_t> pool;
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < m; ++i) targets.push_back(i);
    for (std::size_t src = m; src < n; ++src) {
        for (std::size_t t : targets) {
            es.add(src, t);
            pool.push_back(t);
            pool.push_back(src);
        }
        std::set<std::size_t> chosen;
        targets.clear();
        while (chosen.size() < m) {
            const std::size_t t = pool[rng.uniform_index(pool.size())];
            if (chosen.insert(t).second) targets.push_back(t);
        }
    }
}

inline void add_random_edges(EdgeSet& es, std::size_t count, Rng& rng) {
    const std::size_t n = es.nodes();
    std::size_t added = 0;
    while (added < count) {
        const std::size_t a = rng.uniform_index(n);
        const std::size_t b = rng.uniform_index(n);
        if (es.add(a, b)) ++added;
    }
}

inline Dataset finish_node_dataset(std::size_t n, const EdgeSet& es, std::vector<std::size_t> labels,
                                   std::vector<Edge> gt, std::size_t num_classes, Rng& rng, std::string name) {
    constexpr std::size_t kFeatureDim = 10;
    Dataset d;
    d.name = std::move(name);
    d.task = Task::node;
    d.num_classes = num_classes;
    d.feature_dim = kFeatureDim;
    Graph g = make_graph(n, es.list(), Matrix(n, kFeatureDim, 1.0));
    g.node_labels = std::move(labels);
    std::sort(gt.begin(), gt.end());
    g.gt_edges = std::move(gt);
    d.meta["num_nodes"] = static_cast<double>(n);
    d.meta["num_edges"] = static_cast<double>(es.size());
    d.graphs.push_back(std::move(g));
    assign_split(d, n, rng);
    return d;
}

}  // namespace detail

/// BA-Shapes: 300-node preferential-attachment base (m = 5), 80 five-node
/// houses each joined to a random base node by one edge, plus floor(0.1 N)
/// random edges. Labels: 0 base, 1 roof, 2 middle, 3 bottom. Features are
/// constant ones of width 10.
inline Dataset generate_ba_shapes(std::uint64_t seed) {
    constexpr std::size_t kBase = 300, kAttach = 5, kHouses = 80, kHouseSize = 5;
    constexpr std::size_t n = kBase + kHouses * kHouseSize;
    Rng rng(seed);
    detail::EdgeSet es(n);
    detail::barabasi_albert(es, kBase, kAttach, rng);

    std::vector<std::size_t> labels(n, 0);
    std::vector<Edge> gt;
    for (std::size_t h = 0; h < kHouses; ++h) {
        const std::size_t s = kBase + h * kHouseSize;
        const std::size_t roof = s, mid_a = s + 1, mid_b = s + 2, bot_a = s + 3, bot_b = s + 4;
        labels[roof] = 1;
        labels[mid_a] = labels[mid_b] = 2;
        labels[bot_a] = labels[bot_b] = 3;
        const Edge house[] = {Edge::make(roof, mid_a),  Edge::make(roof, mid_b),  Edge::make(mid_a, mid_b),
                              Edge::make(mid_a, bot_a), Edge::make(mid_b, bot_b), Edge::make(bot_a, bot_b)};
        for (const Edge& e : house) {
            es.add(e.u, e.v);
            gt.push_back(e);
        }
        es.add(mid_a, rng.uniform_index(kBase));
    }
    detail::add_random_edges(es, n / 10, rng);
    return detail::finish_node_dataset(n, es, std::move(labels), std::move(gt), 4, rng, "ba-shapes");
}

/// Tree-Cycles: balanced binary tree of depth 8 (511 nodes), 60 six-node
/// cycles each joined to a random tree node by one edge, plus floor(0.05 N)
/// random edges. Labels: 0 tree, 1 cycle.
inline Dataset generate_tree_cycles(std::uint64_t seed) {
    constexpr std::size_t kDepth = 8, kCycles = 60, kCycleSize = 6;
    constexpr std::size_t kTree = (std::size_t{1} << (kDepth + 1)) - 1;
    constexpr std::size_t n = kTree + kCycles * kCycleSize;
    Rng rng(seed);
    detail::EdgeSet es(n);
    for (std::size_t i = 1; i < kTree; ++i) es.add(i, (i - 1) / 2);

    std::vector<std::size_t> labels(n, 0);
    std::vector<Edge> gt;
    for (std::size_t c = 0; c < kCycles; ++c) {
        const std::size_t s = kTree + c * kCycleSize;
        for (std::size_t k = 0; k < kCycleSize; ++k) {
            labels[s + k] = 1;
            const Edge e = Edge::make(s + k, s + (k + 1) % kCycleSize);
            es.add(e.u, e.v);
            gt.push_back(e);
        }
        es.add(s, rng.uniform_index(kTree));
    }
    detail::add_random_edges(es, n / 20, rng);
    return detail::finish_node_dataset(n, es, std::move(labels), std::move(gt), 2, rng, "tree-cycles");
}

}  // namespace cf2
