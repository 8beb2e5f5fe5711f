#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "cf2/error.hpp"
#include "cf2/tape.hpp"
#include "cf2/tensor.hpp"

namespace cf2 {

/// Undirected edge, stored with u < v.
struct Edge {
    std::size_t u = 0;
    std::size_t v = 0;

    static Edge make(std::size_t a, std::size_t b) { return a < b ? Edge{a, b} : Edge{b, a}; }
    auto operator<=>(const Edge&) const = default;
};

enum class Task { graph, node };

inline const char* to_string(Task t) { return t == Task::graph ? "graph" : "node"; }

inline Task parse_task(const std::string& s) {
    if (s == "graph") return Task::graph;
    if (s == "node") return Task::node;
    throw ParseError("unknown task '" + s + "' (expected graph|node)");
}

struct Graph {
    Matrix adjacency;  // n x n, symmetric 0/1, zero diagonal
    Matrix features;   // n x d
    std::size_t label = 0;                 // graph task
    std::vector<std::size_t> node_labels;  // node task
    std::vector<Edge> gt_edges;            // optional ground-truth motif edges

    std::size_t n() const noexcept { return adjacency.rows(); }

    /// Undirected edges in lexicographic order.
    std::vector<Edge> edges() const {
        std::vector<Edge> out;
        for (std::size_t i = 0; i < n(); ++i)
            for (std::size_t j = i + 1; j < n(); ++j)
                if (adjacency(i, j) != 0.0) out.push_back({i, j});
        return out;
    }

    std::size_t num_edges() const { return edges().size(); }

    std::vector<std::vector<std::size_t>> neighbors() const {
        std::vector<std::vector<std::size_t>> nb(n());
        for (std::size_t i = 0; i < n(); ++i)
            for (std::size_t j = 0; j < n(); ++j)
                if (i != j && adjacency(i, j) != 0.0) nb[i].push_back(j);
        return nb;
    }

    friend bool operator==(const Graph&, const Graph&) = default;
};

inline Graph make_graph(std::size_t n, const std::vector<Edge>& edges, Matrix features) {
    Graph g;
    g.adjacency = Matrix(n, n);
    for (const Edge& e : edges) {
        if (e.u >= n || e.v >= n) throw ValidationError("edge endpoint outside graph");
        if (e.u == e.v) throw ValidationError("self-loop edge " + std::to_string(e.u));
        g.adjacency(e.u, e.v) = 1.0;
        g.adjacency(e.v, e.u) = 1.0;
    }
    g.features = std::move(features);
    return g;
}

struct Dataset {
    std::string name;  // e.g. "ba-shapes"; optional
    Task task = Task::graph;
    std::size_t num_classes = 0;
    std::size_t feature_dim = 0;
    std::vector<Graph> graphs;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    std::map<std::string, double> meta;

    /// Graphs (graph task) or nodes of the single graph (node task).
    std::size_t num_instances() const {
        if (task == Task::graph) return graphs.size();
        return graphs.empty() ? 0 : graphs.front().n();
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Checks every structural invariant; throws ValidationError naming the first violation.
inline void validate(const Graph& g, std::size_t num_classes, std::size_t feature_dim, Task task,
                     const std::string& where = "graph") {
    const std::size_t n = g.adjacency.rows();
    if (g.adjacency.cols() != n) throw ValidationError(where + ": adjacency not square (" + g.adjacency.shape() + ")");
    if (g.features.rows() != n || g.features.cols() != feature_dim) {
        throw ValidationError(where + ": features are " + g.features.shape() + ", expected " +
                              Matrix::shape_string(n, feature_dim));
    }
    if (!g.features.all_finite()) throw ValidationError(where + ": non-finite feature value");
    for (std::size_t i = 0; i < n; ++i) {
        if (g.adjacency(i, i) != 0.0) throw ValidationError(where + ": non-zero diagonal at node " + std::to_string(i));
        for (std::size_t j = 0; j < n; ++j) {
            const double a = g.adjacency(i, j);
            if (a != 0.0 && a != 1.0) throw ValidationError(where + ": adjacency entries must be 0/1");
            if (a != g.adjacency(j, i)) {
                throw ValidationError(where + ": asymmetric adjacency at (" + std::to_string(i) + "," +
                                      std::to_string(j) + ")");
            }
        }
    }
    for (const Edge& e : g.gt_edges) {
        if (e.u >= n || e.v >= n || e.u >= e.v || g.adjacency(e.u, e.v) == 0.0) {
            throw ValidationError(where + ": ground-truth edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                                  ") is not an edge of the graph");
        }
    }
    if (task == Task::graph) {
        if (g.label >= num_classes) {
            throw ValidationError(where + ": label " + std::to_string(g.label) + " >= num_classes " +
                                  std::to_string(num_classes));
        }
    } else {
        if (g.node_labels.size() != n) throw ValidationError(where + ": node_labels length differs from n");
        for (std::size_t i = 0; i < n; ++i) {
            if (g.node_labels[i] >= num_classes) {
                throw ValidationError(where + ": node " + std::to_string(i) + " label " +
                                      std::to_string(g.node_labels[i]) + " >= num_classes " +
                                      std::to_string(num_classes));
            }
        }
    }
}

inline void validate(const Dataset& d) {
    if (d.num_classes == 0) throw ValidationError("dataset: num_classes must be positive");
    if (d.task == Task::node && d.graphs.size() != 1) {
        throw ValidationError("dataset: node task requires exactly one graph");
    }
    for (std::size_t k = 0; k < d.graphs.size(); ++k) {
        validate(d.graphs[k], d.num_classes, d.feature_dim, d.task, "graph " + std::to_string(k));
    }
    const std::size_t total = d.num_instances();
    std::vector<char> seen(total, 0);
    for (const auto* list : {&d.train_idx, &d.test_idx}) {
        for (std::size_t i : *list) {
            if (i >= total) throw ValidationError("dataset: split index " + std::to_string(i) + " out of range");
            if (seen[i]) throw ValidationError("dataset: split index " + std::to_string(i) + " listed twice");
            seen[i] = 1;
        }
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
        throw ValidationError("dataset: train/test split does not cover every instance");
    }
}

/// Seeded 4:1 train/test split over `total` instances.
template <typename RngT>
void assign_split(Dataset& d, std::size_t total, RngT& rng) {
    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    rng.shuffle(order);
    const std::size_t n_test = static_cast<std::size_t>(std::llround(static_cast<double>(total) / 5.0));
    d.test_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    d.train_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(d.test_idx.begin(), d.test_idx.end());
    std::sort(d.train_idx.begin(), d.train_idx.end());
}

/// Ground-truth motif of one node: the connected component of the
/// ground-truth edge set that contains it (empty when the node is in no motif).
inline std::vector<Edge> motif_edges_of(const Graph& g, std::size_t node) {
    std::map<std::size_t, std::vector<std::size_t>> adj;
    for (const Edge& e : g.gt_edges) {
        adj[e.u].push_back(e.v);
        adj[e.v].push_back(e.u);
    }
    if (!adj.contains(node)) return {};
    std::set<std::size_t> comp{node};
    std::queue<std::size_t> q;
    q.push(node);
    while (!q.empty()) {
        const std::size_t x = q.front();
        q.pop();
        for (std::size_t y : adj[x])
            if (comp.insert(y).second) q.push(y);
    }
    std::vector<Edge> out;
    for (const Edge& e : g.gt_edges)
        if (comp.contains(e.u)) out.push_back(e);
    return out;
}

/// L-hop computational graph of one node, relabeled so the target is local id 0.
struct SubGraphInstance {
    std::size_t target_node = 0;
    std::vector<std::size_t> nodes;  // local id -> original id
    Matrix adjacency;
    Matrix features;
    std::size_t label = 0;         // true label of the target
    std::vector<Edge> gt_edges;    // target's motif, in local ids

    std::optional<std::size_t> local_id(std::size_t original) const {
        auto it = std::find(nodes.begin(), nodes.end(), original);
        if (it == nodes.end()) return std::nullopt;
        return static_cast<std::size_t>(it - nodes.begin());
    }
};

/// Nodes within `hops` of `node`, in BFS discovery order (neighbors by ascending id).
inline std::vector<std::size_t> bfs_ball(const std::vector<std::vector<std::size_t>>& nb, std::size_t node,
                                         std::size_t hops) {
    std::vector<std::size_t> dist(nb.size(), SIZE_MAX);
    std::vector<std::size_t> order{node};
    dist[node] = 0;
    for (std::size_t head = 0; head < order.size(); ++head) {
        const std::size_t x = order[head];
        if (dist[x] == hops) continue;
        for (std::size_t y : nb[x]) {
            if (dist[y] == SIZE_MAX) {
                dist[y] = dist[x] + 1;
                order.push_back(y);
            }
        }
    }
    return order;
}

inline SubGraphInstance extract_computational_subgraph(const Graph& g, std::size_t node, std::size_t hops,
                                                       const std::vector<std::vector<std::size_t>>* neighbors = nullptr) {
    if (node >= g.n()) {
        throw UsageError("extract_computational_subgraph: node " + std::to_string(node) + " out of range (n=" +
                         std::to_string(g.n()) + ")");
    }
    if (hops < 1) throw UsageError("extract_computational_subgraph: need at least one hop");
    std::vector<std::vector<std::size_t>> local_nb;
    if (!neighbors) {
        local_nb = g.neighbors();
        neighbors = &local_nb;
    }
    SubGraphInstance s;
    s.target_node = node;
    s.nodes = bfs_ball(*neighbors, node, hops);
    const std::size_t m = s.nodes.size();
    s.adjacency = Matrix(m, m);
    s.features = Matrix(m, g.features.cols());
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b < m; ++b) s.adjacency(a, b) = g.adjacency(s.nodes[a], s.nodes[b]);
        auto src = g.features.row(s.nodes[a]);
        std::copy(src.begin(), src.end(), s.features.row(a).begin());
    }
    if (!g.node_labels.empty()) s.label = g.node_labels[node];
    for (const Edge& e : motif_edges_of(g, node)) {
        auto lu = s.local_id(e.u);
        auto lv = s.local_id(e.v);
        if (lu && lv) s.gt_edges.push_back(Edge::make(*lu, *lv));
    }
    std::sort(s.gt_edges.begin(), s.gt_edges.end());
    return s;
}

/// W + I.
inline Matrix add_self_loops(const Matrix& w) {
    if (w.rows() != w.cols()) throw ShapeError("add_self_loops: matrix not square (" + w.shape() + ")");
    Matrix out = w;
    for (std::size_t i = 0; i < w.rows(); ++i) out(i, i) += 1.0;
    return out;
}

inline Var add_self_loops(Var w) {
    Matrix out = add_self_loops(w.value());
    return w.tape->record(std::move(out), {w}, [](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
        add_into(*pg[0], g);
    });
}

/// D^-1/2 (W + I) D^-1/2 with D the row sums of W + I. Fractional weights
/// enter the degrees as-is.
inline Matrix normalize_adjacency(const Matrix& w) {
    if (w.rows() != w.cols()) throw ShapeError("normalize_adjacency: matrix not square (" + w.shape() + ")");
    const std::size_t n = w.rows();
    std::vector<double> inv_sqrt(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 1.0;
        for (double v : w.row(i)) d += v;
        inv_sqrt[i] = 1.0 / std::sqrt(d);
    }
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double a = w(i, j) + (i == j ? 1.0 : 0.0);
            if (a != 0.0) out(i, j) = a * inv_sqrt[i] * inv_sqrt[j];
        }
    return out;
}

/// Differentiable normalization, recorded as one tape operation.
inline Var normalize_adjacency(Var w) {
    const Matrix& wv = w.value();
    Matrix out = normalize_adjacency(wv);
    const std::size_t n = wv.rows();
    std::vector<double> inv_sqrt(n), inv_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d = 1.0;
        for (double v : wv.row(i)) d += v;
        inv_sqrt[i] = 1.0 / std::sqrt(d);
        inv_deg[i] = 1.0 / d;
    }
    return w.tape->record(std::move(out), {w},
                          [inv_sqrt = std::move(inv_sqrt), inv_deg = std::move(inv_deg)](
                              const Matrix& ahat, const Matrix& g, std::span<Matrix* const> pg) {
                              const std::size_t n = ahat.rows();
                              Matrix& dw = *pg[0];
                              // d Ahat_ij / d deg_k = -1/2 Ahat_ij / deg_k for k in {i, j}.
                              std::vector<double> rowdot(n, 0.0);
                              for (std::size_t i = 0; i < n; ++i)
                                  for (std::size_t j = 0; j < n; ++j) {
                                      const double ga = g(i, j) * ahat(i, j);
                                      if (ga == 0.0) continue;
                                      rowdot[i] += ga;
                                      rowdot[j] += ga;
                                  }
                              for (std::size_t k = 0; k < n; ++k) {
                                  const double r = -0.5 * inv_deg[k] * rowdot[k];
                                  for (std::size_t l = 0; l < n; ++l)
                                      dw(k, l) += g(k, l) * inv_sqrt[k] * inv_sqrt[l] + r;
                              }
                          });
}

}  // namespace cf2
