#pragma once

#include "cf2/explainer.hpp"
#include "cf2/gcn.hpp"
#include "support.hpp"

namespace cf2::testing {

/// Random graph-task instance with `n` nodes and roughly `p` edge density;
/// always has at least one edge.
inline Instance random_instance(Rng& rng, std::size_t n, double p, std::size_t feature_dim, std::size_t id = 0) {
    Instance inst;
    inst.id = id;
    inst.adjacency = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.uniform01() < p) inst.adjacency(i, j) = inst.adjacency(j, i) = 1.0;
    if (n >= 2 && edges_of(inst.adjacency).empty()) inst.adjacency(0, 1) = inst.adjacency(1, 0) = 1.0;
    inst.features = random_matrix(rng, n, feature_dim, 0.0, 1.0);
    inst.nodes.resize(n);
    for (std::size_t i = 0; i < n; ++i) inst.nodes[i] = i;
    inst.edges = edges_of(inst.adjacency);
    return inst;
}

/// Seeded model with small random biases.
inline GcnModel random_model(Task task, std::size_t feature_dim, std::size_t classes, std::uint64_t seed,
                             Propagation prop = Propagation::sum_l2, std::size_t layers = 3,
                             std::size_t hidden = 8) {
    GcnModel m = GcnModel::init(GcnArch{task, feature_dim, hidden, layers, classes, prop}, seed);
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    for (Matrix& b : m.biases) b = random_matrix(rng, 1, b.cols(), -0.3, 0.3);
    return m;
}

}  // namespace cf2::testing
