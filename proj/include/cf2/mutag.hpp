#pragma once

#include <algorithm>
#include <set>
#include <vector>

#include "cf2/graph.hpp"

namespace cf2 {

/// Column layout of the one-hot atom features and the label of the mutagenic
/// class. Defaults follow the common Mutagenicity encoding
/// (C, O, Cl, H, N, F, Br, S, P, I, Na, K, Li, Ca; class 0 = mutagen).
struct AtomEncoding {
    std::size_t carbon = 0;
    std::size_t oxygen = 1;
    std::size_t nitrogen = 4;
    std::size_t mutagen_label = 0;
};

namespace detail {

inline std::vector<std::size_t> atom_species(const Graph& g, const AtomEncoding& enc) {
    const std::size_t d = g.features.cols();
    if (d <= std::max({enc.carbon, enc.oxygen, enc.nitrogen})) {
        throw UsageError("filter_mutag0: feature width " + std::to_string(d) + " cannot hold the atom encoding");
    }
    std::vector<std::size_t> species(g.n());
    for (std::size_t i = 0; i < g.n(); ++i) {
        std::size_t hot = d, ones = 0;
        for (std::size_t c = 0; c < d; ++c) {
            const double v = g.features(i, c);
            if (v == 1.0) {
                hot = c;
                ++ones;
            } else if (v != 0.0) {
                throw UsageError("filter_mutag0: features are not a one-hot atom encoding (node " +
                                 std::to_string(i) + ")");
            }
        }
        if (ones != 1) {
            throw UsageError("filter_mutag0: node " + std::to_string(i) + " does not have exactly one atom type");
        }
        species[i] = hot;
    }
    return species;
}

// Simple 6-cycles through carbon atoms, each reported once.
inline std::vector<std::vector<std::size_t>> carbon_six_rings(const std::vector<std::vector<std::size_t>>& nb,
                                                              const std::vector<std::size_t>& species,
                                                              std::size_t carbon) {
    std::vector<std::vector<std::size_t>> rings;
    std::vector<std::size_t> path;
    std::vector<char> on_path(nb.size(), 0);
    auto dfs = [&](auto&& self, std::size_t x) -> void {
        if (path.size() == 6) {
            // close back to the start; path[1] < path[5] picks one direction
            if (std::find(nb[x].begin(), nb[x].end(), path[0]) != nb[x].end() && path[1] < path[5]) {
                rings.push_back(path);
            }
            return;
        }
        for (std::size_t y : nb[x]) {
            if (y <= path[0] || on_path[y] || species[y] != carbon) continue;
            on_path[y] = 1;
            path.push_back(y);
            self(self, y);
            path.pop_back();
            on_path[y] = 0;
        }
    };
    for (std::size_t s = 0; s < nb.size(); ++s) {
        if (species[s] != carbon) continue;
        path = {s};
        on_path[s] = 1;
        dfs(dfs, s);
        on_path[s] = 0;
    }
    return rings;
}

}  // namespace detail

/// Edges of every benzene-NO2 occurrence (carbon 6-ring, a ring carbon bonded
/// to N, that N bonded to two O). Nine edges per occurrence; overlapping
/// occurrences are merged. Empty when the group is absent.
inline std::vector<Edge> find_benzene_no2(const Graph& g, const AtomEncoding& enc = {}) {
    const auto species = detail::atom_species(g, enc);
    const auto nb = g.neighbors();
    std::set<Edge> found;
    for (const auto& ring : detail::carbon_six_rings(nb, species, enc.carbon)) {
        for (std::size_t c : ring) {
            for (std::size_t nitro : nb[c]) {
                if (species[nitro] != enc.nitrogen) continue;
                std::vector<std::size_t> oxy;
                for (std::size_t o : nb[nitro])
                    if (species[o] == enc.oxygen) oxy.push_back(o);
                if (oxy.size() < 2) continue;
                for (std::size_t k = 0; k < 6; ++k) found.insert(Edge::make(ring[k], ring[(k + 1) % 6]));
                found.insert(Edge::make(c, nitro));
                for (std::size_t o : oxy) found.insert(Edge::make(nitro, o));
            }
        }
    }
    return {found.begin(), found.end()};
}

/// Keeps mutagens that contain benzene-NO2 (annotated with its edges as ground
/// truth) and non-mutagens that do not. Split indices are remapped onto the
/// kept graphs.
inline Dataset filter_mutag0(const Dataset& d, const AtomEncoding& enc = {}) {
    if (d.task != Task::graph) throw UsageError("filter_mutag0: expected a graph-classification dataset");
    Dataset out;
    out.name = "mutag0";
    out.task = d.task;
    out.num_classes = d.num_classes;
    out.feature_dim = d.feature_dim;
    std::vector<std::size_t> remap(d.graphs.size(), SIZE_MAX);
    for (std::size_t k = 0; k < d.graphs.size(); ++k) {
        const Graph& g = d.graphs[k];
        auto motif = find_benzene_no2(g, enc);
        const bool mutagen = g.label == enc.mutagen_label;
        if (mutagen != !motif.empty()) continue;
        Graph kept = g;
        kept.gt_edges = std::move(motif);
        remap[k] = out.graphs.size();
        out.graphs.push_back(std::move(kept));
    }
    for (std::size_t i : d.train_idx)
        if (remap[i] != SIZE_MAX) out.train_idx.push_back(remap[i]);
    for (std::size_t i : d.test_idx)
        if (remap[i] != SIZE_MAX) out.test_idx.push_back(remap[i]);
    out.meta = d.meta;
    out.meta["num_graphs"] = static_cast<double>(out.graphs.size());
    return out;
}

}  // namespace cf2
