#include <gtest/gtest.h>

#include <set>

#include "cf2/mutag.hpp"
#include "cf2/rng.hpp"

using namespace cf2;

namespace {

constexpr std::size_t kC = 0, kO = 1, kN = 4, kWidth = 14;

Graph molecule(const std::vector<std::size_t>& species, const std::vector<Edge>& edges, std::size_t label) {
    Matrix x(species.size(), kWidth);
    for (std::size_t i = 0; i < species.size(); ++i) x(i, species[i]) = 1.0;
    Graph g = make_graph(species.size(), edges, std::move(x));
    g.label = label;
    return g;
}

// Nitrobenzene: ring 0..5, N = 6 on atom 0, O = 7, 8.
Graph nitrobenzene(std::size_t label) {
    std::vector<Edge> e;
    for (std::size_t k = 0; k < 6; ++k) e.push_back(Edge::make(k, (k + 1) % 6));
    e.push_back({0, 6});
    e.push_back({6, 7});
    e.push_back({6, 8});
    return molecule({kC, kC, kC, kC, kC, kC, kN, kO, kO}, e, label);
}

Graph benzene(std::size_t label) {
    std::vector<Edge> e;
    for (std::size_t k = 0; k < 6; ++k) e.push_back(Edge::make(k, (k + 1) % 6));
    return molecule({kC, kC, kC, kC, kC, kC}, e, label);
}

// Pattern: ring r0..r5, nitrogen attached to r0, two oxygens on it.
struct Pattern {
    std::vector<std::size_t> species{kC, kC, kC, kC, kC, kC, kN, kO, kO};
    std::vector<Edge> edges{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 5}, {0, 6}, {6, 7}, {6, 8}};
};

// Every injective species-preserving map of the pattern into g that keeps
// pattern edges; returns the union of matched graph edges.
std::set<Edge> exhaustive_matches(const Graph& g) {
    const Pattern p;
    std::vector<std::size_t> species(g.n());
    for (std::size_t i = 0; i < g.n(); ++i)
        for (std::size_t c = 0; c < kWidth; ++c)
            if (g.features(i, c) == 1.0) species[i] = c;
    std::set<Edge> found;
    std::vector<std::size_t> map;
    std::vector<char> used(g.n(), 0);
    auto rec = [&](auto&& self) -> void {
        const std::size_t k = map.size();
        if (k == p.species.size()) {
            for (const Edge& e : p.edges) found.insert(Edge::make(map[e.u], map[e.v]));
            return;
        }
        for (std::size_t v = 0; v < g.n(); ++v) {
            if (used[v] || species[v] != p.species[k]) continue;
            bool ok = true;
            for (const Edge& e : p.edges)
                if (e.v == k && g.adjacency(map[e.u], v) == 0.0) ok = false;
            if (!ok) continue;
            used[v] = 1;
            map.push_back(v);
            self(self);
            map.pop_back();
            used[v] = 0;
        }
    };
    rec(rec);
    return found;
}

Dataset dataset_of(std::vector<Graph> graphs) {
    Dataset d;
    d.task = Task::graph;
    d.num_classes = 2;
    d.feature_dim = kWidth;
    d.graphs = std::move(graphs);
    for (std::size_t i = 0; i < d.graphs.size(); ++i) (i % 2 ? d.test_idx : d.train_idx).push_back(i);
    return d;
}

}  // namespace

TEST(Mutag, NitrobenzeneMutagenIsKeptWithNineEdges) {
    Dataset out = filter_mutag0(dataset_of({nitrobenzene(0)}));
    ASSERT_EQ(out.graphs.size(), 1u);
    EXPECT_EQ(out.graphs[0].gt_edges.size(), 9u);
    EXPECT_EQ(out.name, "mutag0");
}

TEST(Mutag, FilterRule) {
    Dataset out = filter_mutag0(dataset_of({benzene(0), benzene(1), nitrobenzene(1), nitrobenzene(0)}));
    // benzene mutagen dropped, benzene non-mutagen kept, nitro non-mutagen dropped, nitro mutagen kept
    ASSERT_EQ(out.graphs.size(), 2u);
    EXPECT_EQ(out.graphs[0].label, 1u);
    EXPECT_TRUE(out.graphs[0].gt_edges.empty());
    EXPECT_EQ(out.graphs[1].label, 0u);
    EXPECT_EQ(out.train_idx, (std::vector<std::size_t>{}));
    EXPECT_EQ(out.test_idx, (std::vector<std::size_t>{0, 1}));
}

TEST(Mutag, RejectsNonOneHotFeatures) {
    Graph g = benzene(0);
    g.features(0, 3) = 1.0;
    EXPECT_THROW(find_benzene_no2(g), UsageError);
}

TEST(Mutag, AgreesWithExhaustiveMatcher) {
    Rng rng(21);
    int with_group = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 6 + rng.uniform_index(7);  // 6..12 atoms
        std::vector<std::size_t> species(n);
        const std::size_t pool[] = {kC, kC, kC, kO, kN};
        for (auto& s : species) s = pool[rng.uniform_index(5)];
        std::vector<Edge> edges;
        if (n >= 9 && rng.uniform01() < 0.5) {
            // plant a nitrobenzene on a random subset of atoms
            std::vector<std::size_t> ids(n);
            for (std::size_t i = 0; i < n; ++i) ids[i] = i;
            rng.shuffle(ids);
            const Pattern p;
            for (std::size_t k = 0; k < 9; ++k) species[ids[k]] = p.species[k];
            for (const Edge& e : p.edges) edges.push_back(Edge::make(ids[e.u], ids[e.v]));
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (rng.uniform01() < 0.15) edges.push_back({i, j});
        std::sort(edges.begin(), edges.end());
        edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
        Graph g = molecule(species, edges, 0);
        const auto oracle = exhaustive_matches(g);
        const auto got = find_benzene_no2(g);
        EXPECT_EQ(std::set<Edge>(got.begin(), got.end()), oracle) << "trial " << trial;
        with_group += oracle.empty() ? 0 : 1;
    }
    EXPECT_GT(with_group, 50);
}
