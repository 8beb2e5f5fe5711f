#include <gtest/gtest.h>

#include "cf2/dataset_io.hpp"
#include "cf2/generators.hpp"

using namespace cf2;

namespace {

void check_structure(const Dataset& d) {
    ASSERT_EQ(d.graphs.size(), 1u);
    const Graph& g = d.graphs[0];
    EXPECT_NO_THROW(validate(d));
    for (std::size_t i = 0; i < g.n(); ++i) {
        EXPECT_EQ(g.adjacency(i, i), 0.0);
        for (std::size_t j = 0; j < g.n(); ++j) EXPECT_EQ(g.adjacency(i, j), g.adjacency(j, i));
    }
    for (const Edge& e : g.gt_edges) EXPECT_EQ(g.adjacency(e.u, e.v), 1.0);
    EXPECT_EQ(d.meta.at("num_edges"), static_cast<double>(g.num_edges()));
}

}  // namespace

TEST(BaShapes, ShapeAndLabels) {
    Dataset d = generate_ba_shapes(0);
    check_structure(d);
    const Graph& g = d.graphs[0];
    EXPECT_EQ(g.n(), 700u);
    EXPECT_EQ(d.num_classes, 4u);
    EXPECT_EQ(d.feature_dim, 10u);
    EXPECT_EQ(g.features, Matrix(700, 10, 1.0));
    EXPECT_EQ(g.gt_edges.size(), 80u * 6u);
    std::vector<std::size_t> counts(4, 0);
    for (std::size_t l : g.node_labels) ++counts[l];
    EXPECT_EQ(counts, (std::vector<std::size_t>{300, 80, 160, 160}));
    EXPECT_EQ(d.test_idx.size(), 140u);
    EXPECT_EQ(d.name, "ba-shapes");
}

TEST(TreeCycles, ShapeAndLabels) {
    Dataset d = generate_tree_cycles(0);
    check_structure(d);
    const Graph& g = d.graphs[0];
    EXPECT_EQ(g.n(), 871u);
    EXPECT_EQ(d.num_classes, 2u);
    EXPECT_EQ(g.gt_edges.size(), 60u * 6u);
    std::size_t cycle = 0;
    for (std::size_t l : g.node_labels) cycle += l;
    EXPECT_EQ(cycle, 360u);
    // Tree part: node i > 0 hangs under (i - 1) / 2.
    for (std::size_t i = 1; i < 511; ++i) EXPECT_EQ(g.adjacency(i, (i - 1) / 2), 1.0);
}

TEST(Generators, DeterministicPerSeed) {
    for (auto gen : {generate_ba_shapes, generate_tree_cycles}) {
        const std::string a = dataset_to_json(gen(3)).dump();
        EXPECT_EQ(a, dataset_to_json(gen(3)).dump());
        EXPECT_NE(a, dataset_to_json(gen(4)).dump());
    }
}

TEST(Generators, MotifOfNodeIsItsHouse) {
    Dataset d = generate_ba_shapes(1);
    const Graph& g = d.graphs[0];
    auto motif = motif_edges_of(g, 305);
    EXPECT_EQ(motif.size(), 6u);
    for (const Edge& e : motif) {
        EXPECT_GE(e.u, 305u);
        EXPECT_LT(e.v, 310u);
    }
    EXPECT_TRUE(motif_edges_of(g, 0).empty());
}
