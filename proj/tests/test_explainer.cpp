#include <gtest/gtest.h>

#include "cf2/explainer.hpp"
#include "cf2/generators.hpp"
#include "fixtures.hpp"

using namespace cf2;
using cf2::testing::random_instance;
using cf2::testing::random_model;

namespace {

ExplainConfig quick(MaskMode mode = MaskMode::edges, double alpha = 0.6) {
    ExplainConfig c;
    c.epochs = 60;
    c.alpha = alpha;
    c.mask_mode = mode;
    c.lambda = 5.0;
    return c;
}

}  // namespace

TEST(ExplainConfigTest, Validation) {
    ExplainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.alpha = 1.5;
    EXPECT_THROW(c.validate(), UsageError);
    c = {};
    c.lambda = -1;
    EXPECT_THROW(c.validate(), UsageError);
    c = {};
    c.initial_mask = 1.0;
    EXPECT_THROW(c.validate(), UsageError);
    c = {};
    c.initial_mask = 0.5;
    EXPECT_EQ(c.initial_latent(), 0.0);
    EXPECT_THROW(parse_mask_mode("all"), ParseError);
    EXPECT_EQ(parse_mask_mode("both"), MaskMode::both);
    EXPECT_EQ(parse_runner_up_mode("fixed"), RunnerUpMode::fixed);
    EXPECT_EQ(parse_feature_granularity("node"), FeatureGranularity::node);
}

TEST(Binarize, ThresholdIsStrict) {
    ExplainConfig c;
    MaskValues r{{0.9, 0.4, 0.5}, Matrix(1, 1, 1.0)};
    EXPECT_EQ(binarize(r, c).edge, (std::vector<double>{1, 0, 0}));
}

TEST(Binarize, TopK) {
    ExplainConfig c;
    MaskValues r{{0.2, 0.7, 0.2, 0.9}, Matrix(1, 1, 1.0)};
    c.top_k = 4;
    EXPECT_EQ(binarize(r, c).edge, (std::vector<double>{1, 1, 1, 1}));
    c.top_k = 3;  // tie between the two 0.2 entries goes to the lower index
    EXPECT_EQ(binarize(r, c).edge, (std::vector<double>{1, 1, 0, 1}));
    c.top_k = 5;
    EXPECT_THROW(binarize(r, c), UsageError);
}

TEST(Binarize, DisabledFeaturesStayWhole) {
    ExplainConfig c;
    MaskValues r{{0.9}, Matrix(1, 3, 0.1)};
    EXPECT_EQ(binarize(r, c).feature, Matrix(1, 3, 1.0));
    c.mask_mode = MaskMode::features;
    auto b = binarize(r, c);
    EXPECT_EQ(b.feature, Matrix(1, 3, 0.0));
    EXPECT_EQ(b.edge, std::vector<double>{1.0});
}

TEST(Instances, NodeInstanceIsComputationalGraph) {
    Dataset d = generate_tree_cycles(0);
    Instance inst = make_instance(d, 520, 3);
    EXPECT_EQ(inst.nodes.front(), 520u);
    EXPECT_EQ(inst.target, 0u);
    EXPECT_EQ(inst.gt_edges.size(), 6u);
    for (const Edge& e : inst.edges) EXPECT_EQ(d.graphs[0].adjacency(inst.nodes[e.u], inst.nodes[e.v]), 1.0);
    EXPECT_THROW(make_instance(d, 5000, 3), UsageError);
}

TEST(Masks, ComplementReconstructsInput) {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        Instance inst = random_instance(rng, 3 + rng.uniform_index(8), 0.4, 4);
        for (FeatureGranularity g : {FeatureGranularity::column, FeatureGranularity::node}) {
            MaskValues bin = full_masks(inst, g);
            for (double& v : bin.edge) v = rng.uniform01() < 0.5 ? 1.0 : 0.0;
            for (double& v : bin.feature.data()) v = rng.uniform01() < 0.5 ? 1.0 : 0.0;
            auto kept = apply_masks(inst, bin);
            auto comp = apply_complement(inst, bin);
            EXPECT_EQ(add(kept.adjacency, comp.adjacency), inst.adjacency);
            EXPECT_EQ(add(kept.features, comp.features), inst.features);
            // relaxed masks reconstruct up to rounding
            MaskValues rel = full_masks(inst, g);
            for (double& v : rel.edge) v = rng.uniform01();
            for (double& v : rel.feature.data()) v = rng.uniform01();
            auto rk = apply_masks(inst, rel);
            auto rc = apply_complement(inst, rel);
            Matrix sa = add(rk.adjacency, rc.adjacency);
            for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_NEAR(sa.data()[i], inst.adjacency.data()[i], 1e-15);
        }
    }
}

TEST(Masks, ComplementKeepsDisabledComponentWhole) {
    Rng rng(42);
    Instance inst = random_instance(rng, 6, 0.5, 3);
    MaskValues m = full_masks(inst);
    auto edges_only = apply_complement(inst, m, MaskMode::edges);
    EXPECT_EQ(edges_only.features, inst.features);
    EXPECT_EQ(edges_only.adjacency, Matrix(6, 6));
    auto features_only = apply_complement(inst, m, MaskMode::features);
    EXPECT_EQ(features_only.adjacency, inst.adjacency);
    EXPECT_EQ(features_only.features, Matrix(6, 3));
}

TEST(Strengths, FullMaskKeepsPrediction) {
    Rng rng(43);
    Instance inst = random_instance(rng, 7, 0.4, 3);
    GcnModel m = random_model(Task::graph, 3, 3, 1);
    const Prediction p = predict(m, inst);
    MaskValues full = full_masks(inst);
    EXPECT_EQ(strength_factual(m, inst, full), p.probabilities[p.label]);
    EXPECT_EQ(loss_factual(m, inst, full, 0.5),
              std::max(0.0, 0.5 + p.probabilities[p.runner_up] - p.probabilities[p.label]));
    EXPECT_EQ(factual_margin_loss(0.2, 0.9, 0.5), 0.0);
    EXPECT_NEAR(factual_margin_loss(0.4, 0.6, 0.5), 0.3, 1e-15);
    EXPECT_NEAR(counterfactual_margin_loss(-0.6, 0.3, 0.5), 0.8, 1e-15);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
    Rng rng(44);
    int checked = 0;
    for (int trial = 0; trial < 12; ++trial) {
        Instance inst = random_instance(rng, 4 + rng.uniform_index(8), 0.4, 3);
        const Propagation prop = trial % 2 ? Propagation::normalized : Propagation::sum_l2;
        GcnModel m = random_model(Task::graph, 3, 3, 100 + trial, prop);
        ExplainConfig c;
        c.lambda = 3.0;
        c.mask_mode = std::array{MaskMode::edges, MaskMode::features, MaskMode::both}[trial % 3];
        c.feature_granularity = trial % 4 < 2 ? FeatureGranularity::column : FeatureGranularity::node;
        ExplainProblem prob = make_problem(m, inst);
        MaskValues z = initial_latents(inst, c);
        for (double& v : z.edge) v = rng.uniform(-2, 2);
        for (double& v : z.feature.data()) v = rng.uniform(-2, 2);
        const ObjectiveValue base = objective(prob, z, c);
        const double h = 1e-6;
        auto fd = [&](double& slot) {
            const double keep = slot;
            slot = keep + h;
            const ObjectiveValue up = objective(prob, z, c);
            slot = keep - h;
            const ObjectiveValue down = objective(prob, z, c);
            slot = keep;
            // a hinge crossing its kink or a runner-up swap inside the stencil breaks differentiability
            const bool kink = (up.lf > 0) != (down.lf > 0) || (up.lc > 0) != (down.lc > 0);
            return std::pair{(up.total - down.total) / (2 * h), kink};
        };
        for (std::size_t e = 0; e < z.edge.size(); ++e) {
            auto [g, kink] = fd(z.edge[e]);
            if (kink) continue;
            EXPECT_NEAR(g, base.grad.edge[e], 1e-4 * std::max(1.0, std::abs(g)));
            ++checked;
        }
        for (std::size_t i = 0; i < z.feature.size(); ++i) {
            auto [g, kink] = fd(z.feature.data()[i]);
            if (kink) continue;
            EXPECT_NEAR(g, base.grad.feature.data()[i], 1e-4 * std::max(1.0, std::abs(g)));
            ++checked;
        }
    }
    EXPECT_GT(checked, 50);
}

TEST(Objective, SkipsZeroWeightedTerm) {
    Rng rng(45);
    Instance inst = random_instance(rng, 8, 0.4, 3);
    GcnModel m = random_model(Task::graph, 3, 2, 7);
    ExplainProblem prob = make_problem(m, inst);
    ExplainConfig c;
    c.lambda = 10.0;
    MaskValues z = initial_latents(inst, c);
    for (double& v : z.edge) v = rng.uniform(-2, 2);

    c.alpha = 1.0;
    ObjectiveValue f = objective(prob, z, c);
    EXPECT_DOUBLE_EQ(f.total, f.l1 + c.lambda * f.lf);
    c.alpha = 0.0;
    ObjectiveValue cf = objective(prob, z, c);
    EXPECT_DOUBLE_EQ(cf.total, cf.l1 + c.lambda * cf.lc);
    // gradients of the weighted mixture are the mixture of the pure gradients
    c.alpha = 0.25;
    ObjectiveValue mix = objective(prob, z, c);
    c.lambda = 0.0;
    ObjectiveValue l1only = objective(prob, z, c);
    for (std::size_t e = 0; e < z.edge.size(); ++e) {
        const double expect = 0.25 * f.grad.edge[e] + 0.75 * cf.grad.edge[e];
        EXPECT_NEAR(mix.grad.edge[e], expect, 1e-9);
        const double sig = sigmoid(z.edge[e]);
        EXPECT_NEAR(l1only.grad.edge[e], sig * (1 - sig), 1e-15);
    }
}

TEST(Explain, LambdaZeroCollapses) {
    Rng rng(46);
    Instance inst = random_instance(rng, 8, 0.5, 3);
    GcnModel m = random_model(Task::graph, 3, 2, 8);
    ExplainConfig c;
    c.lambda = 0.0;
    Explanation ex = explain(m, inst, c);
    EXPECT_EQ(ex.size, 0u);
    for (double v : ex.relaxed.edge) EXPECT_LT(v, 0.5);
}

TEST(Explain, Deterministic) {
    Rng rng(47);
    Instance inst = random_instance(rng, 9, 0.4, 3);
    GcnModel m = random_model(Task::graph, 3, 3, 9);
    for (MaskMode mode : {MaskMode::edges, MaskMode::both}) {
        Explanation a = explain(m, inst, quick(mode));
        Explanation b = explain(m, inst, quick(mode));
        EXPECT_EQ(a.relaxed, b.relaxed);
        EXPECT_EQ(a.binary, b.binary);
        EXPECT_EQ(a.l1, b.l1);
    }
}

TEST(Explain, EdgesOnlyLeavesFeaturesWhole) {
    Rng rng(48);
    Instance inst = random_instance(rng, 9, 0.4, 3);
    GcnModel m = random_model(Task::graph, 3, 3, 10);
    Explanation ex = explain(m, inst, quick(MaskMode::edges));
    EXPECT_EQ(ex.binary.feature, Matrix(1, 3, 1.0));
    EXPECT_EQ(ex.relaxed.feature, Matrix(1, 3, 1.0));
    // identical to recomputing on (A ⊙ M, X) without any feature handling
    const Matrix kept = hadamard(inst.adjacency, edge_mask_matrix(inst, ex.binary.edge));
    EXPECT_EQ(apply_masks(inst, ex.binary).features, inst.features);
    EXPECT_EQ(target_probabilities(m, inst, apply_masks(inst, ex.binary)),
              target_probabilities(m, inst, {kept, inst.features}));
    EXPECT_EQ(ex.size, static_cast<std::size_t>(std::count(ex.binary.edge.begin(), ex.binary.edge.end(), 1.0)));
}

TEST(Explain, FixedRunnerUpAndTopK) {
    Rng rng(49);
    Instance inst = random_instance(rng, 9, 0.5, 3);
    GcnModel m = random_model(Task::graph, 3, 3, 11);
    ExplainConfig c = quick();
    c.runner_up = RunnerUpMode::fixed;
    c.top_k = 3;
    Explanation ex = explain(m, inst, c);
    EXPECT_EQ(ex.size, 3u);
    c.top_k = inst.edges.size() + 1;
    EXPECT_THROW(explain(m, inst, c), UsageError);
}

TEST(Explain, FeatureModesSize) {
    Rng rng(50);
    Instance inst = random_instance(rng, 6, 0.5, 4);
    GcnModel m = random_model(Task::graph, 4, 2, 12);
    ExplainConfig c = quick(MaskMode::features);
    c.feature_granularity = FeatureGranularity::node;
    Explanation ex = explain(m, inst, c);
    EXPECT_EQ(ex.relaxed.feature.rows(), 6u);
    EXPECT_EQ(ex.size, static_cast<std::size_t>(std::count(ex.binary.feature.data().begin(),
                                                            ex.binary.feature.data().end(), 1.0)));
    EXPECT_EQ(ex.binary.edge, std::vector<double>(inst.edges.size(), 1.0));
}

TEST(Serialization, RoundTripAllModes) {
    Rng rng(51);
    for (MaskMode mode : {MaskMode::edges, MaskMode::features, MaskMode::both}) {
        for (FeatureGranularity g : {FeatureGranularity::column, FeatureGranularity::node}) {
            Instance inst = random_instance(rng, 7, 0.5, 3, 17);
            // original ids differ from local ids
            for (std::size_t i = 0; i < inst.nodes.size(); ++i) inst.nodes[i] = 100 + 3 * i;
            GcnModel m = random_model(Task::graph, 3, 2, 13);
            ExplainConfig c = quick(mode);
            c.feature_granularity = g;
            Explanation ex = explain(m, inst, c);
            auto j = explanation_to_json(ex, inst);
            Explanation back = explanation_from_json(j, inst);
            EXPECT_EQ(back.binary, ex.binary);
            EXPECT_EQ(back.relaxed, ex.relaxed);
            EXPECT_EQ(back.size, ex.size);
            EXPECT_EQ(back.label, ex.label);
            EXPECT_EQ(explanation_to_json(back, inst).dump(), j.dump());
        }
    }
}

TEST(Serialization, RejectsInconsistentFiles) {
    Rng rng(52);
    Instance inst = random_instance(rng, 6, 0.6, 3, 4);
    GcnModel m = random_model(Task::graph, 3, 2, 14);
    Explanation ex = explain(m, inst, quick());
    auto j = explanation_to_json(ex, inst);
    auto wrong_id = j;
    wrong_id["instance"] = 5;
    EXPECT_THROW(explanation_from_json(wrong_id, inst), ValidationError);
    auto wrong_size = j;
    wrong_size["size"] = ex.size + 1;
    EXPECT_THROW(explanation_from_json(wrong_size, inst), ValidationError);
    auto bad_edge = j;
    bad_edge["kept_edges"].push_back({0, 99});
    EXPECT_THROW(explanation_from_json(bad_edge, inst), ValidationError);
    auto missing = j;
    missing.erase("loss");
    EXPECT_THROW(explanation_from_json(missing, inst), UsageError);
    EXPECT_EQ(explanation_path("dir", 12), std::filesystem::path("dir") / "explanation_12.json");
}

TEST(Targets, MotifSelection) {
    Dataset d = generate_tree_cycles(0);
    GcnModel m = random_model(Task::node, 10, 2, 15);
    auto all = select_targets(d, m, TargetSet::test);
    EXPECT_EQ(all, d.test_idx);
    auto motif_all = select_targets(d, m, TargetSet::motif_all);
    for (std::size_t i : motif_all) EXPECT_EQ(d.graphs[0].node_labels[i], 1u);
    auto motif = select_targets(d, m, TargetSet::motif);
    EXPECT_LE(motif.size(), motif_all.size());
    EXPECT_THROW(parse_target_set("train"), ParseError);
}
