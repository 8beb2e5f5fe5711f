#include <gtest/gtest.h>

#include <filesystem>

#include "cf2/gcn.hpp"
#include "cf2/generators.hpp"
#include "support.hpp"

using namespace cf2;
using cf2::testing::gradient_error;
using cf2::testing::random_matrix;

namespace {

Matrix random_adjacency(Rng& rng, std::size_t n, double p) {
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.uniform01() < p) a(i, j) = a(j, i) = 1.0;
    return a;
}

GcnModel random_model(Task task, Propagation prop, std::size_t layers, std::uint64_t seed) {
    GcnArch arch{task, 3, 5, layers, 3, prop};
    GcnModel m = GcnModel::init(arch, seed);
    Rng rng(seed + 100);
    for (Matrix& b : m.biases) b = random_matrix(rng, 1, b.cols(), -0.3, 0.3);
    return m;
}

Matrix permute(const Matrix& m, const std::vector<std::size_t>& pi, bool both) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(pi[i], both ? pi[j] : j) = m(i, j);
    return out;
}

}  // namespace

TEST(Gcn, CrossEntropyGradientMatchesFiniteDifferences) {
    for (Propagation prop : {Propagation::sum_l2, Propagation::normalized}) {
        Rng rng(31);
        const Matrix a = random_adjacency(rng, 6, 0.5);
        const Matrix x = random_matrix(rng, 6, 3);
        GcnModel m = random_model(Task::node, prop, 2, 4);
        std::vector<Matrix> params;
        for (std::size_t l = 0; l < m.weights.size(); ++l) {
            params.push_back(m.weights[l]);
            params.push_back(m.biases[l]);
        }
        std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5}, labels{0, 1, 2, 0, 1, 2};
        auto build = [&](Tape& t, const std::vector<Var>& v) {
            ModelVars mv;
            for (std::size_t k = 0; k < v.size(); k += 2) {
                mv.weights.push_back(v[k]);
                mv.biases.push_back(v[k + 1]);
            }
            Var z = forward_logits(m.arch, mv, t.constant(propagation_matrix(m.arch, a)), t.constant(x));
            return cross_entropy(z, rows, labels);
        };
        EXPECT_LT(gradient_error(build, params), 1e-4) << to_string(prop);
    }
}

TEST(Gcn, AdjacencyGradientMatchesFiniteDifferences) {
    // Gradient through the masked adjacency, as the explainer uses it.
    Rng rng(32);
    Matrix a = random_adjacency(rng, 6, 0.6);
    for (double& v : a.data())
        if (v != 0.0) v = rng.uniform(0.3, 1.0);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < i; ++j) a(i, j) = a(j, i);
    const Matrix x = random_matrix(rng, 6, 3);
    for (Propagation prop : {Propagation::sum_l2, Propagation::normalized}) {
        GcnModel m = random_model(Task::node, prop, 3, 5);
        auto support = propagation_support(a);
        auto build = [&](Tape& t, const std::vector<Var>& v) {
            const ModelVars mv = bind(t, m, false);
            return entry(forward(m.arch, mv, v[0], t.constant(x), support), 0, 1);
        };
        EXPECT_LT(gradient_error(build, {a}), 1e-6) << to_string(prop);
    }
}

TEST(Gcn, SparseAndDenseForwardAgree) {
    Rng rng(33);
    const Matrix a = random_adjacency(rng, 9, 0.3);
    const Matrix x = random_matrix(rng, 9, 3);
    GcnModel m = random_model(Task::node, Propagation::sum_l2, 3, 6);
    Tape t;
    const ModelVars mv = bind(t, m, false);
    Var dense = forward(m.arch, mv, t.constant(a), t.constant(x));
    Var sparse = forward(m.arch, mv, t.constant(a), t.constant(x), propagation_support(a));
    EXPECT_EQ(dense.value(), sparse.value());
}

TEST(Gcn, PermutationEquivariance) {
    for (Propagation prop : {Propagation::sum_l2, Propagation::normalized}) {
        for (Task task : {Task::node, Task::graph}) {
            Rng rng(34);
            for (int trial = 0; trial < 5; ++trial) {
                const std::size_t n = 4 + rng.uniform_index(8);
                const Matrix a = random_adjacency(rng, n, 0.4);
                const Matrix x = random_matrix(rng, n, 3);
                std::vector<std::size_t> pi(n);
                for (std::size_t i = 0; i < n; ++i) pi[i] = i;
                rng.shuffle(pi);
                GcnModel m = random_model(task, prop, 3, 7 + trial);
                const Matrix p = predict_proba(m, a, x);
                const Matrix q = predict_proba(m, permute(a, pi, true), permute(x, pi, false));
                const Matrix expect = task == Task::node ? permute(p, pi, false) : p;
                for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(q.data()[i], expect.data()[i], 1e-9);
            }
        }
    }
}

TEST(Gcn, PredictionInvariantToPositiveLogitScaling) {
    Rng rng(35);
    const Matrix a = random_adjacency(rng, 7, 0.4);
    const Matrix x = random_matrix(rng, 7, 3);
    GcnModel m = random_model(Task::node, Propagation::sum_l2, 2, 8);
    GcnModel scaled = m;
    for (double& v : scaled.weights.back().data()) v *= 3.7;
    for (double& v : scaled.biases.back().data()) v *= 3.7;
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(predict(m, a, x, i).label, predict(scaled, a, x, i).label);
}

TEST(Gcn, PredictRunnerUp) {
    std::vector<double> p{0.2, 0.5, 0.3};
    Prediction pr = predict(p);
    EXPECT_EQ(pr.label, 1u);
    EXPECT_EQ(pr.runner_up, 2u);
    std::vector<double> one{1.0};
    EXPECT_EQ(predict(one).runner_up, 0u);
}

TEST(Gcn, ShapeErrors) {
    GcnModel m = random_model(Task::node, Propagation::sum_l2, 2, 9);
    EXPECT_THROW(predict_proba(m, Matrix(3, 3), Matrix(3, 4)), ShapeError);
    EXPECT_THROW(predict_proba(m, Matrix(3, 3), Matrix(2, 3)), ShapeError);
    EXPECT_THROW(GcnModel::init(GcnArch{Task::node, 3, 5, 0, 2}, 0), UsageError);
}

TEST(Training, SingleClassIsTrivial) {
    Dataset d;
    d.task = Task::graph;
    d.num_classes = 1;
    d.feature_dim = 2;
    d.graphs.push_back(make_graph(3, {{0, 1}, {1, 2}}, Matrix(3, 2, 1.0)));
    d.train_idx = {0};
    auto r = train(d, 2, 4, {1, 0.01, 0});
    EXPECT_EQ(r.train_accuracy, 1.0);
}

TEST(Training, SmoothedLossNonIncreasing) {
    Dataset d = generate_tree_cycles(0);
    auto r = train(d, 3, 16, {300, 0.001, 0});
    const auto& h = r.loss_history;
    ASSERT_EQ(h.size(), 300u);
    double prev = 1e300;
    for (std::size_t w = 0; w + 10 <= h.size(); w += 10) {
        double mean = 0.0;
        for (std::size_t k = w; k < w + 10; ++k) mean += h[k] / 10.0;
        EXPECT_LE(mean, prev) << "window at epoch " << w;
        prev = mean;
    }
    EXPECT_LT(h.back(), h.front());
}

TEST(Training, DeterministicPerSeed) {
    Dataset d = generate_ba_shapes(0);
    auto a = train(d, 3, 16, {20, 0.001, 5});
    auto b = train(d, 3, 16, {20, 0.001, 5});
    EXPECT_EQ(a.model.weights, b.model.weights);
    EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Checkpoint, RoundTrip) {
    GcnModel m = random_model(Task::graph, Propagation::normalized, 3, 10);
    m.train_meta["seed"] = 10;
    const auto path = std::filesystem::temp_directory_path() / "cf2_test_gnn" / "model.json";
    save_model(m, path);
    GcnModel back = load_model(path);
    EXPECT_EQ(back.arch, m.arch);
    EXPECT_EQ(back.weights, m.weights);
    EXPECT_EQ(back.biases, m.biases);
    EXPECT_EQ(model_to_json(back).dump(), model_to_json(m).dump());
    auto j = model_to_json(m);
    j["weights"].erase(0);
    EXPECT_THROW(model_from_json(j), UsageError);
    std::filesystem::remove_all(path.parent_path());
}
