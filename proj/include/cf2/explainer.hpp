#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cf2/error.hpp"
#include "cf2/gcn.hpp"
#include "cf2/graph.hpp"
#include "cf2/json_util.hpp"
#include "cf2/optim.hpp"
#include "cf2/tape.hpp"

namespace cf2 {

enum class MaskMode { edges, features, both };
enum class FeatureGranularity { column, node };
enum class RunnerUpMode { recompute, fixed };

inline std::string to_string(MaskMode m) {
    switch (m) {
        case MaskMode::edges: return "edges";
        case MaskMode::features: return "features";
        default: return "both";
    }
}

inline MaskMode parse_mask_mode(const std::string& s) {
    if (s == "edges") return MaskMode::edges;
    if (s == "features") return MaskMode::features;
    if (s == "both") return MaskMode::both;
    throw ParseError("unknown mask mode '" + s + "' (expected edges, features or both)");
}

inline std::string to_string(FeatureGranularity g) { return g == FeatureGranularity::column ? "column" : "node"; }

inline FeatureGranularity parse_feature_granularity(const std::string& s) {
    if (s == "column") return FeatureGranularity::column;
    if (s == "node") return FeatureGranularity::node;
    throw ParseError("unknown feature granularity '" + s + "' (expected column or node)");
}

inline std::string to_string(RunnerUpMode m) { return m == RunnerUpMode::recompute ? "recompute" : "fixed"; }

inline RunnerUpMode parse_runner_up_mode(const std::string& s) {
    if (s == "recompute") return RunnerUpMode::recompute;
    if (s == "fixed") return RunnerUpMode::fixed;
    throw ParseError("unknown runner-up mode '" + s + "' (expected recompute or fixed)");
}

inline bool uses_edges(MaskMode m) { return m != MaskMode::features; }
inline bool uses_features(MaskMode m) { return m != MaskMode::edges; }

struct ExplainConfig {
    double lambda = 500.0;
    double alpha = 0.6;
    double gamma = 0.5;
    std::size_t epochs = 500;
    double learning_rate = 0.01;
    double initial_mask = 0.95;  // activated mask value every latent starts from
    MaskMode mask_mode = MaskMode::edges;
    FeatureGranularity feature_granularity = FeatureGranularity::column;
    RunnerUpMode runner_up = RunnerUpMode::recompute;
    std::optional<std::size_t> top_k;           // keep the K strongest edges instead of thresholding
    std::optional<std::size_t> top_k_features;  // same for feature entries

    void validate() const {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw UsageError("explain: lambda must be a finite value >= 0");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("explain: alpha must lie in [0, 1]");
        if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw UsageError("explain: gamma must be a finite value >= 0");
        if (!(learning_rate > 0.0)) throw UsageError("explain: learning rate must be positive");
        if (!(initial_mask > 0.0 && initial_mask < 1.0)) throw UsageError("explain: initial mask must lie in (0, 1)");
    }

    double initial_latent() const { return std::log(initial_mask / (1.0 - initial_mask)); }
};

/// The unit being explained: a whole graph, or the computational sub-graph of
/// a node (target at local id 0).
struct Instance {
    std::size_t id = 0;                // graph index or node id
    std::size_t target = 0;            // row of the prediction (0 for both tasks)
    std::vector<std::size_t> nodes;    // local -> original node id
    Matrix adjacency;
    Matrix features;
    std::vector<Edge> edges;           // candidate edges, local ids, sorted
    std::vector<Edge> gt_edges;        // local ids

    std::size_t n() const { return adjacency.rows(); }
    Edge original(const Edge& e) const { return Edge::make(nodes[e.u], nodes[e.v]); }
};

inline std::vector<Edge> edges_of(const Matrix& adjacency) {
    std::vector<Edge> out;
    for (std::size_t i = 0; i < adjacency.rows(); ++i)
        for (std::size_t j = i + 1; j < adjacency.cols(); ++j)
            if (adjacency(i, j) != 0.0) out.push_back({i, j});
    return out;
}

inline Instance make_instance(const Dataset& d, std::size_t id, std::size_t num_layers) {
    Instance inst;
    inst.id = id;
    if (d.task == Task::graph) {
        if (id >= d.graphs.size()) throw UsageError("instance " + std::to_string(id) + " out of range");
        const Graph& g = d.graphs[id];
        inst.nodes.resize(g.n());
        std::iota(inst.nodes.begin(), inst.nodes.end(), std::size_t{0});
        inst.adjacency = g.adjacency;
        inst.features = g.features;
        inst.gt_edges = g.gt_edges;
    } else {
        if (d.graphs.empty()) throw UsageError("node dataset has no graph");
        SubGraphInstance s = extract_computational_subgraph(d.graphs[0], id, num_layers);
        inst.nodes = std::move(s.nodes);
        inst.adjacency = std::move(s.adjacency);
        inst.features = std::move(s.features);
        inst.gt_edges = std::move(s.gt_edges);
    }
    inst.edges = edges_of(inst.adjacency);
    return inst;
}

/// Mask entries in the instance's local order. `edge` has one entry per
/// candidate edge; `feature` is 1 x d (column granularity) or n x d.
struct MaskValues {
    std::vector<double> edge;
    Matrix feature;

    friend bool operator==(const MaskValues&, const MaskValues&) = default;
};

inline Matrix feature_mask_shape(const Instance& inst, FeatureGranularity g, double fill) {
    return Matrix(g == FeatureGranularity::column ? 1 : inst.n(), inst.features.cols(), fill);
}

/// Masks that keep everything.
inline MaskValues full_masks(const Instance& inst, FeatureGranularity g = FeatureGranularity::column) {
    return {std::vector<double>(inst.edges.size(), 1.0), feature_mask_shape(inst, g, 1.0)};
}

/// n x n symmetric matrix holding each edge value at both of its positions.
inline Matrix edge_mask_matrix(const Instance& inst, std::span<const double> values) {
    if (values.size() != inst.edges.size()) {
        throw ShapeError("edge mask has " + std::to_string(values.size()) + " entries, instance has " +
                         std::to_string(inst.edges.size()) + " edges");
    }
    Matrix m(inst.n(), inst.n());
    for (std::size_t e = 0; e < values.size(); ++e) {
        m(inst.edges[e].u, inst.edges[e].v) = values[e];
        m(inst.edges[e].v, inst.edges[e].u) = values[e];
    }
    return m;
}

/// Feature mask expanded to the n x d feature shape.
inline Matrix feature_mask_matrix(const Instance& inst, const Matrix& f) {
    const std::size_t n = inst.n(), d = inst.features.cols();
    if (f.cols() != d || (f.rows() != 1 && f.rows() != n)) {
        throw ShapeError("feature mask " + f.shape() + " does not fit features " + inst.features.shape());
    }
    if (f.rows() == n) return f;
    Matrix out(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) = f(0, j);
    return out;
}

struct MaskedInput {
    Matrix adjacency;
    Matrix features;
};

/// (A ⊙ M, X ⊙ F) for full-shape masks.
inline MaskedInput apply_masks(const Matrix& a, const Matrix& x, const Matrix& m, const Matrix& f) {
    require_same_shape(a, m, "apply_masks (edge mask)");
    require_same_shape(x, f, "apply_masks (feature mask)");
    return {hadamard(a, m), hadamard(x, f)};
}

/// (A − A ⊙ M, X − X ⊙ F).
inline MaskedInput apply_complement(const Matrix& a, const Matrix& x, const Matrix& m, const Matrix& f) {
    MaskedInput kept = apply_masks(a, x, m, f);
    return {sub(a, kept.adjacency), sub(x, kept.features)};
}

inline MaskedInput apply_masks(const Instance& inst, const MaskValues& mv) {
    return apply_masks(inst.adjacency, inst.features, edge_mask_matrix(inst, mv.edge),
                       feature_mask_matrix(inst, mv.feature));
}

/// Complement for an explanation restricted to `mode`: a component that is not
/// masked is not part of the explanation and is kept whole.
inline MaskedInput apply_complement(const Instance& inst, const MaskValues& mv, MaskMode mode = MaskMode::both) {
    MaskedInput c = apply_complement(inst.adjacency, inst.features, edge_mask_matrix(inst, mv.edge),
                                     feature_mask_matrix(inst, mv.feature));
    if (!uses_edges(mode)) c.adjacency = inst.adjacency;
    if (!uses_features(mode)) c.features = inst.features;
    return c;
}

/// Class probabilities for the instance's target under the given input.
inline std::vector<double> target_probabilities(const GcnModel& model, const Instance& inst, const MaskedInput& in) {
    const Matrix p = predict_proba(model, in.adjacency, in.features);
    const auto row = p.row(model.arch.task == Task::graph ? 0 : inst.target);
    return {row.begin(), row.end()};
}

inline Prediction predict(const GcnModel& model, const Instance& inst) {
    return predict(target_probabilities(model, inst, {inst.adjacency, inst.features}));
}

enum class TargetSet {
    motif,      // test instances with ground truth that the model classifies correctly
    motif_all,  // test instances with ground truth
    test,       // every test instance
};

inline std::string to_string(TargetSet t) {
    switch (t) {
        case TargetSet::motif: return "motif";
        case TargetSet::motif_all: return "motif-all";
        default: return "test";
    }
}

inline TargetSet parse_target_set(const std::string& s) {
    if (s == "motif") return TargetSet::motif;
    if (s == "motif-all") return TargetSet::motif_all;
    if (s == "test") return TargetSet::test;
    throw ParseError("unknown target set '" + s + "' (expected motif, motif-all or test)");
}

/// Instances to explain. The motif sets fall back to the next wider set when
/// they come out empty.
inline std::vector<std::size_t> select_targets(const Dataset& d, const GcnModel& model, TargetSet set) {
    if (set == TargetSet::test) return d.test_idx;
    std::vector<std::size_t> with_gt, correct;
    for (std::size_t i : d.test_idx) {
        const bool has_gt = d.task == Task::graph ? !d.graphs[i].gt_edges.empty()
                                                  : !motif_edges_of(d.graphs[0], i).empty();
        if (!has_gt) continue;
        with_gt.push_back(i);
        if (set == TargetSet::motif) {
            const Instance inst = make_instance(d, i, model.arch.num_layers);
            const std::size_t truth = d.task == Task::graph ? d.graphs[i].label : d.graphs[0].node_labels[i];
            if (predict(model, inst).label == truth) correct.push_back(i);
        }
    }
    if (!correct.empty()) return correct;
    return with_gt.empty() ? d.test_idx : with_gt;
}

/// Highest-probability class other than `label`, ties to the lowest id.
inline std::size_t runner_up_of(std::span<const double> probs, std::size_t label) {
    std::size_t best = label;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        if (c == label) continue;
        if (best == label || probs[c] > probs[best]) best = c;
    }
    return best;
}

/// P(ŷ | A ⊙ M, X ⊙ F).
inline double strength_factual(const GcnModel& model, const Instance& inst, const MaskValues& masks) {
    const std::size_t y = predict(model, inst).label;
    return target_probabilities(model, inst, apply_masks(inst, masks))[y];
}

/// −P(ŷ | A − A ⊙ M, X − X ⊙ F).
inline double strength_counterfactual(const GcnModel& model, const Instance& inst, const MaskValues& masks,
                                      MaskMode mode = MaskMode::both) {
    const std::size_t y = predict(model, inst).label;
    return -target_probabilities(model, inst, apply_complement(inst, masks, mode))[y];
}

/// max(0, γ + P(ŷ_s | masked) − S_f).
inline double factual_margin_loss(double p_runner_up, double s_f, double gamma) {
    return std::max(0.0, gamma + p_runner_up - s_f);
}

/// max(0, γ − S_c − P(ŷ_s | complement)).
inline double counterfactual_margin_loss(double s_c, double p_runner_up, double gamma) {
    return std::max(0.0, gamma - s_c - p_runner_up);
}

inline double loss_factual(const GcnModel& model, const Instance& inst, const MaskValues& masks, double gamma,
                           RunnerUpMode mode = RunnerUpMode::recompute) {
    const Prediction orig = predict(model, inst);
    const auto p = target_probabilities(model, inst, apply_masks(inst, masks));
    const std::size_t ys = mode == RunnerUpMode::recompute ? runner_up_of(p, orig.label) : orig.runner_up;
    return factual_margin_loss(p[ys], p[orig.label], gamma);
}

inline double loss_counterfactual(const GcnModel& model, const Instance& inst, const MaskValues& masks, double gamma,
                                  RunnerUpMode mode = RunnerUpMode::recompute, MaskMode mask_mode = MaskMode::both) {
    const Prediction orig = predict(model, inst);
    const auto p = target_probabilities(model, inst, apply_complement(inst, masks, mask_mode));
    const std::size_t ys = mode == RunnerUpMode::recompute ? runner_up_of(p, orig.label) : orig.runner_up;
    return counterfactual_margin_loss(-p[orig.label], p[ys], gamma);
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// Places the value of edge e at (u, v) and (v, u) of an n x n matrix.
inline Var scatter_symmetric(Var values, const std::vector<Edge>& edges, std::size_t n) {
    const Matrix& v = values.value();
    if (v.rows() != 1 || v.cols() != edges.size()) throw ShapeError("scatter_symmetric: expected 1 x #edges values");
    Matrix out(n, n);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        out(edges[e].u, edges[e].v) = v(0, e);
        out(edges[e].v, edges[e].u) = v(0, e);
    }
    return values.tape->record(std::move(out), {values},
                               [edges](const Matrix&, const Matrix& g, std::span<Matrix* const> pg) {
                                   Matrix& o = *pg[0];
                                   for (std::size_t e = 0; e < edges.size(); ++e)
                                       o(0, e) += g(edges[e].u, edges[e].v) + g(edges[e].v, edges[e].u);
                               });
}

/// A frozen model paired with one instance and its unmasked prediction.
struct ExplainProblem {
    const GcnModel* model = nullptr;
    Instance instance;
    Prediction original;
    std::shared_ptr<const Support> support;
};

inline ExplainProblem make_problem(const GcnModel& model, Instance inst) {
    if (inst.features.cols() != model.arch.feature_dim) {
        throw ShapeError("instance features have width " + std::to_string(inst.features.cols()) +
                         ", model expects " + std::to_string(model.arch.feature_dim));
    }
    ExplainProblem p{&model, std::move(inst), {}, nullptr};
    p.original = predict(model, p.instance);
    p.support = propagation_support(p.instance.adjacency);
    return p;
}

/// Latent parameters, all at the logit of `initial_mask`; sigmoid of each entry
/// is the relaxed mask value. Disabled components are empty.
inline MaskValues initial_latents(const Instance& inst, const ExplainConfig& cfg) {
    MaskValues z;
    if (uses_edges(cfg.mask_mode)) z.edge.assign(inst.edges.size(), cfg.initial_latent());
    if (uses_features(cfg.mask_mode)) z.feature = feature_mask_shape(inst, cfg.feature_granularity, cfg.initial_latent());
    return z;
}

/// Relaxed masks from latents; disabled components are all ones.
inline MaskValues activate(const Instance& inst, const MaskValues& latents, const ExplainConfig& cfg) {
    MaskValues m = full_masks(inst, cfg.feature_granularity);
    if (uses_edges(cfg.mask_mode)) {
        for (std::size_t e = 0; e < m.edge.size(); ++e) m.edge[e] = sigmoid(latents.edge.at(e));
    }
    if (uses_features(cfg.mask_mode)) m.feature = map(latents.feature, [](double v) { return sigmoid(v); });
    return m;
}

struct ObjectiveValue {
    double total = 0.0;
    double l1 = 0.0;
    double lf = 0.0;
    double lc = 0.0;
    MaskValues grad;  // d total / d latents
};

/// ‖M*‖₁ + ‖F*‖₁ + λ(α L_f + (1 − α) L_c) and its gradient with respect to the latents.
inline ObjectiveValue objective(const ExplainProblem& prob, const MaskValues& latents, const ExplainConfig& cfg) {
    const GcnModel& model = *prob.model;
    const Instance& inst = prob.instance;
    const std::size_t n = inst.n();
    const std::size_t row = model.arch.task == Task::graph ? 0 : inst.target;
    const std::size_t y = prob.original.label;

    Tape tape;
    const ModelVars mv = bind(tape, model, false);
    Var a = tape.constant(inst.adjacency);
    Var x = tape.constant(inst.features);

    std::optional<Var> ze, zf;
    Var l1 = tape.constant(Matrix(1, 1));
    Var kept_a = a, kept_x = x;
    if (uses_edges(cfg.mask_mode)) {
        ze = tape.parameter(Matrix(1, inst.edges.size(), latents.edge));
        Var me = sigmoid(*ze);
        l1 = add(l1, sum(me));
        kept_a = hadamard(a, scatter_symmetric(me, inst.edges, n));
    }
    if (uses_features(cfg.mask_mode)) {
        if (latents.feature.cols() != inst.features.cols()) throw ShapeError("feature latents do not fit the instance");
        zf = tape.parameter(latents.feature);
        Var mf = sigmoid(*zf);
        l1 = add(l1, sum(mf));
        kept_x = hadamard(x, mf.value().rows() == n ? mf : broadcast_rows(mf, n));
    }
    Var comp_a = uses_edges(cfg.mask_mode) ? sub(a, kept_a) : a;
    Var comp_x = uses_features(cfg.mask_mode) ? sub(x, kept_x) : x;

    auto margin = [&](Var probs, bool factual) {
        const auto p = probs.value().row(row);
        const std::size_t ys = cfg.runner_up == RunnerUpMode::recompute ? runner_up_of(p, y) : prob.original.runner_up;
        Var py = entry(probs, row, y);
        Var ps = entry(probs, row, ys);
        // L_f: γ + P(ŷ_s) − P(ŷ) on the kept input; L_c: γ + P(ŷ) − P(ŷ_s) on the complement.
        return relu(add_scalar(factual ? sub(ps, py) : sub(py, ps), cfg.gamma));
    };
    Var lf = margin(forward(model.arch, mv, kept_a, kept_x, prob.support), true);
    Var lc = margin(forward(model.arch, mv, comp_a, comp_x, prob.support), false);

    Var total = l1;
    if (cfg.alpha > 0.0) total = add(total, scale(lf, cfg.lambda * cfg.alpha));
    if (cfg.alpha < 1.0) total = add(total, scale(lc, cfg.lambda * (1.0 - cfg.alpha)));

    ObjectiveValue out;
    out.total = total.value()(0, 0);
    out.l1 = l1.value()(0, 0);
    out.lf = lf.value()(0, 0);
    out.lc = lc.value()(0, 0);
    if (ze || zf) {
        auto grads = tape.backward(total);
        if (ze) {
            const Matrix& g = grads[*ze];
            out.grad.edge.assign(g.data().begin(), g.data().end());
        }
        if (zf) out.grad.feature = grads[*zf];
    }
    return out;
}

struct Explanation {
    std::size_t instance = 0;
    MaskMode mask_mode = MaskMode::edges;
    FeatureGranularity feature_granularity = FeatureGranularity::column;
    std::size_t label = 0;
    MaskValues relaxed;
    MaskValues binary;
    double l1 = 0.0;
    double lf = 0.0;
    double lc = 0.0;
    std::size_t size = 0;
};

namespace detail {

inline std::vector<double> threshold(std::span<const double> v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.5 ? 1.0 : 0.0;
    return out;
}

inline std::vector<double> keep_top_k(std::span<const double> v, std::size_t k, const char* what) {
    if (k > v.size()) {
        throw UsageError(std::string("top-K: K = ") + std::to_string(k) + " exceeds the " + std::to_string(v.size()) +
                         " available " + what);
    }
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    std::vector<double> out(v.size(), 0.0);
    for (std::size_t i = 0; i < k; ++i) out[order[i]] = 1.0;
    return out;
}

}  // namespace detail

/// Threshold (strictly above 0.5) or top-K binarization of the enabled masks.
/// Disabled components stay all ones.
inline MaskValues binarize(const MaskValues& relaxed, const ExplainConfig& cfg) {
    MaskValues out = relaxed;
    if (uses_edges(cfg.mask_mode)) {
        out.edge = cfg.top_k ? detail::keep_top_k(relaxed.edge, *cfg.top_k, "edges") : detail::threshold(relaxed.edge);
    } else {
        std::fill(out.edge.begin(), out.edge.end(), 1.0);
    }
    auto fv = out.feature.data();
    if (uses_features(cfg.mask_mode)) {
        const auto b = cfg.top_k_features ? detail::keep_top_k(relaxed.feature.data(), *cfg.top_k_features, "features")
                                          : detail::threshold(relaxed.feature.data());
        std::copy(b.begin(), b.end(), fv.begin());
    } else {
        std::fill(fv.begin(), fv.end(), 1.0);
    }
    return out;
}

/// Number of kept edges (each undirected edge once) plus kept feature entries
/// when features are masked.
inline std::size_t explanation_size(const MaskValues& binary, MaskMode mode) {
    std::size_t s = 0;
    if (uses_edges(mode)) s += static_cast<std::size_t>(std::count(binary.edge.begin(), binary.edge.end(), 1.0));
    if (uses_features(mode))
        s += static_cast<std::size_t>(std::count(binary.feature.data().begin(), binary.feature.data().end(), 1.0));
    return s;
}

/// Adam on the mask latents, then binarization.
inline Explanation explain(const ExplainProblem& prob, const ExplainConfig& cfg) {
    cfg.validate();
    MaskValues z = initial_latents(prob.instance, cfg);
    Matrix ze(1, z.edge.size(), z.edge);
    Adam opt(cfg.learning_rate);
    for (std::size_t step = 0; step < cfg.epochs; ++step) {
        z.edge.assign(ze.data().begin(), ze.data().end());
        ObjectiveValue v;
        try {
            v = objective(prob, z, cfg);
        } catch (const std::domain_error& e) {
            throw OptimizationError(std::string("explanation objective became non-finite: ") + e.what(), step);
        }
        if (!std::isfinite(v.total)) throw OptimizationError("explanation objective is not finite", step);
        std::vector<Matrix*> params;
        std::vector<const Matrix*> grads;
        Matrix ge(1, v.grad.edge.size(), v.grad.edge);
        if (uses_edges(cfg.mask_mode)) {
            params.push_back(&ze);
            grads.push_back(&ge);
        }
        if (uses_features(cfg.mask_mode)) {
            params.push_back(&z.feature);
            grads.push_back(&v.grad.feature);
        }
        opt.step(params, grads);
    }
    z.edge.assign(ze.data().begin(), ze.data().end());
    const ObjectiveValue fin = objective(prob, z, cfg);
    if (!std::isfinite(fin.total)) throw OptimizationError("explanation objective is not finite", cfg.epochs);

    Explanation ex;
    ex.instance = prob.instance.id;
    ex.mask_mode = cfg.mask_mode;
    ex.feature_granularity = cfg.feature_granularity;
    ex.label = prob.original.label;
    ex.relaxed = activate(prob.instance, z, cfg);
    ex.binary = binarize(ex.relaxed, cfg);
    ex.l1 = fin.l1;
    ex.lf = fin.lf;
    ex.lc = fin.lc;
    ex.size = explanation_size(ex.binary, cfg.mask_mode);
    return ex;
}

inline Explanation explain(const GcnModel& model, const Instance& inst, const ExplainConfig& cfg) {
    return explain(make_problem(model, inst), cfg);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Edges and features are reported with original node ids.
inline nlohmann::json explanation_to_json(const Explanation& ex, const Instance& inst) {
    using nlohmann::json;
    json j;
    j["instance"] = ex.instance;
    j["mask_mode"] = to_string(ex.mask_mode);
    j["feature_granularity"] = to_string(ex.feature_granularity);
    j["label"] = ex.label;
    json kept = json::array(), edge_values = json::array();
    for (std::size_t e = 0; e < inst.edges.size(); ++e) {
        const Edge o = inst.original(inst.edges[e]);
        if (ex.binary.edge[e] == 1.0 && uses_edges(ex.mask_mode)) kept.push_back({o.u, o.v});
        edge_values.push_back({o.u, o.v, ex.relaxed.edge[e]});
    }
    std::sort(kept.begin(), kept.end());
    j["kept_edges"] = std::move(kept);
    json kept_features = json::array();
    if (uses_features(ex.mask_mode)) {
        const Matrix& b = ex.binary.feature;
        for (std::size_t i = 0; i < b.rows(); ++i)
            for (std::size_t c = 0; c < b.cols(); ++c) {
                if (b(i, c) != 1.0) continue;
                if (ex.feature_granularity == FeatureGranularity::column) {
                    kept_features.push_back(c);
                } else {
                    kept_features.push_back({inst.nodes[i], c});
                }
            }
    }
    j["kept_features"] = std::move(kept_features);
    j["mask_values"] = {{"edges", std::move(edge_values)}, {"features", json_util::to_json(ex.relaxed.feature)}};
    if (ex.feature_granularity == FeatureGranularity::node) j["mask_values"]["feature_nodes"] = inst.nodes;
    j["loss"] = {{"l1", ex.l1}, {"lf", ex.lf}, {"lc", ex.lc}};
    j["size"] = ex.size;
    return j;
}

/// Rebuilds the binary masks of a serialized explanation against its instance.
inline Explanation explanation_from_json(const nlohmann::json& j, const Instance& inst) {
    using json_util::get;
    const std::string ctx = "explanation";
    Explanation ex;
    ex.instance = get<std::size_t>(j, "instance", ctx);
    if (ex.instance != inst.id) {
        throw ValidationError("explanation is for instance " + std::to_string(ex.instance) + ", expected " +
                              std::to_string(inst.id));
    }
    ex.mask_mode = parse_mask_mode(get<std::string>(j, "mask_mode", ctx));
    ex.feature_granularity = parse_feature_granularity(get<std::string>(j, "feature_granularity", ctx));
    ex.label = get<std::size_t>(j, "label", ctx);
    ex.size = get<std::size_t>(j, "size", ctx);
    const auto& loss = json_util::field(j, "loss", ctx);
    ex.l1 = get<double>(loss, "l1", ctx + ".loss");
    ex.lf = get<double>(loss, "lf", ctx + ".loss");
    ex.lc = get<double>(loss, "lc", ctx + ".loss");

    ex.binary = full_masks(inst, ex.feature_granularity);
    ex.relaxed = ex.binary;
    std::vector<std::size_t> local(inst.nodes.empty() ? 0 : *std::max_element(inst.nodes.begin(), inst.nodes.end()) + 1,
                                   SIZE_MAX);
    for (std::size_t i = 0; i < inst.nodes.size(); ++i) local[inst.nodes[i]] = i;
    auto to_local = [&](std::size_t orig) {
        if (orig >= local.size() || local[orig] == SIZE_MAX) {
            throw ValidationError("explanation refers to node " + std::to_string(orig) + " outside the instance");
        }
        return local[orig];
    };

    if (uses_edges(ex.mask_mode)) {
        std::fill(ex.binary.edge.begin(), ex.binary.edge.end(), 0.0);
        for (const auto& p : json_util::field(j, "kept_edges", ctx)) {
            const auto pair = p.get<std::vector<std::size_t>>();
            if (pair.size() != 2) throw ParseError(ctx + ".kept_edges: expected [u,v] pairs");
            const Edge e = Edge::make(to_local(pair[0]), to_local(pair[1]));
            auto it = std::lower_bound(inst.edges.begin(), inst.edges.end(), e);
            if (it == inst.edges.end() || *it != e) {
                throw ValidationError("explanation keeps edge (" + std::to_string(pair[0]) + "," +
                                      std::to_string(pair[1]) + ") that is not in the instance");
            }
            ex.binary.edge[static_cast<std::size_t>(it - inst.edges.begin())] = 1.0;
        }
    }
    if (uses_features(ex.mask_mode)) {
        std::fill(ex.binary.feature.data().begin(), ex.binary.feature.data().end(), 0.0);
        const std::size_t d = inst.features.cols();
        for (const auto& f : json_util::field(j, "kept_features", ctx)) {
            std::size_t r = 0, c = 0;
            if (ex.feature_granularity == FeatureGranularity::column) {
                c = f.get<std::size_t>();
            } else {
                const auto pair = f.get<std::vector<std::size_t>>();
                if (pair.size() != 2) throw ParseError(ctx + ".kept_features: expected [node,feature] pairs");
                r = to_local(pair[0]);
                c = pair[1];
            }
            if (c >= d) throw ValidationError("explanation keeps feature " + std::to_string(c) + " >= " + std::to_string(d));
            ex.binary.feature(r, c) = 1.0;
        }
    }
    if (j.contains("mask_values")) {
        const auto& mvj = j["mask_values"];
        if (mvj.contains("edges")) {
            for (const auto& t : mvj["edges"]) {
                if (!t.is_array() || t.size() != 3) throw ParseError(ctx + ".mask_values.edges: expected [u,v,value]");
                const Edge e = Edge::make(to_local(t[0].get<std::size_t>()), to_local(t[1].get<std::size_t>()));
                auto it = std::lower_bound(inst.edges.begin(), inst.edges.end(), e);
                if (it != inst.edges.end() && *it == e)
                    ex.relaxed.edge[static_cast<std::size_t>(it - inst.edges.begin())] = t[2].get<double>();
            }
        }
        if (mvj.contains("features")) {
            Matrix f = json_util::matrix_from_json(mvj["features"], ctx + ".mask_values.features");
            if (f.rows() == ex.relaxed.feature.rows() && f.cols() == ex.relaxed.feature.cols()) ex.relaxed.feature = f;
        }
    }
    if (explanation_size(ex.binary, ex.mask_mode) != ex.size) {
        throw ValidationError("explanation size " + std::to_string(ex.size) + " does not match its kept entries");
    }
    return ex;
}

inline std::filesystem::path explanation_path(const std::filesystem::path& dir, std::size_t instance) {
    return dir / ("explanation_" + std::to_string(instance) + ".json");
}

}  // namespace cf2
