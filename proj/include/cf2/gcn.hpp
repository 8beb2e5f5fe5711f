#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cf2/error.hpp"
#include "cf2/graph.hpp"
#include "cf2/json_util.hpp"
#include "cf2/optim.hpp"
#include "cf2/rng.hpp"
#include "cf2/tape.hpp"

namespace cf2 {

/// How a layer mixes neighbour representations.
///   sum_l2:     (W + I) H Theta + b, then each node representation scaled to unit length.
///   normalized: D^-1/2 (W + I) D^-1/2 H Theta + b.
/// With constant input features the normalized rule cannot tell apart nodes
/// whose neighbourhoods are locally regular (tree interiors versus cycles), so
/// the degree-aware sum_l2 rule is the default.
enum class Propagation { sum_l2, normalized };

inline std::string to_string(Propagation p) { return p == Propagation::sum_l2 ? "sum_l2" : "normalized"; }

inline Propagation parse_propagation(const std::string& s) {
    if (s == "sum_l2") return Propagation::sum_l2;
    if (s == "normalized") return Propagation::normalized;
    throw ParseError("unknown propagation '" + s + "' (expected sum_l2 or normalized)");
}

struct GcnArch {
    Task task = Task::node;
    std::size_t feature_dim = 0;
    std::size_t hidden_dim = 16;
    std::size_t num_layers = 3;
    std::size_t num_classes = 2;
    Propagation propagation = Propagation::sum_l2;

    friend bool operator==(const GcnArch&, const GcnArch&) = default;
};

/// L graph-convolution layers (feature_dim -> hidden -> ... -> hidden) followed
/// by a linear head (hidden -> num_classes). Every layer carries a bias row.
/// Graph task: the head reads the mean of the final node representations.
/// Node task: the head is applied to every node.
struct GcnModel {
    GcnArch arch;
    std::vector<Matrix> weights;  // num_layers convolution weights, then the head
    std::vector<Matrix> biases;   // 1 x out for each entry of `weights`
    std::map<std::string, double> train_meta;

    static GcnModel zeros(const GcnArch& arch) {
        check_arch(arch);
        GcnModel m;
        m.arch = arch;
        for (std::size_t l = 0; l <= arch.num_layers; ++l) {
            const auto [in, out] = layer_shape(arch, l);
            m.weights.emplace_back(in, out);
            m.biases.emplace_back(1, out);
        }
        return m;
    }

    /// Uniform in [-s, s] with s = sqrt(6 / (fan_in + fan_out)); zero biases.
    static GcnModel init(const GcnArch& arch, std::uint64_t seed) {
        GcnModel m = zeros(arch);
        Rng rng(seed);
        for (Matrix& w : m.weights) {
            const double s = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
            for (double& v : w.data()) v = rng.uniform(-s, s);
        }
        return m;
    }

    static std::pair<std::size_t, std::size_t> layer_shape(const GcnArch& a, std::size_t l) {
        if (l == a.num_layers) return {a.hidden_dim, a.num_classes};
        return {l == 0 ? a.feature_dim : a.hidden_dim, a.hidden_dim};
    }

    static void check_arch(const GcnArch& a) {
        if (a.num_layers < 1) throw UsageError("gcn: need at least one layer");
        if (a.feature_dim == 0 || a.hidden_dim == 0 || a.num_classes == 0) {
            throw UsageError("gcn: feature, hidden and class dimensions must be positive");
        }
    }

    void validate() const {
        check_arch(arch);
        if (weights.size() != arch.num_layers + 1 || biases.size() != weights.size()) {
            throw ValidationError("gcn: expected " + std::to_string(arch.num_layers + 1) + " weight matrices");
        }
        for (std::size_t l = 0; l < weights.size(); ++l) {
            const auto [in, out] = layer_shape(arch, l);
            if (weights[l].rows() != in || weights[l].cols() != out || biases[l].rows() != 1 ||
                biases[l].cols() != out) {
                throw ValidationError("gcn: layer " + std::to_string(l) + " has shape " + weights[l].shape() +
                                      ", expected " + Matrix::shape_string(in, out));
            }
            if (!weights[l].all_finite() || !biases[l].all_finite()) {
                throw ValidationError("gcn: non-finite weight in layer " + std::to_string(l));
            }
        }
    }
};

/// Model weights placed on a tape, as constants (frozen) or parameters (training).
struct ModelVars {
    std::vector<Var> weights;
    std::vector<Var> biases;
};

inline ModelVars bind(Tape& tape, const GcnModel& m, bool trainable) {
    ModelVars v;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        v.weights.push_back(trainable ? tape.parameter(m.weights[l]) : tape.constant(m.weights[l]));
        v.biases.push_back(trainable ? tape.parameter(m.biases[l]) : tape.constant(m.biases[l]));
    }
    return v;
}

/// Propagation matrix built from a (possibly fractionally weighted) adjacency.
inline Matrix propagation_matrix(const GcnArch& arch, const Matrix& w) {
    return arch.propagation == Propagation::normalized ? normalize_adjacency(w) : add_self_loops(w);
}

inline Var propagation_matrix(const GcnArch& arch, Var w) {
    return arch.propagation == Propagation::normalized ? normalize_adjacency(w) : add_self_loops(w);
}

/// Positions of W + I that may be non-zero for a graph with this adjacency.
inline std::shared_ptr<const Support> propagation_support(const Matrix& adjacency) {
    auto s = std::make_shared<Support>();
    for (std::size_t i = 0; i < adjacency.rows(); ++i)
        for (std::size_t j = 0; j < adjacency.cols(); ++j)
            if (i == j || adjacency(i, j) != 0.0) s->emplace_back(i, j);
    return s;
}

/// Class scores from a propagation matrix. Graph task: 1 x r; node task: n x r.
/// With a support, `a_hat` must vanish outside it and propagation skips the rest.
inline Var forward_logits(const GcnArch& arch, const ModelVars& mv, Var a_hat, Var x,
                          std::shared_ptr<const Support> support = nullptr) {
    const Matrix& av = a_hat.value();
    const Matrix& xv = x.value();
    if (av.rows() != av.cols() || av.rows() != xv.rows()) {
        throw ShapeError("gcn forward: adjacency " + av.shape() + " does not match features " + xv.shape());
    }
    if (xv.cols() != arch.feature_dim) {
        throw ShapeError("gcn forward: features have width " + std::to_string(xv.cols()) + ", model expects " +
                         std::to_string(arch.feature_dim));
    }
    Var h = x;
    for (std::size_t l = 0; l < arch.num_layers; ++l) {
        Var hw = matmul(h, mv.weights[l]);
        h = add_row(support ? sparse_matmul(a_hat, hw, support) : matmul(a_hat, hw), mv.biases[l]);
        if (arch.propagation == Propagation::sum_l2) h = row_l2_normalize(h);
        if (l + 1 < arch.num_layers) h = relu(h);
    }
    if (arch.task == Task::graph) h = mean_rows(h);
    return add_row(matmul(h, mv.weights.back()), mv.biases.back());
}

/// Class probabilities for a (possibly fractionally weighted) adjacency.
inline Var forward(const GcnArch& arch, const ModelVars& mv, Var adjacency, Var x,
                   std::shared_ptr<const Support> support = nullptr) {
    return row_softmax(forward_logits(arch, mv, propagation_matrix(arch, adjacency), x, std::move(support)));
}

/// Plain evaluation without gradients. Graph task: 1 x r; node task: n x r.
inline Matrix predict_proba(const GcnModel& m, const Matrix& adjacency, const Matrix& features) {
    Tape tape;
    const ModelVars mv = bind(tape, m, false);
    return forward(m.arch, mv, tape.constant(adjacency), tape.constant(features)).value();
}

struct Prediction {
    std::size_t label = 0;      // argmax, ties to lowest id
    std::size_t runner_up = 0;  // argmax over the other classes; equals label when r == 1
    std::vector<double> probabilities;
};

inline Prediction predict(std::span<const double> probs) {
    if (probs.empty()) throw UsageError("predict: empty probability vector");
    Prediction p;
    p.probabilities.assign(probs.begin(), probs.end());
    p.label = argmax(probs);
    p.runner_up = p.label;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        if (c == p.label) continue;
        if (p.runner_up == p.label || probs[c] > probs[p.runner_up]) p.runner_up = c;
    }
    return p;
}

/// Prediction for one instance: row `target` for the node task, the single row otherwise.
inline Prediction predict(const GcnModel& m, const Matrix& adjacency, const Matrix& features, std::size_t target = 0) {
    const Matrix p = predict_proba(m, adjacency, features);
    return predict(p.row(m.arch.task == Task::graph ? 0 : target));
}

struct TrainConfig {
    std::size_t epochs = 3000;
    double learning_rate = 0.001;
    std::uint64_t seed = 0;
};

struct TrainResult {
    GcnModel model;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::vector<double> loss_history;
};

namespace detail {

inline double accuracy(const GcnModel& m, const Dataset& d, const std::vector<Matrix>& a_hats,
                       const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    std::size_t correct = 0;
    if (d.task == Task::node) {
        Tape tape;
        const ModelVars mv = bind(tape, m, false);
        const Matrix p = row_softmax(
            forward_logits(m.arch, mv, tape.constant(a_hats[0]), tape.constant(d.graphs[0].features)).value());
        for (std::size_t i : idx) correct += argmax(p.row(i)) == d.graphs[0].node_labels[i];
    } else {
        for (std::size_t k : idx) {
            Tape tape;
            const ModelVars mv = bind(tape, m, false);
            const Matrix z =
                forward_logits(m.arch, mv, tape.constant(a_hats[k]), tape.constant(d.graphs[k].features)).value();
            correct += argmax(z.row(0)) == d.graphs[k].label;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace detail

/// Full-batch Adam on mean cross-entropy over the training instances.
/// Node task trains on the whole graph with the loss restricted to training nodes.
inline TrainResult train(const Dataset& d, std::size_t num_layers, std::size_t hidden_dim, const TrainConfig& cfg,
                         Propagation propagation = Propagation::sum_l2) {
    validate(d);
    if (cfg.epochs < 1) throw UsageError("train: epochs must be at least 1");
    if (!(cfg.learning_rate > 0.0)) throw UsageError("train: learning rate must be positive");
    if (d.train_idx.empty()) throw UsageError("train: empty training split");

    GcnArch arch{d.task, d.feature_dim, hidden_dim, num_layers, d.num_classes, propagation};
    TrainResult res;
    res.model = GcnModel::init(arch, cfg.seed);
    GcnModel& m = res.model;

    std::vector<Matrix> a_hats;
    for (const Graph& g : d.graphs) a_hats.push_back(propagation_matrix(arch, g.adjacency));

    std::vector<std::size_t> node_labels;
    if (d.task == Task::node)
        for (std::size_t i : d.train_idx) node_labels.push_back(d.graphs[0].node_labels[i]);

    Adam opt(cfg.learning_rate);
    std::vector<Matrix*> params;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        params.push_back(&m.weights[l]);
        params.push_back(&m.biases[l]);
    }

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tape tape;
        const ModelVars mv = bind(tape, m, true);
        double loss_value = 0.0;
        try {
            Var loss;
            if (d.task == Task::node) {
                Var z = forward_logits(arch, mv, tape.constant(a_hats[0]), tape.constant(d.graphs[0].features));
                loss = cross_entropy(z, d.train_idx, node_labels);
            } else {
                const std::size_t zero = 0;
                bool first = true;
                for (std::size_t k : d.train_idx) {
                    Var z = forward_logits(arch, mv, tape.constant(a_hats[k]), tape.constant(d.graphs[k].features));
                    const std::size_t y = d.graphs[k].label;
                    Var lk = cross_entropy(z, std::span(&zero, 1), std::span(&y, 1));
                    loss = first ? lk : add(loss, lk);
                    first = false;
                }
                loss = scale(loss, 1.0 / static_cast<double>(d.train_idx.size()));
            }
            loss_value = loss.value()(0, 0);
            auto grads = tape.backward(loss);
            std::vector<const Matrix*> gs;
            for (std::size_t l = 0; l < m.weights.size(); ++l) {
                gs.push_back(&grads[mv.weights[l]]);
                gs.push_back(&grads[mv.biases[l]]);
            }
            opt.step(params, gs);
        } catch (const std::domain_error& e) {
            throw TrainingError(std::string("training diverged: ") + e.what(), epoch);
        }
        if (!std::isfinite(loss_value)) throw TrainingError("training loss is not finite", epoch);
        for (Matrix* p : params)
            if (!p->all_finite()) throw TrainingError("non-finite weights after update", epoch);
        res.loss_history.push_back(loss_value);
    }

    res.train_accuracy = detail::accuracy(m, d, a_hats, d.train_idx);
    res.test_accuracy = detail::accuracy(m, d, a_hats, d.test_idx);
    m.train_meta["epochs"] = static_cast<double>(cfg.epochs);
    m.train_meta["learning_rate"] = cfg.learning_rate;
    m.train_meta["seed"] = static_cast<double>(cfg.seed);
    m.train_meta["train_accuracy"] = res.train_accuracy;
    m.train_meta["test_accuracy"] = res.test_accuracy;
    m.train_meta["final_loss"] = res.loss_history.back();
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const GcnModel& m) {
    using nlohmann::json;
    json j;
    j["arch"] = {{"task", to_string(m.arch.task)},
                 {"feature_dim", m.arch.feature_dim},
                 {"hidden_dim", m.arch.hidden_dim},
                 {"num_layers", m.arch.num_layers},
                 {"num_classes", m.arch.num_classes},
                 {"propagation", to_string(m.arch.propagation)}};
    j["task"] = to_string(m.arch.task);
    j["weights"] = json::array();
    j["biases"] = json::array();
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        j["weights"].push_back(json_util::to_json(m.weights[l]));
        j["biases"].push_back(json_util::to_json(m.biases[l]));
    }
    j["train_meta"] = m.train_meta;
    return j;
}

inline GcnModel model_from_json(const nlohmann::json& j) {
    using json_util::get;
    const auto& a = json_util::field(j, "arch", "model");
    GcnModel m;
    m.arch.task = parse_task(get<std::string>(a, "task", "model.arch"));
    m.arch.feature_dim = get<std::size_t>(a, "feature_dim", "model.arch");
    m.arch.hidden_dim = get<std::size_t>(a, "hidden_dim", "model.arch");
    m.arch.num_layers = get<std::size_t>(a, "num_layers", "model.arch");
    m.arch.num_classes = get<std::size_t>(a, "num_classes", "model.arch");
    if (a.contains("propagation")) m.arch.propagation = parse_propagation(get<std::string>(a, "propagation", "model.arch"));
    const auto& ws = json_util::field(j, "weights", "model");
    const auto& bs = json_util::field(j, "biases", "model");
    if (!ws.is_array() || !bs.is_array()) throw ParseError("model: weights and biases must be arrays");
    for (std::size_t l = 0; l < ws.size(); ++l)
        m.weights.push_back(json_util::matrix_from_json(ws[l], "model.weights[" + std::to_string(l) + "]"));
    for (std::size_t l = 0; l < bs.size(); ++l)
        m.biases.push_back(json_util::matrix_from_json(bs[l], "model.biases[" + std::to_string(l) + "]"));
    if (j.contains("train_meta")) m.train_meta = get<std::map<std::string, double>>(j, "train_meta", "model");
    m.validate();
    return m;
}

inline void save_model(const GcnModel& m, const std::filesystem::path& path) {
    json_util::write_file(path, model_to_json(m));
}

inline GcnModel load_model(const std::filesystem::path& path) {
    try {
        return model_from_json(json_util::read_file(path));
    } catch (const UsageError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace cf2
