#pragma once

#include <filesystem>
#include <string>

#include "cf2/graph.hpp"
#include "cf2/json_util.hpp"

namespace cf2 {

inline nlohmann::json dataset_to_json(const Dataset& d) {
    using nlohmann::json;
    json j;
    if (!d.name.empty()) j["name"] = d.name;
    j["task"] = to_string(d.task);
    j["num_classes"] = d.num_classes;
    j["feature_dim"] = d.feature_dim;
    json graphs = json::array();
    for (const Graph& g : d.graphs) {
        json jg;
        jg["n"] = g.n();
        json edges = json::array();
        for (const Edge& e : g.edges()) edges.push_back({e.u, e.v});
        jg["edges"] = std::move(edges);
        jg["features"] = json_util::to_json(g.features);
        jg["label"] = g.label;
        if (!g.gt_edges.empty()) {
            json gt = json::array();
            for (const Edge& e : g.gt_edges) gt.push_back({e.u, e.v});
            jg["gt_edges"] = std::move(gt);
        }
        if (d.task == Task::node) jg["node_labels"] = g.node_labels;
        graphs.push_back(std::move(jg));
    }
    j["graphs"] = std::move(graphs);
    j["train_idx"] = d.train_idx;
    j["test_idx"] = d.test_idx;
    if (!d.meta.empty()) j["meta"] = d.meta;
    return j;
}

namespace detail {

inline std::vector<Edge> edges_from_json(const nlohmann::json& j, const std::string& ctx) {
    if (!j.is_array()) throw ParseError(ctx + ": expected an array of [u,v] pairs");
    std::vector<Edge> out;
    for (std::size_t k = 0; k < j.size(); ++k) {
        const auto& p = j[k];
        if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned()) {
            throw ParseError(ctx + "[" + std::to_string(k) + "]: expected [u,v] with non-negative integers");
        }
        const auto u = p[0].get<std::size_t>();
        const auto v = p[1].get<std::size_t>();
        if (u >= v) throw ValidationError(ctx + "[" + std::to_string(k) + "]: edges must be listed once with u < v");
        out.push_back({u, v});
    }
    std::vector<Edge> sorted = out;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ValidationError(ctx + ": duplicate edge");
    }
    return out;
}

}  // namespace detail

/// Parses and validates a dataset document. Throws ParseError for schema
/// problems and ValidationError for invariant violations.
inline Dataset dataset_from_json(const nlohmann::json& j) {
    using json_util::get;
    Dataset d;
    if (j.contains("name")) d.name = get<std::string>(j, "name", "dataset");
    d.task = parse_task(get<std::string>(j, "task", "dataset"));
    d.num_classes = get<std::size_t>(j, "num_classes", "dataset");
    d.feature_dim = get<std::size_t>(j, "feature_dim", "dataset");
    const auto& graphs = json_util::field(j, "graphs", "dataset");
    if (!graphs.is_array()) throw ParseError("dataset.graphs: expected an array");
    for (std::size_t k = 0; k < graphs.size(); ++k) {
        const std::string ctx = "dataset.graphs[" + std::to_string(k) + "]";
        const auto& jg = graphs[k];
        const auto n = get<std::size_t>(jg, "n", ctx);
        const auto edges = detail::edges_from_json(json_util::field(jg, "edges", ctx), ctx + ".edges");
        for (const Edge& e : edges)
            if (e.v >= n) throw ValidationError(ctx + ".edges: endpoint " + std::to_string(e.v) + " >= n");
        Matrix feats = json_util::matrix_from_json(json_util::field(jg, "features", ctx), ctx + ".features",
                                                   d.feature_dim);
        Graph g = make_graph(n, edges, std::move(feats));
        g.label = get<std::size_t>(jg, "label", ctx);
        if (jg.contains("gt_edges")) g.gt_edges = detail::edges_from_json(jg["gt_edges"], ctx + ".gt_edges");
        if (d.task == Task::node) g.node_labels = get<std::vector<std::size_t>>(jg, "node_labels", ctx);
        d.graphs.push_back(std::move(g));
    }
    d.train_idx = get<std::vector<std::size_t>>(j, "train_idx", "dataset");
    d.test_idx = get<std::vector<std::size_t>>(j, "test_idx", "dataset");
    if (j.contains("meta")) d.meta = get<std::map<std::string, double>>(j, "meta", "dataset");
    validate(d);
    return d;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    try {
        return dataset_from_json(json_util::read_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    } catch (const ParseError& e) {
        if (std::string(e.what()).starts_with(path.string())) throw;
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    validate(d);
    json_util::write_file(path, dataset_to_json(d));
}

}  // namespace cf2
