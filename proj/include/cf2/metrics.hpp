#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cf2/error.hpp"
#include "cf2/explainer.hpp"
#include "cf2/gcn.hpp"

namespace cf2 {

/// Harmonic mean of PN and PS; 0 when both are 0.
inline double f_ns(double pn, double ps) { return pn + ps == 0.0 ? 0.0 : 2.0 * pn * ps / (pn + ps); }

/// The kept input alone reproduces the original prediction.
inline bool is_sufficient(const GcnModel& model, const Instance& inst, const Explanation& ex, std::size_t label) {
    return argmax(target_probabilities(model, inst, apply_masks(inst, ex.binary))) == label;
}

/// Removing the kept input changes the original prediction.
inline bool is_necessary(const GcnModel& model, const Instance& inst, const Explanation& ex, std::size_t label) {
    return argmax(target_probabilities(model, inst, apply_complement(inst, ex.binary, ex.mask_mode))) != label;
}

struct GroundTruthScores {
    double acc = 0.0;
    double pr = 0.0;
    double re = 0.0;
    double f1 = 0.0;
};

/// Edge-level scores of a kept set against a ground-truth set, both subsets of
/// `universe`. Precision is 0 for an empty kept set.
inline GroundTruthScores ground_truth_metrics(const std::vector<Edge>& kept, const std::vector<Edge>& gt,
                                              const std::vector<Edge>& universe) {
    if (gt.empty()) throw UsageError("ground_truth_metrics: instance has no ground-truth edges");
    if (universe.empty()) throw UsageError("ground_truth_metrics: empty edge universe");
    std::vector<Edge> k(kept), g(gt);
    std::sort(k.begin(), k.end());
    std::sort(g.begin(), g.end());
    k.erase(std::unique(k.begin(), k.end()), k.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());
    std::vector<Edge> both;
    std::set_intersection(k.begin(), k.end(), g.begin(), g.end(), std::back_inserter(both));
    const double tp = static_cast<double>(both.size());
    const double fp = static_cast<double>(k.size()) - tp;
    const double fn = static_cast<double>(g.size()) - tp;
    const double tn = static_cast<double>(universe.size()) - tp - fp - fn;
    GroundTruthScores s;
    s.pr = k.empty() ? 0.0 : tp / static_cast<double>(k.size());
    s.re = tp / static_cast<double>(g.size());
    s.f1 = s.pr + s.re == 0.0 ? 0.0 : 2.0 * s.pr * s.re / (s.pr + s.re);
    s.acc = (tp + tn) / static_cast<double>(universe.size());
    return s;
}

namespace detail {

inline void check_pair(std::span<const double> xs, std::span<const double> ys, const char* what) {
    if (xs.size() != ys.size()) throw UsageError(std::string(what) + ": lists differ in length");
    if (xs.size() < 2) throw UsageError(std::string(what) + ": need at least two observations");
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw UsageError(std::string(what) + ": non-finite value");
}

/// 1-based ranks, ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace detail

/// Kendall's tau-b.
inline double kendall_tau(std::span<const double> xs, std::span<const double> ys) {
    detail::check_pair(xs, ys, "kendall_tau");
    double concordant = 0.0, discordant = 0.0, tie_x = 0.0, tie_y = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = i + 1; j < xs.size(); ++j) {
            const double dx = xs[i] - xs[j];
            const double dy = ys[i] - ys[j];
            if (dx == 0.0 && dy == 0.0) continue;
            if (dx == 0.0) {
                tie_x += 1.0;
            } else if (dy == 0.0) {
                tie_y += 1.0;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    const double denom = std::sqrt((concordant + discordant + tie_x) * (concordant + discordant + tie_y));
    if (denom == 0.0) throw UsageError("kendall_tau: undefined for a constant list");
    return (concordant - discordant) / denom;
}

/// Spearman's rho as the Pearson correlation of average ranks.
inline double spearman_rho(std::span<const double> xs, std::span<const double> ys) {
    detail::check_pair(xs, ys, "spearman_rho");
    const auto rx = detail::average_ranks(xs);
    const auto ry = detail::average_ranks(ys);
    const double n = static_cast<double>(rx.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw UsageError("spearman_rho: undefined for a constant list");
    return sxy / std::sqrt(sxx * syy);
}

struct InstanceReport {
    std::size_t instance = 0;
    int pn = 0;
    int ps = 0;
    std::size_t size = 0;
    std::optional<GroundTruthScores> gt;
};

struct EvalReport {
    std::vector<InstanceReport> rows;
    double pn = 0.0;
    double ps = 0.0;
    double fns = 0.0;
    double mean_size = 0.0;
    std::optional<GroundTruthScores> gt;  // mean over instances

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

/// Aggregates per-instance rows: PN, PS, mean size and mean ground-truth scores.
inline EvalReport aggregate(std::vector<InstanceReport> rows) {
    if (rows.empty()) throw UsageError("evaluation: no instances");
    EvalReport r;
    const double n = static_cast<double>(rows.size());
    bool all_gt = true;
    GroundTruthScores acc_gt;
    for (const auto& row : rows) {
        r.pn += row.pn;
        r.ps += row.ps;
        r.mean_size += static_cast<double>(row.size);
        if (row.gt) {
            acc_gt.acc += row.gt->acc;
            acc_gt.pr += row.gt->pr;
            acc_gt.re += row.gt->re;
            acc_gt.f1 += row.gt->f1;
        } else {
            all_gt = false;
        }
    }
    r.pn /= n;
    r.ps /= n;
    r.mean_size /= n;
    r.fns = f_ns(r.pn, r.ps);
    if (all_gt) r.gt = GroundTruthScores{acc_gt.acc / n, acc_gt.pr / n, acc_gt.re / n, acc_gt.f1 / n};
    r.rows = std::move(rows);
    return r;
}

/// Scores one binarized explanation. Ground-truth scores are skipped unless requested.
inline InstanceReport evaluate_instance(const GcnModel& model, const Instance& inst, const Explanation& ex,
                                        bool with_ground_truth) {
    const std::size_t label = predict(model, inst).label;
    InstanceReport row;
    row.instance = inst.id;
    row.ps = is_sufficient(model, inst, ex, label) ? 1 : 0;
    row.pn = is_necessary(model, inst, ex, label) ? 1 : 0;
    row.size = explanation_size(ex.binary, ex.mask_mode);
    if (with_ground_truth) {
        std::vector<Edge> kept;
        for (std::size_t e = 0; e < inst.edges.size(); ++e)
            if (ex.binary.edge[e] == 1.0) kept.push_back(inst.edges[e]);
        if (inst.gt_edges.empty()) {
            throw UsageError("ground_truth_metrics: instance " + std::to_string(inst.id) + " has no ground truth");
        }
        row.gt = ground_truth_metrics(kept, inst.gt_edges, inst.edges);
    }
    return row;
}

/// Per-instance PS indicators and their mean.
inline std::pair<double, std::vector<int>> probability_of_sufficiency(const GcnModel& model,
                                                                      const std::vector<Instance>& instances,
                                                                      const std::vector<Explanation>& explanations) {
    if (instances.size() != explanations.size() || instances.empty()) {
        throw UsageError("probability_of_sufficiency: need one explanation per instance");
    }
    std::vector<int> ps;
    for (std::size_t k = 0; k < instances.size(); ++k)
        ps.push_back(is_sufficient(model, instances[k], explanations[k], predict(model, instances[k]).label));
    return {std::accumulate(ps.begin(), ps.end(), 0.0) / static_cast<double>(ps.size()), ps};
}

/// Per-instance PN indicators and their mean.
inline std::pair<double, std::vector<int>> probability_of_necessity(const GcnModel& model,
                                                                    const std::vector<Instance>& instances,
                                                                    const std::vector<Explanation>& explanations) {
    if (instances.size() != explanations.size() || instances.empty()) {
        throw UsageError("probability_of_necessity: need one explanation per instance");
    }
    std::vector<int> pn;
    for (std::size_t k = 0; k < instances.size(); ++k)
        pn.push_back(is_necessary(model, instances[k], explanations[k], predict(model, instances[k]).label));
    return {std::accumulate(pn.begin(), pn.end(), 0.0) / static_cast<double>(pn.size()), pn};
}

inline EvalReport evaluate(const GcnModel& model, const std::vector<Instance>& instances,
                           const std::vector<Explanation>& explanations, bool with_ground_truth) {
    if (instances.size() != explanations.size()) throw UsageError("evaluate: need one explanation per instance");
    std::vector<InstanceReport> rows;
    for (std::size_t k = 0; k < instances.size(); ++k)
        rows.push_back(evaluate_instance(model, instances[k], explanations[k], with_ground_truth));
    return aggregate(std::move(rows));
}

inline nlohmann::json EvalReport::to_json() const {
    using nlohmann::json;
    auto gt_json = [](const GroundTruthScores& g) { return json{{"acc", g.acc}, {"pr", g.pr}, {"re", g.re}, {"f1", g.f1}}; };
    json j;
    json inst = json::array();
    for (const auto& r : rows) {
        json row = {{"instance", r.instance}, {"pn", r.pn}, {"ps", r.ps}, {"size", r.size}};
        if (r.gt) row["gt"] = gt_json(*r.gt);
        inst.push_back(std::move(row));
    }
    j["instances"] = std::move(inst);
    j["aggregate"] = {{"pn", pn}, {"ps", ps}, {"fns", fns}, {"mean_size", mean_size}, {"count", rows.size()}};
    if (gt) j["aggregate"]["gt"] = gt_json(*gt);
    return j;
}

inline std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "instance,pn,ps,size,acc,pr,re,f1\n";
    auto gt_cols = [&](const std::optional<GroundTruthScores>& g) {
        if (g) {
            out << ',' << g->acc << ',' << g->pr << ',' << g->re << ',' << g->f1;
        } else {
            out << ",,,,";
        }
    };
    for (const auto& r : rows) {
        out << r.instance << ',' << r.pn << ',' << r.ps << ',' << r.size;
        gt_cols(r.gt);
        out << '\n';
    }
    out << "aggregate," << pn << ',' << ps << ',' << mean_size;
    gt_cols(gt);
    out << '\n';
    return out.str();
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    using json_util::get;
    EvalReport r;
    const auto& agg = json_util::field(j, "aggregate", "report");
    r.pn = get<double>(agg, "pn", "report.aggregate");
    r.ps = get<double>(agg, "ps", "report.aggregate");
    r.fns = get<double>(agg, "fns", "report.aggregate");
    r.mean_size = get<double>(agg, "mean_size", "report.aggregate");
    if (agg.contains("gt")) {
        const auto& g = agg["gt"];
        r.gt = GroundTruthScores{get<double>(g, "acc", "report.aggregate.gt"), get<double>(g, "pr", "report.aggregate.gt"),
                                 get<double>(g, "re", "report.aggregate.gt"), get<double>(g, "f1", "report.aggregate.gt")};
    }
    for (const auto& row : json_util::field(j, "instances", "report")) {
        InstanceReport ir;
        ir.instance = get<std::size_t>(row, "instance", "report.instances");
        ir.pn = get<int>(row, "pn", "report.instances");
        ir.ps = get<int>(row, "ps", "report.instances");
        ir.size = get<std::size_t>(row, "size", "report.instances");
        if (row.contains("gt")) {
            const auto& g = row["gt"];
            ir.gt = GroundTruthScores{g.value("acc", 0.0), g.value("pr", 0.0), g.value("re", 0.0), g.value("f1", 0.0)};
        }
        r.rows.push_back(ir);
    }
    return r;
}

}  // namespace cf2
