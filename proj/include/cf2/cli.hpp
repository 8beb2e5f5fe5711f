#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cf2/dataset_io.hpp"
#include "cf2/error.hpp"
#include "cf2/explainer.hpp"
#include "cf2/gcn.hpp"
#include "cf2/generators.hpp"
#include "cf2/metrics.hpp"
#include "cf2/mutag.hpp"

namespace cf2::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum Exit : int { ok = 0, validation = 1, runtime = 2 };

/// Default λ per dataset family.
inline std::optional<double> default_lambda(const std::string& dataset) {
    static const std::map<std::string, double> table = {
        {"ba-shapes", 500.0}, {"tree-cycles", 500.0}, {"mutag0", 1000.0}, {"nci1", 20.0}, {"citeseer", 100.0}};
    auto it = table.find(dataset);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

/// Default K for top-K binarization, per dataset family and mask kind.
inline std::optional<std::size_t> default_top_k(const std::string& dataset, bool features) {
    if (dataset == "mutag0" || dataset == "nci1") return features ? std::nullopt : std::optional<std::size_t>(15);
    if (dataset == "citeseer") return features ? 60 : 5;
    return std::nullopt;
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != ' ') {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(what + ": '" + s + "' is not a number");
    }
}

inline std::size_t parse_count(const std::string& s, const std::string& what) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw ValidationError(what + ": '" + s + "' is not a non-negative integer");
    }
    return std::stoull(s);
}

inline std::vector<double> parse_doubles(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const auto& item : split_list(s)) out.push_back(parse_double(item, what));
    if (out.empty()) throw ValidationError(what + ": empty list");
    return out;
}

/// Options of one subcommand, remembered so the resolved values can be written back out.
class OptionSet {
public:
    explicit OptionSet(CLI::App* app) : app_(app) {}

    template <typename T>
    CLI::Option* add(const std::string& name, T& var, const std::string& desc) {
        getters_.emplace_back(name, [&var] { return json(var); });
        return app_->add_option("--" + name, var, desc)->capture_default_str();
    }

    json resolved() const {
        json j = json::object();
        j["command"] = app_->get_name();
        for (const auto& [name, get] : getters_) j[name] = get();
        return j;
    }

    void set(const std::string& name, json value) { overrides_[name] = std::move(value); }

    json provenance() const {
        json j = resolved();
        for (const auto& [k, v] : overrides_) j[k] = v;
        return j;
    }

private:
    CLI::App* app_;
    std::vector<std::pair<std::string, std::function<json()>>> getters_;
    std::map<std::string, json> overrides_;
};

inline std::string config_value_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_array()) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + config_value_string(v[i]);
        return out;
    }
    return v.dump();
}

/// Appends `--key value` for every config-file entry the command line does
/// not set itself, so explicit flags win.
inline std::vector<std::string> merge_config(std::vector<std::string> args) {
    std::optional<std::string> path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].starts_with("--config=")) path = args[i].substr(9);
    }
    if (!path) return args;
    const json cfg = json_util::read_file(*path);
    if (!cfg.is_object()) throw ParseError(*path + ": config must be a JSON object");
    std::string command;
    for (std::size_t i = 1; i < args.size(); ++i)
        if (!args[i].starts_with("-")) {
            command = args[i];
            break;
        }
    for (const auto& [key, value] : cfg.items()) {
        if (key == "command") {
            if (value.get<std::string>() != command) {
                throw ValidationError(*path + ": config is for '" + value.get<std::string>() + "', not '" + command + "'");
            }
            continue;
        }
        if (value.is_null()) continue;
        const std::string flag = "--" + key;
        bool present = false;
        for (const auto& a : args) present = present || a == flag || a.starts_with(flag + "=");
        if (!present) {
            args.push_back(flag);
            args.push_back(config_value_string(value));
        }
    }
    return args;
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

/// Provenance next to a file output: `<file>.config.json`.
inline void write_sidecar(const fs::path& out, const OptionSet& opts) {
    json_util::write_file(fs::path(out.string() + ".config.json"), opts.provenance(), 2);
}

// ---------------------------------------------------------------------------
// Explanation runs shared by explain and sweep-alpha
// ---------------------------------------------------------------------------

struct ExplainArgs {
    std::string model;
    std::string data;
    double alpha = 0.6;
    std::string lambda = "auto";
    double gamma = 0.5;
    std::string mask_mode = "edges";
    std::string feature_granularity = "column";
    std::size_t epochs = 500;
    double lr = 0.01;
    double initial_mask = 0.95;
    std::string runner_up = "recompute";
    std::string binarize = "threshold";
    std::string top_k = "auto";
    std::string top_k_features = "auto";
    std::string targets = "motif";
    std::string instances;
    std::size_t jobs = 1;
};

inline void add_explain_options(OptionSet& o, ExplainArgs& a, bool with_alpha) {
    o.add("model", a.model, "trained model checkpoint")->required();
    o.add("data", a.data, "dataset file")->required();
    if (with_alpha) o.add("alpha", a.alpha, "weight of the factual term (1 - alpha weighs the counterfactual term)");
    o.add("lambda", a.lambda, "strength weight; 'auto' picks the per-dataset default");
    o.add("gamma", a.gamma, "hinge margin");
    o.add("mask-mode", a.mask_mode, "edges, features or both")->check(CLI::IsMember({"edges", "features", "both"}));
    o.add("feature-granularity", a.feature_granularity, "column or node")->check(CLI::IsMember({"column", "node"}));
    o.add("epochs", a.epochs, "optimization steps per instance");
    o.add("lr", a.lr, "learning rate of the mask optimizer");
    o.add("initial-mask", a.initial_mask, "mask value every latent starts from, in (0, 1)");
    o.add("runner-up", a.runner_up, "recompute or fixed")->check(CLI::IsMember({"recompute", "fixed"}));
    o.add("binarize", a.binarize, "threshold or top-k")->check(CLI::IsMember({"threshold", "top-k"}));
    o.add("top-k", a.top_k, "edges kept in top-k mode; 'auto' picks the per-dataset default");
    o.add("top-k-features", a.top_k_features, "feature entries kept in top-k mode");
    o.add("targets", a.targets, "motif, motif-all or test")->check(CLI::IsMember({"motif", "motif-all", "test"}));
    o.add("instances", a.instances, "comma-separated instance ids; overrides --targets");
    o.add("jobs", a.jobs, "parallel explanation workers");
}

struct ExplainSetup {
    Dataset data;
    GcnModel model;
    ExplainConfig cfg;
    std::vector<std::size_t> targets;
};

inline ExplainSetup resolve_explain(const ExplainArgs& a, OptionSet& o) {
    ExplainSetup s;
    s.data = load_dataset(a.data);
    s.model = load_model(a.model);
    if (s.model.arch.task != s.data.task || s.model.arch.feature_dim != s.data.feature_dim ||
        s.model.arch.num_classes != s.data.num_classes) {
        throw ValidationError("model '" + a.model + "' does not fit dataset '" + a.data + "'");
    }
    ExplainConfig& c = s.cfg;
    c.alpha = a.alpha;
    if (a.lambda == "auto") {
        auto l = default_lambda(s.data.name);
        if (!l) throw ValidationError("no default lambda for dataset '" + s.data.name + "'; pass --lambda");
        c.lambda = *l;
    } else {
        c.lambda = parse_double(a.lambda, "--lambda");
    }
    o.set("lambda", c.lambda);
    c.gamma = a.gamma;
    c.epochs = a.epochs;
    c.learning_rate = a.lr;
    c.initial_mask = a.initial_mask;
    c.mask_mode = parse_mask_mode(a.mask_mode);
    c.feature_granularity = parse_feature_granularity(a.feature_granularity);
    c.runner_up = parse_runner_up_mode(a.runner_up);
    if (a.binarize == "top-k") {
        auto pick = [&](const std::string& v, bool features, const char* flag) -> std::optional<std::size_t> {
            if (v != "auto") return parse_count(v, flag);
            return default_top_k(s.data.name, features);
        };
        if (uses_edges(c.mask_mode)) {
            c.top_k = pick(a.top_k, false, "--top-k");
            if (!c.top_k) throw ValidationError("no default K for dataset '" + s.data.name + "'; pass --top-k");
            o.set("top-k", std::to_string(*c.top_k));
        }
        if (uses_features(c.mask_mode)) {
            c.top_k_features = pick(a.top_k_features, true, "--top-k-features");
            if (!c.top_k_features) {
                throw ValidationError("no default feature K for dataset '" + s.data.name + "'; pass --top-k-features");
            }
            o.set("top-k-features", std::to_string(*c.top_k_features));
        }
    }
    c.validate();
    if (!a.instances.empty()) {
        for (const auto& item : split_list(a.instances)) s.targets.push_back(parse_count(item, "--instances"));
    } else {
        s.targets = select_targets(s.data, s.model, parse_target_set(a.targets));
    }
    if (s.targets.empty()) throw ValidationError("no instances to explain");
    if (a.jobs < 1) throw ValidationError("--jobs must be at least 1");
    return s;
}

struct ExplainedSet {
    std::vector<Instance> instances;
    std::vector<Explanation> explanations;
};

/// Explains every target with up to `jobs` workers. Each worker owns its
/// tapes; results land in per-target slots. `sink` runs inside the worker.
inline ExplainedSet explain_all(const ExplainSetup& s, std::size_t jobs,
                                const std::function<void(const Instance&, const Explanation&)>& sink = {}) {
    const std::size_t n = s.targets.size();
    ExplainedSet out;
    out.instances.resize(n);
    out.explanations.resize(n);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (std::size_t k = next++; k < n; k = next++) {
            try {
                out.instances[k] = make_instance(s.data, s.targets[k], s.model.arch.num_layers);
                out.explanations[k] = explain(s.model, out.instances[k], s.cfg);
                if (sink) sink(out.instances[k], out.explanations[k]);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = n;
            }
        }
    };
    const std::size_t workers = std::min(jobs, n);
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<std::string> args(argv, argv + argc);
    CLI::App app{"Counterfactual and factual explanations for graph classifiers", "cf2"};
    app.require_subcommand(1);
    std::string config_path;

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic or filtered dataset");
    OptionSet gen_o(gen);
    std::string gen_dataset, gen_out, gen_input;
    std::uint64_t gen_seed = 0;
    gen_o.add("dataset", gen_dataset, "ba-shapes, tree-cycles or mutag0")
        ->required()
        ->check(CLI::IsMember({"ba-shapes", "tree-cycles", "mutag0"}));
    gen_o.add("seed", gen_seed, "generator seed");
    gen_o.add("input", gen_input, "source molecule dataset for mutag0");
    gen_o.add("out", gen_out, "output dataset file")->required();

    // train
    auto* tr = app.add_subcommand("train", "train the base classifier");
    OptionSet tr_o(tr);
    std::string tr_data, tr_out, tr_prop = "sum_l2";
    std::size_t tr_layers = 3, tr_hidden = 16, tr_epochs = 3000;
    double tr_lr = 0.001;
    std::uint64_t tr_seed = 0;
    tr_o.add("data", tr_data, "dataset file")->required();
    tr_o.add("layers", tr_layers, "graph-convolution layers");
    tr_o.add("hidden", tr_hidden, "hidden width");
    tr_o.add("epochs", tr_epochs, "full-batch epochs");
    tr_o.add("lr", tr_lr, "learning rate");
    tr_o.add("seed", tr_seed, "weight-initialization seed");
    tr_o.add("propagation", tr_prop, "sum_l2 or normalized")->check(CLI::IsMember({"sum_l2", "normalized"}));
    tr_o.add("out", tr_out, "output model checkpoint")->required();

    // explain
    auto* ex = app.add_subcommand("explain", "optimize explanation masks for test instances");
    OptionSet ex_o(ex);
    ExplainArgs ex_a;
    std::string ex_out;
    add_explain_options(ex_o, ex_a, true);
    ex_o.add("out", ex_out, "output directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "score explanations");
    OptionSet ev_o(ev);
    std::string ev_model, ev_data, ev_dir, ev_metrics = "pn,ps,fns", ev_out;
    ev_o.add("model", ev_model, "trained model checkpoint")->required();
    ev_o.add("data", ev_data, "dataset file")->required();
    ev_o.add("explanations", ev_dir, "directory written by explain")->required();
    ev_o.add("metrics", ev_metrics, "comma-separated subset of pn,ps,fns,gt");
    ev_o.add("out", ev_out, "report path (.json; a .csv is written next to it)")->required();

    // sweep-alpha
    auto* sw = app.add_subcommand("sweep-alpha", "explain and score for several alpha values");
    OptionSet sw_o(sw);
    ExplainArgs sw_a;
    std::string sw_values = "0,0.2,0.4,0.6,0.8,1", sw_out;
    add_explain_options(sw_o, sw_a, false);
    sw_o.add("values", sw_values, "comma-separated alpha values");
    sw_o.add("out", sw_out, "output CSV")->required();

    // correlate
    auto* co = app.add_subcommand("correlate", "rank correlation between F_NS and ground-truth scores");
    OptionSet co_o(co);
    std::string co_reports, co_out;
    co_o.add("reports", co_reports, "comma-separated eval reports (.json)")->required();
    co_o.add("out", co_out, "output JSON (stdout only when empty)");

    for (CLI::App* sub : {gen, tr, ex, ev, sw, co}) sub->add_option("--config", config_path, "JSON file of flag values");

    try {
        args = merge_config(std::move(args));
        std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return validation;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return validation;
    }

    try {
        if (gen->parsed()) {
            Dataset d;
            if (gen_dataset == "ba-shapes") {
                d = generate_ba_shapes(gen_seed);
            } else if (gen_dataset == "tree-cycles") {
                d = generate_tree_cycles(gen_seed);
            } else {
                if (gen_input.empty()) throw ValidationError("mutag0 needs --input with the molecule dataset");
                d = filter_mutag0(load_dataset(gen_input));
            }
            save_dataset(d, gen_out);
            write_sidecar(gen_out, gen_o);
            out << "wrote " << gen_out << " (" << d.num_instances() << " instances)\n";
        } else if (tr->parsed()) {
            const Dataset d = load_dataset(tr_data);
            const TrainResult r = train(d, tr_layers, tr_hidden, {tr_epochs, tr_lr, tr_seed}, parse_propagation(tr_prop));
            save_model(r.model, tr_out);
            write_sidecar(tr_out, tr_o);
            out << "train_accuracy " << r.train_accuracy << "\ntest_accuracy " << r.test_accuracy << '\n';
        } else if (ex->parsed()) {
            const ExplainSetup s = resolve_explain(ex_a, ex_o);
            const fs::path dir(ex_out);
            fs::create_directories(dir);
            const ExplainedSet done = explain_all(s, ex_a.jobs, [&](const Instance& inst, const Explanation& e) {
                json_util::write_file(explanation_path(dir, inst.id), explanation_to_json(e, inst), 2);
            });
            json summary;
            double size = 0.0;
            summary["instances"] = s.targets;
            for (const auto& e : done.explanations) size += static_cast<double>(e.size);
            summary["mean_size"] = size / static_cast<double>(done.explanations.size());
            json_util::write_file(dir / "summary.json", summary, 2);
            json_util::write_file(dir / "config.json", ex_o.provenance(), 2);
            out << "explained " << s.targets.size() << " instances into " << dir.string() << '\n';
        } else if (ev->parsed()) {
            const Dataset d = load_dataset(ev_data);
            const GcnModel m = load_model(ev_model);
            bool with_gt = false;
            for (const auto& name : split_list(ev_metrics)) {
                if (name == "gt") {
                    with_gt = true;
                } else if (name != "pn" && name != "ps" && name != "fns") {
                    throw ValidationError("--metrics: unknown metric '" + name + "'");
                }
            }
            if (!fs::is_directory(ev_dir)) throw ValidationError("'" + ev_dir + "' is not a directory");
            std::vector<std::pair<std::size_t, fs::path>> files;
            for (const auto& entry : fs::directory_iterator(ev_dir)) {
                const std::string name = entry.path().filename().string();
                if (!name.starts_with("explanation_") || entry.path().extension() != ".json") continue;
                files.emplace_back(parse_count(name.substr(12, name.size() - 17), "explanation file name"), entry.path());
            }
            if (files.empty()) throw ValidationError("no explanation files in '" + ev_dir + "'");
            std::sort(files.begin(), files.end());
            std::vector<Instance> insts;
            std::vector<Explanation> exps;
            for (const auto& [id, path] : files) {
                insts.push_back(make_instance(d, id, m.arch.num_layers));
                try {
                    exps.push_back(explanation_from_json(json_util::read_file(path), insts.back()));
                } catch (const UsageError& e) {
                    throw ValidationError(path.string() + ": " + e.what());
                }
            }
            const EvalReport r = evaluate(m, insts, exps, with_gt);
            fs::path json_path(ev_out), csv_path(ev_out);
            if (json_path.extension() == ".csv") {
                json_path.replace_extension(".json");
            } else {
                csv_path.replace_extension(".csv");
            }
            json_util::write_file(json_path, r.to_json(), 2);
            write_text(csv_path, r.to_csv());
            write_sidecar(json_path, ev_o);
            out << "PN " << r.pn << "\nPS " << r.ps << "\nF_NS " << r.fns << "\nsize " << r.mean_size << '\n';
        } else if (sw->parsed()) {
            const auto alphas = parse_doubles(sw_values, "--values");
            ExplainSetup s = resolve_explain(sw_a, sw_o);
            std::ostringstream csv;
            csv.precision(17);
            csv << "alpha,pn,ps,fns,size,acc,pr,re,f1\n";
            for (double alpha : alphas) {
                s.cfg.alpha = alpha;
                s.cfg.validate();
                const ExplainedSet done = explain_all(s, sw_a.jobs);
                bool with_gt = true;
                for (const auto& inst : done.instances) with_gt = with_gt && !inst.gt_edges.empty();
                const EvalReport r = evaluate(s.model, done.instances, done.explanations, with_gt);
                csv << alpha << ',' << r.pn << ',' << r.ps << ',' << r.fns << ',' << r.mean_size;
                if (r.gt) {
                    csv << ',' << r.gt->acc << ',' << r.gt->pr << ',' << r.gt->re << ',' << r.gt->f1 << '\n';
                } else {
                    csv << ",,,,\n";
                }
                out << "alpha " << alpha << " F_NS " << r.fns << '\n';
            }
            write_text(sw_out, csv.str());
            write_sidecar(sw_out, sw_o);
        } else if (co->parsed()) {
            const auto paths = split_list(co_reports);
            if (paths.size() < 2) throw ValidationError("--reports needs at least two reports");
            std::vector<double> fns, f1, acc;
            for (const auto& p : paths) {
                const EvalReport r = report_from_json(json_util::read_file(p));
                if (!r.gt) throw ValidationError(p + ": report has no ground-truth scores (evaluate with --metrics gt)");
                fns.push_back(r.fns);
                f1.push_back(r.gt->f1);
                acc.push_back(r.gt->acc);
            }
            json j;
            j["reports"] = paths;
            j["fns_f1"] = {{"kendall_tau", kendall_tau(fns, f1)}, {"spearman_rho", spearman_rho(fns, f1)}};
            j["fns_acc"] = {{"kendall_tau", kendall_tau(fns, acc)}, {"spearman_rho", spearman_rho(fns, acc)}};
            if (!co_out.empty()) {
                json_util::write_file(co_out, j, 2);
                write_sidecar(co_out, co_o);
            }
            out << j.dump(2) << '\n';
        }
        return ok;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return validation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return runtime;
    }
}

}  // namespace cf2::cli
