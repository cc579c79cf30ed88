#pragma once

#include "core.hpp"
#include "evaluation.hpp"
#include "experiments.hpp"
#include "io.hpp"
#include "search.hpp"
#include "selection.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <ostream>
#include <string>

namespace projpred::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline json vector_json(const Vector& v)
{
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Vector vector_from_json(const json& a, const std::string& what)
{
    if (!a.is_array()) fail_validation(what + ": expected an array");
    Vector v(static_cast<Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) fail_validation(what + ": expected numbers");
        v(static_cast<Index>(i)) = a[i].get<double>();
    }
    return v;
}

inline json matrix_json(const Matrix& m)
{
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) rows.push_back(vector_json(m.row(r).transpose()));
    return rows;
}

inline void write_json(const std::string& path, const json& j)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_validation("cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
}

inline json read_json(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_validation("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail_validation(path + ": invalid JSON (" + e.what() + ")");
    }
}

// ---------------------------------------------------------------------------
// Solution path
// ---------------------------------------------------------------------------

inline json path_json(const SolutionPath& path, const Dataset& data)
{
    json names = json::array(), idx = json::array();
    for (Index j : path.order) {
        names.push_back(data.predictor_names()[static_cast<std::size_t>(j)]);
        idx.push_back(j + 1);
    }
    return {{"schema_version", kSchemaVersion},
            {"method", std::string(to_string(path.method))},
            {"order", names},
            {"order_index", idx},
            {"kl_at_size", vector_json(path.kl_at_size)},
            {"projection_count", path.projection_count}};
}

/// Reads a path; predictor names are resolved against `data`.
inline SolutionPath path_from_json(const json& j, const Dataset& data)
{
    SolutionPath path;
    try {
        path.method = parse_search_method(j.at("method").get<std::string>());
        const auto& names = data.predictor_names();
        for (const auto& entry : j.at("order")) {
            const auto name = entry.get<std::string>();
            const auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end()) fail_validation("path: unknown predictor '" + name + "'");
            path.order.push_back(static_cast<Index>(it - names.begin()));
        }
        path.kl_at_size = vector_from_json(j.at("kl_at_size"), "path.kl_at_size");
        if (j.contains("projection_count")) path.projection_count = j.at("projection_count").get<std::uint64_t>();
    } catch (const json::exception& e) {
        fail_validation(std::string("path: malformed JSON (") + e.what() + ")");
    }
    if (path.kl_at_size.size() != path.max_size() + 1)
        fail_validation("path: kl_at_size must have one entry more than order");
    Submodel(path.order).check_against(data);
    return path;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Count of observations with k-hat above threshold that enter the utilities.
inline Index khat_bad_count(const PathEvaluation& eval)
{
    return eval.diagnostics ? eval.diagnostics->count_bad() : 0;
}

inline void write_evaluation_csv(std::ostream& out, const PathEvaluation& eval)
{
    out << "size,delta_elpd,se,khat_bad_count\n";
    const Index bad = khat_bad_count(eval);
    for (Index k = 0; k < eval.num_sizes(); ++k)
        out << k << ',' << format_double(eval.delta_elpd(k)) << ',' << format_double(eval.se_delta(k)) << ',' << bad
            << '\n';
}

inline json evaluation_json(const PathEvaluation& eval)
{
    json j = {{"schema_version", kSchemaVersion},
              {"scheme", std::string(to_string(eval.scheme))},
              {"num_predictors", eval.num_predictors},
              {"delta_elpd", vector_json(eval.delta_elpd)},
              {"se_delta", vector_json(eval.se_delta)},
              {"elpd", vector_json(eval.elpd)},
              {"reference_elpd", eval.reference_elpd},
              {"test_counts", eval.test_counts},
              {"projection_count", eval.projection_count}};
    if (eval.diagnostics) {
        j["khat_threshold"] = eval.diagnostics->threshold;
        j["khat_bad_count"] = eval.diagnostics->count_bad();
        j["khat"] = vector_json(eval.diagnostics->khat_per_observation);
    }
    return j;
}

/// Rebuilds the per-size summary (pointwise matrices are not stored).
inline PathEvaluation evaluation_from_json(const json& j)
{
    PathEvaluation eval;
    try {
        eval.delta_elpd = vector_from_json(j.at("delta_elpd"), "eval.delta_elpd");
        eval.se_delta = vector_from_json(j.at("se_delta"), "eval.se_delta");
        if (j.contains("elpd")) eval.elpd = vector_from_json(j.at("elpd"), "eval.elpd");
        if (j.contains("reference_elpd")) eval.reference_elpd = j.at("reference_elpd").get<double>();
        if (j.contains("num_predictors")) eval.num_predictors = j.at("num_predictors").get<Index>();
        const auto scheme = j.value("scheme", std::string("full-data+psis-loo"));
        eval.scheme = scheme == "kfold-with-search" ? EvaluationScheme::kfold_with_search
                      : scheme == "kfold"           ? EvaluationScheme::kfold
                                                    : EvaluationScheme::fulldata_psis_loo;
    } catch (const json::exception& e) {
        fail_validation(std::string("eval: malformed JSON (") + e.what() + ")");
    }
    if (eval.delta_elpd.size() == 0 || eval.se_delta.size() != eval.delta_elpd.size())
        fail_validation("eval: delta_elpd and se_delta must be non-empty and of equal length");
    if ((eval.se_delta.array() < 0.0).any()) fail_validation("eval: negative standard error");
    eval.pointwise.resize(eval.delta_elpd.size(), 0);
    return eval;
}

// ---------------------------------------------------------------------------
// Selection, distances, dendrogram
// ---------------------------------------------------------------------------

inline json dendrogram_node_json(const Dendrogram& tree, Index node, const std::vector<std::string>& names)
{
    if (node < tree.num_leaves)
        return {{"name", names[static_cast<std::size_t>(node)]}, {"index", node + 1}, {"height", 0.0}};
    const auto& m = tree.merges[static_cast<std::size_t>(node - tree.num_leaves)];
    return {{"height", m.height},
            {"size", m.size},
            {"children", json::array({dendrogram_node_json(tree, m.left, names), dendrogram_node_json(tree, m.right, names)})}};
}

inline json dendrogram_json(const Dendrogram& tree, const std::vector<std::string>& names)
{
    json merges = json::array();
    for (const auto& m : tree.merges) merges.push_back({m.left, m.right, m.height, m.size});
    return {{"schema_version", kSchemaVersion},
            {"linkage", "complete"},
            {"tree", dendrogram_node_json(tree, tree.root(), names)},
            {"merges", merges}};
}

inline void write_distance_csv(std::ostream& out, const Matrix& d, const std::vector<std::string>& names)
{
    out << "predictor";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (Index a = 0; a < d.rows(); ++a) {
        out << names[static_cast<std::size_t>(a)];
        for (Index b = 0; b < d.cols(); ++b) out << ',' << format_double(d(a, b));
        out << '\n';
    }
}

inline json selection_json(const SelectionReport& r, const std::vector<std::string>& selected_names)
{
    json j = {{"schema_version", kSchemaVersion},
              {"selected_size", r.selected_size},
              {"selected_predictors", selected_names},
              {"rule", std::string(to_string(r.rule))},
              {"smoothed", r.smoothed},
              {"fallback_used", r.fallback_used},
              {"delta_elpd", vector_json(r.delta_elpd)},
              {"se_delta", vector_json(r.se_delta)}};
    if (r.smoothed_curve) {
        j["smoothed_curve"] = {{"normalized", vector_json(r.smoothed_curve->normalized)},
                               {"elpd_scale", vector_json(r.smoothed_curve->elpd_scale)},
                               {"drop_prefix", r.smoothed_curve->drop_prefix}};
    }
    return j;
}

inline void write_projection_csv(std::ostream& out, const ProjectedPosterior& proj, const Dataset& data)
{
    out << "weight,b0";
    for (Index j : proj.submodel.indices()) out << ',' << data.predictor_names()[static_cast<std::size_t>(j)];
    if (proj.dispersion) out << ",sigma";
    out << '\n';
    for (Index c = 0; c < proj.size(); ++c) {
        out << format_double(proj.weights(c));
        for (Index k = 0; k < proj.coefficients.cols(); ++k) out << ',' << format_double(proj.coefficients(c, k));
        if (proj.dispersion) out << ',' << format_double((*proj.dispersion)(c));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

inline json truth_json(const SimulatedData& sim, const DgpConfig& config)
{
    return {{"schema_version", kSchemaVersion},
            {"dgp", std::string(to_string(config.kind))},
            {"n", sim.data.n()},
            {"p", sim.data.p()},
            {"rho", config.rho},
            {"sigma", sim.sigma},
            {"intercept", sim.intercept},
            {"weights", vector_json(sim.weights)},
            {"population_r2", sim.population_r2},
            {"seed", config.seed}};
}

inline json summary_json(const MarginalSummary& s) { return {{"mean", s.mean}, {"sd", s.sd}}; }

inline json dispersion_demo_json(const DispersionDemoReport& r)
{
    return {{"schema_version", kSchemaVersion},
            {"study", "dispersion"},
            {"num_draws", r.num_draws},
            {"fraction_inflated", r.fraction_inflated},
            {"beta1", {{"reference", summary_json(r.beta1_reference)}, {"projected", summary_json(r.beta1_projected)}}},
            {"beta2", {{"reference", summary_json(r.beta2_reference)}, {"projected", summary_json(r.beta2_projected)}}},
            {"sigma_reference", summary_json(summarize(r.sigma_reference))},
            {"sigma_projected", summary_json(summarize(r.sigma_projected))}};
}

inline json sbc_json(const SbcResult& r, const SbcConfig& config)
{
    json failures = json::array();
    for (std::size_t i = 0; i < r.replications.size(); ++i)
        if (!r.replications[i].ok) failures.push_back({{"replication", i + 1}, {"error", r.replications[i].error}});
    return {{"schema_version", kSchemaVersion},
            {"study", "sbc"},
            {"requested", r.requested},
            {"replications", static_cast<Index>(r.ranks.size())},
            {"failures", r.failures},
            {"failed", failures},
            {"num_levels", r.num_levels},
            {"ridge_multiplier", config.inference_ridge_multiplier},
            {"alpha", r.band.alpha},
            {"gamma", r.band.gamma},
            {"passed", r.passed},
            {"seed", config.seed}};
}

inline void write_sbc_ranks_csv(std::ostream& out, const SbcResult& r)
{
    out << "replication,rank,normalized_rank,selected_size,true_treatment\n";
    for (std::size_t i = 0; i < r.replications.size(); ++i) {
        const auto& rep = r.replications[i];
        if (!rep.ok) continue;
        out << i + 1 << ',' << rep.rank << ',' << format_double(rep.normalized_rank) << ',' << rep.selected_size << ','
            << format_double(rep.true_treatment) << '\n';
    }
}

}  // namespace projpred::io
