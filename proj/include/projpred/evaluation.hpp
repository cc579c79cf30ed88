#pragma once

#include "core.hpp"
#include "log.hpp"
#include "parallel.hpp"
#include "projection.hpp"
#include "psis.hpp"
#include "reference.hpp"
#include "search.hpp"

#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace projpred {

struct PsisDiagnostics {
    Vector khat_per_observation;
    double threshold = 0.7;

    Index count_bad() const
    {
        Index c = 0;
        for (Index i = 0; i < khat_per_observation.size(); ++i)
            if (!(khat_per_observation(i) <= threshold)) ++c;
        return c;
    }
};

enum class EvaluationScheme { fulldata_psis_loo, kfold, kfold_with_search };

inline std::string_view to_string(EvaluationScheme s)
{
    switch (s) {
    case EvaluationScheme::fulldata_psis_loo: return "full-data+psis-loo";
    case EvaluationScheme::kfold: return "kfold";
    case EvaluationScheme::kfold_with_search: return "kfold-with-search";
    }
    return "unknown";
}

/// Pointwise utilities u_k^(i) along a path and the derived elpd differences.
struct PathEvaluation {
    Matrix pointwise;            // (sizes) x n
    Vector reference_pointwise;  // n
    Vector delta_elpd;           // per size: sum_i (u_k - u_*)
    Vector se_delta;             // per size: sqrt(n) * sd_i(u_k - u_*)
    Vector elpd;                 // per size: sum_i u_k
    double reference_elpd = 0.0;
    EvaluationScheme scheme = EvaluationScheme::fulldata_psis_loo;
    std::optional<PsisDiagnostics> diagnostics;
    Index num_predictors = 0;
    std::vector<Index> order;           // evaluated predictor order
    std::vector<Index> test_counts;     // per size, observations contributing
    std::uint64_t projection_count = 0;

    Index num_sizes() const { return pointwise.rows(); }
    Index max_size() const { return num_sizes() - 1; }
};

/// Recomputes elpd, delta and se from the pointwise matrices. Observations
/// with non-finite utilities (skipped folds) are left out.
inline void finalize_evaluation(PathEvaluation& eval)
{
    const Index sizes = eval.pointwise.rows();
    const Index n = eval.pointwise.cols();
    eval.delta_elpd.resize(sizes);
    eval.se_delta.resize(sizes);
    eval.elpd.resize(sizes);
    eval.test_counts.assign(static_cast<std::size_t>(sizes), 0);
    std::vector<bool> ok(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        bool good = std::isfinite(eval.reference_pointwise(i));
        for (Index k = 0; k < sizes && good; ++k) good = std::isfinite(eval.pointwise(k, i));
        ok[static_cast<std::size_t>(i)] = good;
    }
    eval.reference_elpd = 0.0;
    for (Index i = 0; i < n; ++i)
        if (ok[static_cast<std::size_t>(i)]) eval.reference_elpd += eval.reference_pointwise(i);
    for (Index k = 0; k < sizes; ++k) {
        double sum = 0.0, elpd = 0.0;
        Index m = 0;
        for (Index i = 0; i < n; ++i) {
            if (!ok[static_cast<std::size_t>(i)]) continue;
            sum += eval.pointwise(k, i) - eval.reference_pointwise(i);
            elpd += eval.pointwise(k, i);
            ++m;
        }
        double ss = 0.0;
        const double mean = m > 0 ? sum / static_cast<double>(m) : 0.0;
        for (Index i = 0; i < n; ++i) {
            if (!ok[static_cast<std::size_t>(i)]) continue;
            const double d = eval.pointwise(k, i) - eval.reference_pointwise(i) - mean;
            ss += d * d;
        }
        eval.delta_elpd(k) = sum;
        eval.elpd(k) = elpd;
        eval.se_delta(k) = m > 1 ? std::sqrt(static_cast<double>(m)) * std::sqrt(ss / static_cast<double>(m - 1)) : 0.0;
        eval.test_counts[static_cast<std::size_t>(k)] = m;
    }
}

// ---------------------------------------------------------------------------
// Importance sampling LOO
// ---------------------------------------------------------------------------

/// Raw LOO importance ratios r_s ∝ w_s / p(y_i | theta_s), normalized to sum to 1.
inline Vector importance_ratios(const PosteriorDraws& draws, const Dataset& data, Index i)
{
    if (i < 0 || i >= data.n()) fail_validation("importance_ratios: observation index out of range");
    const Dataset one = data.rows(std::span<const Index>(&i, 1));
    const Matrix ll = pointwise_log_density(one, draws);
    Vector lr = draws.weights().array().log() - ll.col(0).array();
    lr.array() -= lr.maxCoeff();
    Vector r = lr.array().exp();
    return r / r.sum();
}

/// PSIS-LOO pointwise elpd of a model whose S x n log-densities are given;
/// importance ratios always come from the reference draws.
inline std::pair<Vector, PsisDiagnostics> psis_loo_elpd(const Matrix& model_loglik, const PosteriorDraws& ref_draws,
                                                        const Dataset& data)
{
    if (model_loglik.rows() != ref_draws.size() || model_loglik.cols() != data.n())
        fail_validation("psis_loo_elpd: model log-density matrix must be S x n");
    const PsisWeights w = psis_weights(pointwise_log_density(data, ref_draws), ref_draws.weights());
    PsisDiagnostics diag{w.khat, 0.7};
    return {psis_loo_pointwise(model_loglik, w), diag};
}

struct FullDataEvalConfig {
    Index eval_draws = 400;
    std::uint64_t seed = 1;
    double khat_threshold = 0.7;
    unsigned jobs = 1;
};

/// Re-projects every prefix of `path` with thinned draws and scores it by
/// PSIS-LOO using reference-model importance ratios.
inline PathEvaluation evaluate_path_fulldata(const SolutionPath& path, const Dataset& data,
                                             const PosteriorDraws& ref_draws, const FullDataEvalConfig& config = {})
{
    const PosteriorDraws thinned =
        thin_draws(ref_draws, std::min(config.eval_draws, ref_draws.size()), derive_seed(config.seed, 11));
    const Matrix ref_ll = pointwise_log_density(data, thinned);
    const PsisWeights weights = psis_weights(ref_ll, thinned.weights());

    PathEvaluation eval;
    eval.scheme = EvaluationScheme::fulldata_psis_loo;
    eval.num_predictors = data.p();
    eval.order = path.order;
    eval.reference_pointwise = psis_loo_pointwise(ref_ll, weights);
    eval.diagnostics = PsisDiagnostics{weights.khat, config.khat_threshold};
    const Index sizes = path.max_size() + 1;
    eval.pointwise.resize(sizes, data.n());
    parallel_for(static_cast<std::size_t>(sizes), config.jobs, [&](std::size_t k) {
        const auto proj = project_drawwise(data, path.prefix(static_cast<Index>(k)), thinned);
        eval.pointwise.row(static_cast<Index>(k)) =
            psis_loo_pointwise(projected_pointwise_log_density(proj, data), weights).transpose();
    });
    eval.projection_count = static_cast<std::uint64_t>(sizes);
    if (eval.diagnostics->count_bad() > 0)
        warn(std::to_string(eval.diagnostics->count_bad()) + " observations have Pareto k-hat above " +
             std::to_string(config.khat_threshold));
    finalize_evaluation(eval);
    return eval;
}

// ---------------------------------------------------------------------------
// Bulge diagnostic
// ---------------------------------------------------------------------------

struct BulgeResult {
    bool flagged = false;
    Index argmax_size = 0;  // most over-optimistic size (truncation point)
};

/// Flags "significant" over-optimism: some size below the full model whose
/// delta elpd exceeds zero by more than one standard error.
inline BulgeResult bulge_diagnostic(const PathEvaluation& eval)
{
    BulgeResult r;
    const Index sizes = eval.delta_elpd.size();
    for (Index k = 0; k < sizes; ++k) {
        if (eval.delta_elpd(k) > eval.delta_elpd(r.argmax_size)) r.argmax_size = k;
        if (k < eval.num_predictors && eval.delta_elpd(k) - eval.se_delta(k) > 0.0) r.flagged = true;
    }
    return r;
}

/// Truncation size for CV-with-search when a bulge is present.
inline std::optional<Index> detect_bulge(const PathEvaluation& eval)
{
    const auto r = bulge_diagnostic(eval);
    if (!r.flagged) return std::nullopt;
    return r.argmax_size;
}

// ---------------------------------------------------------------------------
// K-fold CV including the search
// ---------------------------------------------------------------------------

/// Produces reference draws for a training set.
using ReferenceSource = std::function<PosteriorDraws(const Dataset& train, std::uint64_t seed)>;

inline ReferenceSource conjugate_reference(ConjugatePrior prior, Index num_draws)
{
    return [prior, num_draws](const Dataset& train, std::uint64_t seed) {
        return fit_conjugate_gaussian(train, prior, num_draws, seed);
    };
}

struct KFoldConfig {
    Index folds = 10;
    SearchConfig search;
    Index eval_draws = 400;
    std::vector<Index> forced;  // predictors prepended to every fold path
    std::uint64_t seed = 1;
    unsigned jobs = 1;
};

struct KFoldResult {
    PathEvaluation evaluation;
    std::vector<SolutionPath> fold_paths;
    std::vector<Index> fold_of;  // fold label per observation
    Index effective_folds = 0;
};

/// Seeded random permutation dealt round-robin into K near-equal folds.
inline std::vector<Index> assign_folds(Index n, Index folds, std::uint64_t seed)
{
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Index> fold(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])] = j % folds;
    return fold;
}

/// Scores one fold: refit reference on train, search, re-project the prefixes
/// with thinned draws and evaluate the held-out rows.
struct FoldOutcome {
    SolutionPath path;
    Matrix pointwise;  // sizes x test
    Vector reference;  // test
    std::uint64_t projections = 0;
};

inline FoldOutcome run_fold(const Dataset& train, const Dataset& test, const ReferenceSource& source,
                            const KFoldConfig& config, std::uint64_t fold_seed)
{
    FoldOutcome out;
    const PosteriorDraws draws = source(train, derive_seed(fold_seed, 1));
    SearchConfig sc = config.search;
    sc.seed = derive_seed(fold_seed, 2);
    sc.jobs = 1;
    sc.p_max = std::min(sc.resolved_p_max(train.p()), train.p());
    const PosteriorDraws thinned =
        thin_draws(draws, std::min(config.eval_draws, draws.size()), derive_seed(fold_seed, 3));
    out.path = run_search(train, draws, sc);
    if (!config.forced.empty()) {
        out.path = with_forced_prefix(out.path, config.forced, train, pooled_draw(draws));
    }
    out.projections = out.path.projection_count;

    const Index sizes = out.path.max_size() + 1;
    out.pointwise.resize(sizes, test.n());
    for (Index k = 0; k < sizes; ++k) {
        const auto proj = project_drawwise(train, out.path.prefix(k), thinned);
        ++out.projections;
        const Matrix ll = projected_pointwise_log_density(proj, test);
        for (Index i = 0; i < test.n(); ++i) out.pointwise(k, i) = log_sum_exp(ll.col(i), proj.weights);
    }
    const Matrix ref_ll = pointwise_log_density(test, draws);
    out.reference.resize(test.n());
    for (Index i = 0; i < test.n(); ++i) out.reference(i) = log_sum_exp(ref_ll.col(i), draws.weights());
    return out;
}

inline KFoldResult kfold_cv_with_search(const Dataset& data, const ReferenceSource& source, const KFoldConfig& config)
{
    if (config.folds < 2 || config.folds > data.n())
        fail_validation("kfold: number of folds must be in [2, n]");
    config.search.validate(data.p());
    KFoldResult result;
    result.fold_of = assign_folds(data.n(), config.folds, derive_seed(config.seed, 21));

    std::vector<std::vector<Index>> test_rows(static_cast<std::size_t>(config.folds));
    std::vector<std::vector<Index>> train_rows(static_cast<std::size_t>(config.folds));
    for (Index i = 0; i < data.n(); ++i)
        for (Index f = 0; f < config.folds; ++f)
            (f == result.fold_of[static_cast<std::size_t>(i)] ? test_rows : train_rows)[static_cast<std::size_t>(f)]
                .push_back(i);

    std::vector<std::optional<FoldOutcome>> outcomes(static_cast<std::size_t>(config.folds));
    std::vector<std::string> errors(static_cast<std::size_t>(config.folds));
    parallel_for(static_cast<std::size_t>(config.folds), config.jobs, [&](std::size_t f) {
        try {
            const Dataset train = data.rows(train_rows[f]);
            const Dataset test = data.rows(test_rows[f]);
            outcomes[f] = run_fold(train, test, source, config, derive_seed(config.seed, 100 + f));
        } catch (const Error& e) {
            errors[f] = e.what();
        }
    });

    Index sizes = -1;
    for (std::size_t f = 0; f < outcomes.size(); ++f) {
        if (!outcomes[f]) {
            warn("kfold: fold " + std::to_string(f + 1) + " skipped (" + errors[f] + "); effective K reduced");
            continue;
        }
        const Index s = outcomes[f]->pointwise.rows();
        sizes = sizes < 0 ? s : std::min(sizes, s);
    }
    if (sizes < 0) fail_numerical("kfold: every fold failed");

    PathEvaluation& eval = result.evaluation;
    eval.scheme = EvaluationScheme::kfold_with_search;
    eval.num_predictors = data.p();
    eval.pointwise = Matrix::Constant(sizes, data.n(), std::numeric_limits<double>::quiet_NaN());
    eval.reference_pointwise = Vector::Constant(data.n(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t f = 0; f < outcomes.size(); ++f) {
        if (!outcomes[f]) continue;
        ++result.effective_folds;
        const auto& o = *outcomes[f];
        for (std::size_t t = 0; t < test_rows[f].size(); ++t) {
            const Index i = test_rows[f][t];
            eval.pointwise.col(i) = o.pointwise.col(static_cast<Index>(t)).head(sizes);
            eval.reference_pointwise(i) = o.reference(static_cast<Index>(t));
        }
        eval.projection_count += o.projections;
        result.fold_paths.push_back(o.path);
    }
    finalize_evaluation(eval);
    return result;
}

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

struct CostEstimate {
    double t_search = 0.0;
    double t_eval = 0.0;
    double t_total = 0.0;
};

/// Serial-time estimates for CV including the search.
inline CostEstimate estimate_costs(double folds, double p, double clusters, double eval_clusters, double t_proj)
{
    if (!(clusters > 0.0)) fail_validation("estimate_costs: cluster count must be positive");
    CostEstimate c;
    c.t_search = folds * (p * (p + 1.0) / 2.0 + 1.0) * t_proj;
    c.t_eval = folds * (p + 1.0) * (eval_clusters / clusters) * t_proj;
    c.t_total = c.t_search + c.t_eval;
    return c;
}

}  // namespace projpred
