#pragma once

#include "core.hpp"
#include "log.hpp"
#include "parallel.hpp"
#include "projection.hpp"
#include "reference.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace projpred {

enum class SearchMethod { forward, l1 };

inline std::string_view to_string(SearchMethod m) { return m == SearchMethod::forward ? "forward" : "l1"; }

inline SearchMethod parse_search_method(std::string_view s)
{
    if (s == "forward") return SearchMethod::forward;
    if (s == "l1" || s == "lasso") return SearchMethod::l1;
    fail_validation("unknown search method '" + std::string(s) + "'");
}

struct SearchConfig {
    SearchMethod method = SearchMethod::forward;
    Index p_max = 0;  // 0 means "all predictors"
    Index clusters = 20;
    Index lambda_grid_size = 100;
    double lambda_min_ratio = 1e-3;
    std::uint64_t seed = 1;
    unsigned jobs = 1;

    Index resolved_p_max(Index p) const { return p_max <= 0 ? p : p_max; }

    void validate(Index p) const
    {
        if (p_max < 0 || p_max > p)
            fail_validation("search: p_max " + std::to_string(p_max) + " outside (0, " + std::to_string(p) + "]");
        if (clusters < 1) fail_validation("search: cluster count must be at least 1");
        if (lambda_grid_size < 2) fail_validation("search: lambda grid needs at least two points");
    }
};

/// Predictor ordering plus the KL divergence of each nested prefix
/// (index 0 = intercept-only).
struct SolutionPath {
    SearchMethod method = SearchMethod::forward;
    std::vector<Index> order;
    Vector kl_at_size;
    std::uint64_t projection_count = 0;

    Index max_size() const { return static_cast<Index>(order.size()); }

    Submodel prefix(Index k) const
    {
        return Submodel(std::vector<Index>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)));
    }
};

namespace detail {

struct ReferenceFits {
    Matrix mu;  // C x n
    std::optional<Vector> dispersion;
    Vector weights;
};

inline ReferenceFits reference_fits(const Dataset& data, const PosteriorDraws& draws)
{
    return {fitted_means(data, draws), draws.dispersion(), draws.weights()};
}

inline double project_kl(const Dataset& data, const Submodel& sub, const ReferenceFits& ref, std::uint64_t& count)
{
    const SubmodelProjector projector(data, sub);
    ++count;
    return project_means(projector, ref.mu, ref.dispersion, ref.weights).kl_total;
}

}  // namespace detail

/// Greedy forward search: starting from the intercept-only model, add the
/// candidate whose clustered projection has the smallest KL; ties go to the
/// lowest predictor index.
inline SolutionPath forward_search(const Dataset& data, const ClusteredDraws& clusters, const SearchConfig& config)
{
    config.validate(data.p());
    const Index p = data.p();
    const Index p_max = config.resolved_p_max(p);
    const auto ref = detail::reference_fits(data, clusters.centroids);

    SolutionPath path;
    path.method = SearchMethod::forward;
    path.kl_at_size.resize(p_max + 1);
    path.kl_at_size(0) = detail::project_kl(data, Submodel{}, ref, path.projection_count);

    std::vector<bool> used(static_cast<std::size_t>(p), false);
    for (Index k = 1; k <= p_max; ++k) {
        std::vector<Index> candidates;
        for (Index j = 0; j < p; ++j)
            if (!used[static_cast<std::size_t>(j)]) candidates.push_back(j);
        std::vector<double> kl(candidates.size(), std::numeric_limits<double>::quiet_NaN());
        std::vector<std::string> errors(candidates.size());
        parallel_for(candidates.size(), config.jobs, [&](std::size_t c) {
            std::vector<Index> idx = path.order;
            idx.push_back(candidates[c]);
            try {
                const SubmodelProjector projector(data, Submodel(std::move(idx)));
                kl[c] = project_means(projector, ref.mu, ref.dispersion, ref.weights).kl_total;
            } catch (const Error& e) {
                errors[c] = e.what();
            }
        });
        path.projection_count += candidates.size();

        Index best = -1;
        double best_kl = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < candidates.size(); ++c) {
            if (!errors[c].empty()) {
                warn("forward search: skipping " + data.predictor_names()[static_cast<std::size_t>(candidates[c])] +
                     " at size " + std::to_string(k) + ": " + errors[c]);
                continue;
            }
            if (kl[c] < best_kl) {
                best_kl = kl[c];
                best = candidates[c];
            }
        }
        if (best < 0)
            fail_numerical("forward search: every candidate projection failed at size " + std::to_string(k));
        used[static_cast<std::size_t>(best)] = true;
        path.order.push_back(best);
        path.kl_at_size(k) = best_kl;
    }
    return path;
}

/// KL of every prefix of `order`, projected with the given reference draws.
inline Vector prefix_kl(const Dataset& data, const PosteriorDraws& ref_draws, const std::vector<Index>& order,
                        std::uint64_t& count)
{
    const auto ref = detail::reference_fits(data, ref_draws);
    Vector kl(static_cast<Index>(order.size()) + 1);
    for (std::size_t k = 0; k <= order.size(); ++k)
        kl(static_cast<Index>(k)) = detail::project_kl(
            data, Submodel(std::vector<Index>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k))), ref,
            count);
    return kl;
}

namespace detail {

struct Standardized {
    Matrix z;  // centred, unit population sd (constant columns left at zero)
    Vector mean;
    Vector scale;
};

inline Standardized standardize(const Matrix& x)
{
    Standardized s;
    const double n = static_cast<double>(x.rows());
    s.mean = x.colwise().mean().transpose();
    s.z = x.rowwise() - s.mean.transpose();
    s.scale.resize(x.cols());
    for (Index j = 0; j < x.cols(); ++j) {
        const double sd = std::sqrt(s.z.col(j).squaredNorm() / n);
        s.scale(j) = sd;
        if (sd > 1e-12 * (1.0 + std::abs(s.mean(j))))
            s.z.col(j) /= sd;
        else
            s.z.col(j).setZero();
    }
    return s;
}

inline double soft_threshold(double v, double lambda)
{
    if (v > lambda) return v - lambda;
    if (v < -lambda) return v + lambda;
    return 0.0;
}

}  // namespace detail

/// Lasso path of the single-point reference fit, in standardized predictor
/// space. Coefficients are returned on the original scale.
struct LassoPath {
    Vector lambdas;
    Matrix coefficients;  // grid x p, original scale
    Vector intercepts;
    std::vector<Index> entry_order;  // first-entry order (ties by |coef|, then index)
    Vector final_gradient;           // |z_j' W r| / n at the smallest lambda
};

inline LassoPath lasso_path(const Dataset& data, const Eigen::Ref<const Vector>& target, Index grid_size,
                            double min_ratio)
{
    const Index n = data.n();
    const Index p = data.p();
    const double dn = static_cast<double>(n);
    const Family family = data.family();
    const auto st = detail::standardize(data.x());
    const Matrix& z = st.z;

    // For canonical GLMs the intercept-only fit matches the mean of the target.
    const double t_mean = target.mean();
    double b0 = family.kind == FamilyKind::gaussian ? t_mean
                : family.kind == FamilyKind::bernoulli
                    ? std::log(std::clamp(t_mean, kProbClamp, 1.0 - kProbClamp) /
                               (1.0 - std::clamp(t_mean, kProbClamp, 1.0 - kProbClamp)))
                    : std::log(std::max(t_mean, kProbClamp));
    const Vector grad0 = (z.transpose() * (target.array() - t_mean).matrix()) / dn;
    const double lambda_max = grad0.cwiseAbs().maxCoeff();

    LassoPath out;
    out.lambdas.resize(grid_size);
    for (Index g = 0; g < grid_size; ++g) {
        const double frac = static_cast<double>(g) / static_cast<double>(grid_size - 1);
        out.lambdas(g) = lambda_max * std::pow(min_ratio, frac);
    }
    out.coefficients = Matrix::Zero(grid_size, p);
    out.intercepts = Vector::Zero(grid_size);

    Vector beta = Vector::Zero(p);
    std::vector<bool> entered(static_cast<std::size_t>(p), false);
    Vector w = Vector::Ones(n);
    Vector working(n);
    Vector eta = Vector::Constant(n, b0);

    auto update_weights = [&] {
        for (Index i = 0; i < n; ++i) {
            const double mu = mean_from_eta(family, eta(i));
            double wi = 1.0;
            if (family.kind == FamilyKind::bernoulli) wi = mu * (1.0 - mu);
            if (family.kind == FamilyKind::poisson) wi = mu;
            wi = std::max(wi, 1e-12);
            w(i) = wi;
            working(i) = eta(i) + (target(i) - mu) / wi;
        }
    };

    for (Index g = 0; g < grid_size && lambda_max > 0.0; ++g) {
        const double lambda = out.lambdas(g);
        const int outer_max = family.kind == FamilyKind::gaussian ? 1 : 50;
        for (int outer = 0; outer < outer_max; ++outer) {
            if (family.kind == FamilyKind::gaussian)
                working = target;
            else
                update_weights();
            const Vector beta_outer = beta;
            Vector r = working - z * beta - Vector::Constant(n, b0);
            const Vector v = (z.array().square().colwise() * w.array()).colwise().sum().transpose() / dn;
            const double wsum = w.sum();
            for (int sweep = 0; sweep < 10000; ++sweep) {
                double max_change = 0.0;
                const double db0 = w.dot(r) / wsum;
                b0 += db0;
                r.array() -= db0;
                max_change = std::max(max_change, std::abs(db0));
                for (Index j = 0; j < p; ++j) {
                    if (v(j) <= 0.0) continue;
                    const double grad = (z.col(j).array() * w.array() * r.array()).sum() / dn;
                    const double updated = detail::soft_threshold(grad + v(j) * beta(j), lambda) / v(j);
                    const double diff = updated - beta(j);
                    if (diff != 0.0) {
                        r -= diff * z.col(j);
                        beta(j) = updated;
                        max_change = std::max(max_change, std::abs(diff) * std::sqrt(v(j)));
                    }
                }
                if (max_change < 1e-10) break;
            }
            eta = z * beta + Vector::Constant(n, b0);
            if (family.kind == FamilyKind::gaussian) break;
            if ((beta - beta_outer).cwiseAbs().maxCoeff() < 1e-8) break;
        }

        std::vector<Index> fresh;
        for (Index j = 0; j < p; ++j)
            if (!entered[static_cast<std::size_t>(j)] && beta(j) != 0.0) fresh.push_back(j);
        std::stable_sort(fresh.begin(), fresh.end(),
                         [&](Index a, Index b) { return std::abs(beta(a)) > std::abs(beta(b)); });
        for (Index j : fresh) {
            entered[static_cast<std::size_t>(j)] = true;
            out.entry_order.push_back(j);
        }
        for (Index j = 0; j < p; ++j) {
            const double scale = st.scale(j) > 0.0 && z.col(j).squaredNorm() > 0.0 ? st.scale(j) : 1.0;
            out.coefficients(g, j) = beta(j) / scale;
        }
        out.intercepts(g) = b0 - (out.coefficients.row(g).transpose().array() * st.mean.array()).sum();
    }

    update_weights();
    if (family.kind == FamilyKind::gaussian) {
        w.setOnes();
        working = target;
    }
    const Vector r = working - z * beta - Vector::Constant(n, b0);
    out.final_gradient = ((z.transpose() * (w.array() * r.array()).matrix()) / dn).cwiseAbs();
    return out;
}

/// L1 search on the single-point reference fit (C = 1). Predictors never
/// entering the grid are appended by their gradient magnitude at the
/// smallest lambda; prefixes are then re-projected without penalty.
inline SolutionPath l1_search(const Dataset& data, const PosteriorDraws& single_point, const SearchConfig& config)
{
    config.validate(data.p());
    if (single_point.size() != 1) fail_validation("l1_search: expects a single pooled reference fit");
    const Index p_max = config.resolved_p_max(data.p());
    const Vector target = fitted_means(data, single_point).row(0).transpose();
    const LassoPath lasso = lasso_path(data, target, config.lambda_grid_size, config.lambda_min_ratio);

    std::vector<Index> order = lasso.entry_order;
    if (static_cast<Index>(order.size()) < data.p()) {
        std::vector<Index> rest;
        for (Index j = 0; j < data.p(); ++j)
            if (std::find(order.begin(), order.end(), j) == order.end()) rest.push_back(j);
        std::stable_sort(rest.begin(), rest.end(), [&](Index a, Index b) {
            return lasso.final_gradient(a) > lasso.final_gradient(b);
        });
        order.insert(order.end(), rest.begin(), rest.end());
    }
    order.resize(static_cast<std::size_t>(p_max));

    SolutionPath path;
    path.method = SearchMethod::l1;
    path.order = std::move(order);
    path.kl_at_size = prefix_kl(data, single_point, path.order, path.projection_count);
    return path;
}

/// Dispatches on config.method. Forward search uses `config.clusters`
/// clusters of the draws; L1 search uses their pooled mean.
inline SolutionPath run_search(const Dataset& data, const PosteriorDraws& draws, const SearchConfig& config)
{
    if (config.method == SearchMethod::l1) return l1_search(data, pooled_draw(draws), config);
    const Index c = std::min(config.clusters, draws.size());
    return forward_search(data, cluster_draws(draws, data, c, config.seed), config);
}

/// Moves `forced` predictors to the front of the path (in the given order) and
/// recomputes prefix KL with `ref_draws`.
inline SolutionPath with_forced_prefix(const SolutionPath& path, const std::vector<Index>& forced, const Dataset& data,
                                       const PosteriorDraws& ref_draws)
{
    if (forced.empty()) return path;
    std::vector<Index> order = forced;
    for (Index j : path.order)
        if (std::find(forced.begin(), forced.end(), j) == forced.end()) order.push_back(j);
    SolutionPath out;
    out.method = path.method;
    out.order = std::move(order);
    Submodel(out.order).check_against(data);
    out.kl_at_size = prefix_kl(data, ref_draws, out.order, out.projection_count);
    return out;
}

struct PathSummary {
    Vector kl;
    Vector drop;           // kl[k-1] - kl[k], entry 0 unused (0)
    Vector relative_drop;  // drop / kl[k-1]
    bool monotone = true;
    bool full_size_near_zero = false;
};

inline PathSummary path_diagnostics(const SolutionPath& path, double tolerance = 1e-6)
{
    PathSummary s;
    s.kl = path.kl_at_size;
    const Index m = s.kl.size();
    s.drop = Vector::Zero(m);
    s.relative_drop = Vector::Zero(m);
    for (Index k = 1; k < m; ++k) {
        s.drop(k) = s.kl(k - 1) - s.kl(k);
        s.relative_drop(k) = s.kl(k - 1) > 0.0 ? s.drop(k) / s.kl(k - 1) : 0.0;
        if (s.drop(k) < -tolerance) s.monotone = false;
    }
    if (m > 0) s.full_size_near_zero = s.kl(m - 1) <= tolerance * std::max(1.0, s.kl(0));
    return s;
}

/// Entry (j, k-1): share of paths whose first k entries contain predictor j.
inline Matrix cumulative_inclusion_rates(std::span<const SolutionPath> paths, Index num_predictors)
{
    if (paths.empty()) fail_validation("cumulative_inclusion_rates: need at least one path");
    Index width = 0;
    for (const auto& p : paths) width = std::max(width, p.max_size());
    Matrix rates = Matrix::Zero(num_predictors, width);
    for (const auto& path : paths) {
        std::vector<bool> in(static_cast<std::size_t>(num_predictors), false);
        for (Index k = 0; k < width; ++k) {
            if (k < path.max_size()) {
                const Index j = path.order[static_cast<std::size_t>(k)];
                if (j < 0 || j >= num_predictors) fail_validation("cumulative_inclusion_rates: index out of range");
                in[static_cast<std::size_t>(j)] = true;
            }
            for (Index j = 0; j < num_predictors; ++j)
                if (in[static_cast<std::size_t>(j)]) rates(j, k) += 1.0;
        }
    }
    return rates / static_cast<double>(paths.size());
}

}  // namespace projpred
