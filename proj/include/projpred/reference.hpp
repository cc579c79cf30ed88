#pragma once

#include "core.hpp"
#include "log.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <vector>

namespace projpred {

// ---------------------------------------------------------------------------
// Conjugate ridge reference model
// ---------------------------------------------------------------------------

/// Normal-inverse-gamma prior for linear regression:
///   sigma^2 ~ InvGamma(a0, b0)
///   beta_j | sigma^2 ~ N(0, (sigma * ridge_scale / sd_j)^2)   (ridge_scale is the sd of the
///                                                               standardized coefficient)
///   intercept | sigma^2 ~ N(0, (sigma * intercept_scale)^2)
/// With `standardize == false`, sd_j is taken as 1.
struct ConjugatePrior {
    double ridge_scale = 1.0;
    double a0 = 1.0;
    double b0 = 1.0;
    double intercept_scale = 100.0;
    bool standardize = true;

    void validate() const
    {
        if (!(ridge_scale > 0.0) || !(a0 > 0.0) || !(b0 > 0.0) || !(intercept_scale > 0.0))
            fail_validation("conjugate prior: ridge_scale, a0, b0 and intercept_scale must be positive");
    }
};

/// Closed-form NIG posterior over (intercept, beta).
struct ConjugatePosterior {
    Vector mean;       // m_n
    Matrix precision;  // Lambda_n (coefficient covariance is sigma^2 * Lambda_n^{-1})
    double shape = 0;  // a_n
    double scale = 0;  // b_n
};

/// Diagonal prior precision (per unit sigma^2) over (intercept, beta).
inline Vector conjugate_prior_precision(const Dataset& data, const ConjugatePrior& prior)
{
    Vector prec(data.p() + 1);
    prec(0) = 1.0 / (prior.intercept_scale * prior.intercept_scale);
    for (Index j = 0; j < data.p(); ++j) {
        double sd = 1.0;
        if (prior.standardize && data.n() > 1) {
            const auto col = data.x().col(j);
            const double m = col.mean();
            sd = std::sqrt((col.array() - m).square().sum() / static_cast<double>(data.n() - 1));
            if (!(sd > 0.0)) sd = 1.0;
        }
        prec(j + 1) = sd * sd / (prior.ridge_scale * prior.ridge_scale);
    }
    return prec;
}

inline ConjugatePosterior conjugate_posterior(const Dataset& data, const ConjugatePrior& prior)
{
    prior.validate();
    if (data.family() != Family::gaussian()) fail_validation("conjugate reference fit requires the gaussian family");
    Matrix design(data.n(), data.p() + 1);
    design.col(0).setOnes();
    design.rightCols(data.p()) = data.x();

    ConjugatePosterior post;
    post.precision = design.transpose() * design;
    post.precision.diagonal() += conjugate_prior_precision(data, prior);
    Eigen::LLT<Matrix> llt(post.precision);
    if (llt.info() != Eigen::Success)
        fail_numerical("conjugate reference fit: normal equations are singular (check ridge_scale and the design)");
    const Vector xty = design.transpose() * data.y();
    post.mean = llt.solve(xty);
    post.shape = prior.a0 + 0.5 * static_cast<double>(data.n());
    post.scale = prior.b0 + 0.5 * (data.y().squaredNorm() - post.mean.dot(xty));
    if (!(post.scale > 0.0) || !post.mean.allFinite())
        fail_numerical("conjugate reference fit: degenerate posterior scale");
    return post;
}

/// Exact draws from the NIG posterior; deterministic given `seed`.
inline PosteriorDraws fit_conjugate_gaussian(const Dataset& data, const ConjugatePrior& prior, Index num_draws,
                                             std::uint64_t seed)
{
    if (num_draws < 1) fail_validation("fit_conjugate_gaussian: need at least one draw");
    const ConjugatePosterior post = conjugate_posterior(data, prior);
    Eigen::LLT<Matrix> llt(post.precision);
    const Matrix upper = llt.matrixU();

    std::mt19937_64 rng(seed);
    std::gamma_distribution<double> gamma(post.shape, 1.0 / post.scale);
    std::normal_distribution<double> normal;
    const Index d = post.mean.size();
    Matrix coef(num_draws, d);
    Vector sigma(num_draws);
    Vector z(d);
    for (Index s = 0; s < num_draws; ++s) {
        const double sigma2 = 1.0 / gamma(rng);
        for (Index j = 0; j < d; ++j) z(j) = normal(rng);
        // U^T U = Lambda_n, so U^{-1} z ~ N(0, Lambda_n^{-1}).
        const Vector v = upper.triangularView<Eigen::Upper>().solve(z);
        sigma(s) = std::sqrt(sigma2);
        coef.row(s) = (post.mean + sigma(s) * v).transpose();
    }
    return PosteriorDraws(std::move(coef), std::move(sigma));
}

// ---------------------------------------------------------------------------
// Thinning
// ---------------------------------------------------------------------------

/// Evenly strided subsample with a seeded offset; weights are re-uniformized.
inline PosteriorDraws thin_draws(const PosteriorDraws& draws, Index target, std::uint64_t seed)
{
    const Index s_total = draws.size();
    if (target < 1 || target > s_total)
        fail_validation("thin_draws: target " + std::to_string(target) + " outside [1, " + std::to_string(s_total) +
                        "]");
    const Index stride = s_total / target;
    std::mt19937_64 rng(seed);
    const Index offset = stride > 1 ? std::uniform_int_distribution<Index>(0, stride - 1)(rng) : 0;
    Matrix coef(target, draws.coefficients().cols());
    std::optional<Vector> disp;
    if (draws.dispersion()) disp = Vector(target);
    for (Index k = 0; k < target; ++k) {
        const Index src = std::min(s_total - 1, offset + (k * s_total) / target);
        coef.row(k) = draws.coefficients().row(src);
        if (disp) (*disp)(k) = (*draws.dispersion())(src);
    }
    return PosteriorDraws(std::move(coef), std::move(disp));
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

/// Clustered reference draws. `centroids` holds one pseudo-draw per cluster
/// whose weight is the cluster's share of the draw weight (count / S for raw
/// MCMC draws).
struct ClusteredDraws {
    PosteriorDraws centroids;
    std::vector<Index> assignment;  // cluster label per source draw

    Index num_clusters() const { return centroids.size(); }
    const Vector& weights() const { return centroids.weights(); }
};

/// S x n matrix of reference fitted means mu^(s).
inline Matrix fitted_means(const Dataset& data, const PosteriorDraws& draws)
{
    if (draws.num_predictors() != data.p()) fail_validation("draws and dataset disagree on predictor count");
    Matrix eta = draws.coefficients().rightCols(data.p()) * data.x().transpose();
    eta.colwise() += draws.coefficients().col(0);
    if (data.family().kind != FamilyKind::gaussian)
        eta = eta.unaryExpr([f = data.family()](double e) { return mean_from_eta(f, e); });
    return eta;
}

namespace detail {

inline ClusteredDraws assemble_clusters(const PosteriorDraws& draws, std::vector<Index> assignment, Index c_count)
{
    const Index s_total = draws.size();
    const Index d = draws.coefficients().cols();
    Matrix centroids = Matrix::Zero(c_count, d);
    Vector weights = Vector::Zero(c_count);
    Vector sq_disp = Vector::Zero(c_count);
    std::vector<Index> counts(static_cast<std::size_t>(c_count), 0);
    std::vector<Index> single(static_cast<std::size_t>(c_count), -1);
    for (Index s = 0; s < s_total; ++s) {
        const Index c = assignment[static_cast<std::size_t>(s)];
        const double w = draws.weights()(s);
        centroids.row(c) += w * draws.coefficients().row(s);
        weights(c) += w;
        if (draws.dispersion()) sq_disp(c) += w * (*draws.dispersion())(s) * (*draws.dispersion())(s);
        ++counts[static_cast<std::size_t>(c)];
        single[static_cast<std::size_t>(c)] = s;
    }
    std::optional<Vector> disp;
    if (draws.dispersion()) disp = Vector(c_count);
    for (Index c = 0; c < c_count; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) fail_numerical("cluster_draws: empty cluster");
        if (counts[static_cast<std::size_t>(c)] == 1) {
            // Copy singletons verbatim so that C = S reproduces the draws bit for bit.
            const Index s = single[static_cast<std::size_t>(c)];
            centroids.row(c) = draws.coefficients().row(s);
            if (disp) (*disp)(c) = (*draws.dispersion())(s);
            continue;
        }
        if (weights(c) > 0.0) {
            centroids.row(c) /= weights(c);
            if (disp) (*disp)(c) = std::sqrt(sq_disp(c) / weights(c));
        } else {
            centroids.row(c).setZero();
            Index m = 0;
            for (Index s = 0; s < s_total; ++s)
                if (assignment[static_cast<std::size_t>(s)] == c) {
                    centroids.row(c) += draws.coefficients().row(s);
                    if (disp) (*disp)(c) += (*draws.dispersion())(s);
                    ++m;
                }
            centroids.row(c) /= static_cast<double>(m);
            if (disp) (*disp)(c) /= static_cast<double>(m);
        }
    }
    const Vector& dw = draws.weights();
    if ((dw.array() == dw(0)).all()) {
        for (Index c = 0; c < c_count; ++c)
            weights(c) = static_cast<double>(counts[static_cast<std::size_t>(c)]) / static_cast<double>(s_total);
    } else {
        weights /= weights.sum();
    }
    return ClusteredDraws{PosteriorDraws(std::move(centroids), std::move(disp), std::move(weights)),
                          std::move(assignment)};
}

// One k-means++ / Lloyd run; returns false if a cluster ends up empty.
inline bool kmeans_run(const Matrix& points, Index k, std::uint64_t seed, std::vector<Index>& labels)
{
    const Index s_total = points.rows();
    std::mt19937_64 rng(seed);
    Matrix centers(k, points.cols());
    Vector d2 = Vector::Constant(s_total, std::numeric_limits<double>::infinity());

    Index first = std::uniform_int_distribution<Index>(0, s_total - 1)(rng);
    centers.row(0) = points.row(first);
    std::vector<bool> chosen(static_cast<std::size_t>(s_total), false);
    chosen[static_cast<std::size_t>(first)] = true;
    for (Index c = 1; c < k; ++c) {
        for (Index s = 0; s < s_total; ++s)
            d2(s) = std::min(d2(s), (points.row(s) - centers.row(c - 1)).squaredNorm());
        const double total = d2.sum();
        Index pick = -1;
        if (total > 0.0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (Index s = 0; s < s_total; ++s) {
                if (d2(s) <= 0.0) continue;
                pick = s;
                u -= d2(s);
                if (u <= 0.0) break;
            }
        }
        if (pick < 0) {
            // All remaining points coincide with a center; fall back to an unused index.
            std::vector<Index> unused;
            for (Index s = 0; s < s_total; ++s)
                if (!chosen[static_cast<std::size_t>(s)]) unused.push_back(s);
            pick = unused[std::uniform_int_distribution<std::size_t>(0, unused.size() - 1)(rng)];
        }
        chosen[static_cast<std::size_t>(pick)] = true;
        centers.row(c) = points.row(pick);
    }

    labels.assign(static_cast<std::size_t>(s_total), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (Index s = 0; s < s_total; ++s) {
            Index best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (Index c = 0; c < k; ++c) {
                const double d = (points.row(s) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (labels[static_cast<std::size_t>(s)] != best) {
                labels[static_cast<std::size_t>(s)] = best;
                changed = true;
            }
        }
        centers.setZero();
        std::vector<Index> counts(static_cast<std::size_t>(k), 0);
        for (Index s = 0; s < s_total; ++s) {
            centers.row(labels[static_cast<std::size_t>(s)]) += points.row(s);
            ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(s)])];
        }
        for (Index c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) return false;
            centers.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
        }
        if (!changed) break;
    }
    return true;
}

}  // namespace detail

/// k-means (k-means++ seeding) of the draws in fitted-mean space. Centroids are
/// within-cluster weighted averages of the parameter draws; labels are ordered
/// by first appearance so the output does not depend on seeding order.
inline ClusteredDraws cluster_draws(const PosteriorDraws& draws, const Dataset& data, Index num_clusters,
                                    std::uint64_t seed)
{
    const Index s_total = draws.size();
    if (num_clusters < 1 || num_clusters > s_total)
        fail_validation("cluster_draws: cluster count " + std::to_string(num_clusters) + " outside [1, " +
                        std::to_string(s_total) + "]");
    std::vector<Index> labels(static_cast<std::size_t>(s_total), 0);
    if (num_clusters == s_total) {
        for (Index s = 0; s < s_total; ++s) labels[static_cast<std::size_t>(s)] = s;
        return detail::assemble_clusters(draws, std::move(labels), num_clusters);
    }
    if (num_clusters == 1) return detail::assemble_clusters(draws, std::move(labels), 1);

    const Matrix points = fitted_means(data, draws);
    bool ok = false;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
        ok = detail::kmeans_run(points, num_clusters, derive_seed(seed, static_cast<std::uint64_t>(attempt)), labels);
        if (!ok) warn("cluster_draws: empty cluster, restarting k-means (attempt " + std::to_string(attempt + 2) + ")");
    }
    if (!ok) fail_numerical("cluster_draws: empty cluster persisted after 10 restarts");

    std::vector<Index> relabel(static_cast<std::size_t>(num_clusters), -1);
    Index next = 0;
    for (auto& l : labels) {
        auto& r = relabel[static_cast<std::size_t>(l)];
        if (r < 0) r = next++;
        l = r;
    }
    return detail::assemble_clusters(draws, std::move(labels), num_clusters);
}

/// Weighted mean of the draws as a single pseudo-draw (the C = 1 reduction).
inline PosteriorDraws pooled_draw(const PosteriorDraws& draws)
{
    std::vector<Index> labels(static_cast<std::size_t>(draws.size()), 0);
    return detail::assemble_clusters(draws, std::move(labels), 1).centroids;
}

}  // namespace projpred
