#pragma once

#include "core.hpp"
#include "log.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace projpred {

/// Generalized Pareto fit (location 0) of positive exceedances.
struct GpdFit {
    double k = 0.0;      // shape
    double sigma = 0.0;  // scale
};

/// Zhang & Stephens (2009) profile-posterior estimator with a weakly
/// informative prior pulling k towards 0.5 (10 pseudo-observations).
/// `x` must be sorted ascending.
inline GpdFit fit_gpd(std::span<const double> x, bool weakly_informative_prior = true)
{
    const std::size_t n = x.size();
    if (n < 2) return {std::numeric_limits<double>::infinity(), 0.0};
    constexpr double prior = 3.0;
    const std::size_t m = 30 + static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
    const double xstar = x[static_cast<std::size_t>(std::floor(static_cast<double>(n) / 4.0 + 0.5)) - 1];
    const double xmax = x[n - 1];

    std::vector<double> theta(m), log_lik(m);
    for (std::size_t j = 0; j < m; ++j) {
        theta[j] = 1.0 / xmax + (1.0 - std::sqrt(static_cast<double>(m) / (static_cast<double>(j + 1) - 0.5))) /
                                    prior / xstar;
        const double a = -theta[j];
        double kk = 0.0;
        for (double v : x) kk += std::log1p(a * v);
        kk /= static_cast<double>(n);
        log_lik[j] = static_cast<double>(n) * (std::log(a / kk) - kk - 1.0);
    }
    const double mx = *std::max_element(log_lik.begin(), log_lik.end());
    double wsum = 0.0;
    for (double l : log_lik) wsum += std::isfinite(l) ? std::exp(l - mx) : 0.0;
    double theta_hat = 0.0;
    for (std::size_t j = 0; j < m; ++j)
        if (std::isfinite(log_lik[j])) theta_hat += theta[j] * std::exp(log_lik[j] - mx) / wsum;

    double k = 0.0;
    for (double v : x) k += std::log1p(-theta_hat * v);
    k /= static_cast<double>(n);
    const double sigma = -k / theta_hat;
    if (weakly_informative_prior) k = (k * static_cast<double>(n) + 0.5 * 10.0) / (static_cast<double>(n) + 10.0);
    if (!std::isfinite(k)) k = std::numeric_limits<double>::infinity();
    return {k, sigma};
}

/// GPD quantile function.
inline double gpd_quantile(double p, double k, double sigma)
{
    if (k == 0.0) return -sigma * std::log1p(-p);
    return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

struct SmoothedRatios {
    Vector log_ratios;  // shifted so that the raw maximum is 0
    double khat = 0.0;
};

inline Index psis_tail_length(Index s)
{
    const double ds = static_cast<double>(s);
    return static_cast<Index>(std::ceil(std::min(0.2 * ds, 3.0 * std::sqrt(ds))));
}

/// Pareto-smooths the upper tail of importance log-ratios. The M largest
/// ratios are replaced by expected order statistics of a GPD fitted to their
/// exceedances and truncated at the raw maximum.
inline SmoothedRatios pareto_smooth(const Eigen::Ref<const Vector>& log_ratios, bool warn_small = true)
{
    const Index s = log_ratios.size();
    SmoothedRatios out;
    if (s == 0) fail_validation("pareto_smooth: empty input");
    const double mx = log_ratios.maxCoeff();
    out.log_ratios = log_ratios.array() - mx;
    if (s < 25) {
        if (warn_small) warn("pareto_smooth: fewer than 25 draws, returning unsmoothed ratios");
        out.khat = std::numeric_limits<double>::infinity();
        return out;
    }
    const Index tail = psis_tail_length(s);
    std::vector<Index> ord(static_cast<std::size_t>(s));
    std::iota(ord.begin(), ord.end(), Index{0});
    std::stable_sort(ord.begin(), ord.end(),
                     [&](Index a, Index b) { return out.log_ratios(a) < out.log_ratios(b); });
    const std::size_t first_tail = static_cast<std::size_t>(s - tail);
    const double tail_min = out.log_ratios(ord[first_tail]);
    const double tail_max = out.log_ratios(ord.back());
    if (std::abs(tail_max - tail_min) < std::numeric_limits<double>::epsilon() / 100.0) {
        out.khat = -std::numeric_limits<double>::infinity();
        return out;
    }
    const double cutoff = out.log_ratios(ord[first_tail - 1]);
    const double exp_cutoff = std::exp(cutoff);
    std::vector<double> exceed(static_cast<std::size_t>(tail));
    for (Index t = 0; t < tail; ++t)
        exceed[static_cast<std::size_t>(t)] = std::exp(out.log_ratios(ord[first_tail + static_cast<std::size_t>(t)])) - exp_cutoff;
    const GpdFit fit = fit_gpd(exceed);
    out.khat = fit.k;
    if (std::isfinite(fit.k) && fit.sigma > 0.0) {
        for (Index t = 0; t < tail; ++t) {
            const double prob = (static_cast<double>(t + 1) - 0.5) / static_cast<double>(tail);
            const double smoothed = std::log(gpd_quantile(prob, fit.k, fit.sigma) + exp_cutoff);
            out.log_ratios(ord[first_tail + static_cast<std::size_t>(t)]) = std::min(smoothed, 0.0);
        }
    }
    return out;
}

/// Per-observation normalized PSIS log-weights derived from reference
/// log-likelihoods (S x n).
struct PsisWeights {
    Matrix log_weights;  // S x n, each column log-sums to 0
    Vector khat;         // n
};

inline PsisWeights psis_weights(const Matrix& ref_loglik, const Vector& draw_weights)
{
    const Index s = ref_loglik.rows();
    const Index n = ref_loglik.cols();
    if (draw_weights.size() != s) fail_validation("psis_weights: draw weight count mismatch");
    PsisWeights out;
    out.log_weights.resize(s, n);
    out.khat.resize(n);
    const Vector log_w = draw_weights.array().log();
    bool warned = false;
    for (Index i = 0; i < n; ++i) {
        const Vector lr = log_w - ref_loglik.col(i);
        const SmoothedRatios sm = pareto_smooth(lr, !warned);
        warned = true;
        const double norm = log_sum_exp(sm.log_ratios, Vector::Ones(s));
        out.log_weights.col(i) = sm.log_ratios.array() - norm;
        out.khat(i) = sm.khat;
    }
    return out;
}

/// Self-normalized importance-sampling LOO density for each observation:
/// log sum_s w_is p(y_i | theta_s), with model densities S x n.
inline Vector psis_loo_pointwise(const Matrix& model_loglik, const PsisWeights& weights)
{
    if (model_loglik.rows() != weights.log_weights.rows() || model_loglik.cols() != weights.log_weights.cols())
        fail_validation("psis_loo_pointwise: dimension mismatch");
    const Index n = model_loglik.cols();
    Vector out(n);
    const Vector ones = Vector::Ones(model_loglik.rows());
    for (Index i = 0; i < n; ++i) out(i) = log_sum_exp(model_loglik.col(i) + weights.log_weights.col(i), ones);
    return out;
}

}  // namespace projpred
