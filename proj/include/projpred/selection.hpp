#pragma once

#include "core.hpp"
#include "evaluation.hpp"
#include "log.hpp"
#include "parallel.hpp"
#include "projection.hpp"
#include "reference.hpp"

#include <optional>
#include <string>
#include <vector>

namespace projpred {

enum class SelectionRule { se, delta };

inline std::string_view to_string(SelectionRule r) { return r == SelectionRule::se ? "se" : "delta"; }

inline SelectionRule parse_selection_rule(std::string_view s)
{
    if (s == "se" || s == "SE") return SelectionRule::se;
    if (s == "delta" || s == "delta-utility") return SelectionRule::delta;
    fail_validation("unknown selection rule '" + std::string(s) + "'");
}

struct SizeChoice {
    Index size = 0;
    bool fallback_used = false;
};

/// Smallest k with delta_k + s_k >= 0; falls back to the largest size.
inline SizeChoice select_size_se(const Vector& delta, const Vector& se)
{
    if (delta.size() == 0 || se.size() != delta.size()) fail_validation("select_size_se: empty or mismatched curve");
    for (Index k = 0; k < delta.size(); ++k)
        if (delta(k) + se(k) >= 0.0) return {k, false};
    return {delta.size() - 1, true};
}

inline SizeChoice select_size_se(const PathEvaluation& eval) { return select_size_se(eval.delta_elpd, eval.se_delta); }

/// Smallest k with delta_k >= -threshold.
inline SizeChoice select_size_delta(const Vector& delta, double threshold = 4.0)
{
    if (delta.size() == 0) fail_validation("select_size_delta: empty curve");
    if (!(threshold >= 0.0)) fail_validation("select_size_delta: threshold must be non-negative");
    for (Index k = 0; k < delta.size(); ++k)
        if (delta(k) >= -threshold) return {k, false};
    return {delta.size() - 1, true};
}

inline SizeChoice select_size_delta(const PathEvaluation& eval, double threshold = 4.0)
{
    return select_size_delta(eval.delta_elpd, threshold);
}

/// Pool-adjacent-violators: L2 projection of `v` onto non-decreasing sequences.
inline Vector isotonic_regression(const Vector& v, const Vector& weights)
{
    struct Block {
        double value, weight;
        Index count;
    };
    std::vector<Block> blocks;
    for (Index i = 0; i < v.size(); ++i) {
        blocks.push_back({v(i), weights(i), 1});
        while (blocks.size() > 1 && blocks[blocks.size() - 2].value > blocks.back().value) {
            Block b = blocks.back();
            blocks.pop_back();
            Block& a = blocks.back();
            const double w = a.weight + b.weight;
            a.value = (a.value * a.weight + b.value * b.weight) / w;
            a.weight = w;
            a.count += b.count;
        }
    }
    Vector out(v.size());
    Index pos = 0;
    for (const auto& b : blocks)
        for (Index c = 0; c < b.count; ++c) out(pos++) = b.value;
    return out;
}

inline Vector isotonic_regression(const Vector& v) { return isotonic_regression(v, Vector::Ones(v.size())); }

struct SmoothedCurve {
    Vector normalized;  // delta_k / s_k, monotone from drop_prefix on
    Vector elpd_scale;  // normalized * s_k (raw values on the dropped prefix)
    Index drop_prefix = 1;
    bool smoothed = false;
};

inline constexpr double kMinSe = 1e-8;

inline SmoothedCurve smooth_monotone(const Vector& delta, const Vector& se, Index drop_prefix = 1)
{
    if (se.size() != delta.size()) fail_validation("smooth_monotone: curve and se lengths differ");
    if (drop_prefix < 0) fail_validation("smooth_monotone: negative drop_prefix");
    SmoothedCurve out;
    out.drop_prefix = drop_prefix;
    const Vector s = se.cwiseMax(kMinSe);
    out.normalized = delta.cwiseQuotient(s);
    out.elpd_scale = delta;
    const Index m = delta.size() - std::min(drop_prefix, delta.size());
    if (m < 3) {
        warn("smooth_monotone: fewer than 3 sizes to smooth, curve passed through unchanged");
        return out;
    }
    const Vector fit = isotonic_regression(out.normalized.tail(m));
    out.normalized.tail(m) = fit;
    out.elpd_scale.tail(m) = fit.cwiseProduct(s.tail(m));
    out.smoothed = true;
    return out;
}

inline SmoothedCurve smooth_monotone(const PathEvaluation& eval, Index drop_prefix = 1)
{
    return smooth_monotone(eval.delta_elpd, eval.se_delta, drop_prefix);
}

// ---------------------------------------------------------------------------
// Predictor distances and dendrogram
// ---------------------------------------------------------------------------

/// In-sample predictive means of the single-point projection onto {j}.
inline Vector single_predictor_fit(const Dataset& data, const PosteriorDraws& pooled, Index j)
{
    const Submodel sub({j});
    sub.check_against(data);
    const Vector mu = fitted_means(data, pooled).row(0).transpose();
    const auto sp = project_single(data, sub, mu, pooled.dispersion_at(0));
    return mean_from_eta(data.family(), linear_predictor(data, sub, sp.coefficients));
}

inline double correlation_distance(const Vector& a, const Vector& b, bool warn_zero = true)
{
    const Vector ca = a.array() - a.mean();
    const Vector cb = b.array() - b.mean();
    const double na = ca.norm(), nb = cb.norm();
    if (na <= 1e-14 * (1.0 + a.cwiseAbs().maxCoeff()) || nb <= 1e-14 * (1.0 + b.cwiseAbs().maxCoeff())) {
        if (warn_zero) warn("predictor_distance: zero-variance prediction, distance set to 1");
        return 1.0;
    }
    const double corr = std::clamp(ca.dot(cb) / (na * nb), -1.0, 1.0);
    return std::clamp(1.0 - std::abs(corr), 0.0, 1.0);
}

inline double predictor_distance(const Dataset& data, const PosteriorDraws& ref_draws, Index j, Index j_prime)
{
    Submodel({j}).check_against(data);
    Submodel({j_prime}).check_against(data);
    if (j == j_prime) return 0.0;
    const PosteriorDraws pooled = pooled_draw(ref_draws);
    return correlation_distance(single_predictor_fit(data, pooled, j), single_predictor_fit(data, pooled, j_prime));
}

/// Full p x p distance matrix; one single-point projection per predictor.
inline Matrix distance_matrix(const Dataset& data, const PosteriorDraws& ref_draws, unsigned jobs = 1)
{
    const Index p = data.p();
    const PosteriorDraws pooled = pooled_draw(ref_draws);
    std::vector<Vector> fits(static_cast<std::size_t>(p));
    parallel_for(static_cast<std::size_t>(p), jobs,
                 [&](std::size_t j) { fits[j] = single_predictor_fit(data, pooled, static_cast<Index>(j)); });
    Matrix d = Matrix::Zero(p, p);
    Index zero_var = 0;
    for (Index a = 0; a < p; ++a)
        for (Index b = a + 1; b < p; ++b) {
            const double v = correlation_distance(fits[static_cast<std::size_t>(a)], fits[static_cast<std::size_t>(b)], false);
            d(a, b) = d(b, a) = v;
        }
    for (Index a = 0; a < p; ++a) {
        const Vector c = fits[static_cast<std::size_t>(a)].array() - fits[static_cast<std::size_t>(a)].mean();
        if (c.norm() <= 1e-14 * (1.0 + fits[static_cast<std::size_t>(a)].cwiseAbs().maxCoeff())) ++zero_var;
    }
    if (zero_var > 0)
        warn("predictor_distance: " + std::to_string(zero_var) + " zero-variance predictions, distances set to 1");
    return d;
}

/// Agglomerative merge tree. Leaves are 0..p-1, the i-th merge creates node p+i.
struct Dendrogram {
    struct Merge {
        Index left, right;
        double height;
        Index size;
    };
    Index num_leaves = 0;
    std::vector<Merge> merges;

    Index root() const { return merges.empty() ? 0 : num_leaves + static_cast<Index>(merges.size()) - 1; }

    std::vector<Index> leaves_under(Index node) const
    {
        if (node < num_leaves) return {node};
        const auto& m = merges[static_cast<std::size_t>(node - num_leaves)];
        auto l = leaves_under(m.left);
        const auto r = leaves_under(m.right);
        l.insert(l.end(), r.begin(), r.end());
        return l;
    }
};

/// Complete linkage; ties merge the pair with the smallest (left, right) ids.
inline Dendrogram build_dendrogram(const Matrix& distance)
{
    if (distance.rows() != distance.cols() || distance.rows() < 1)
        fail_validation("build_dendrogram: distance matrix must be square and non-empty");
    if (!distance.allFinite()) fail_validation("build_dendrogram: non-finite distances");
    const Index p = distance.rows();
    Dendrogram tree;
    tree.num_leaves = p;
    std::vector<Index> active(static_cast<std::size_t>(p));
    std::iota(active.begin(), active.end(), Index{0});
    std::vector<Index> sizes(static_cast<std::size_t>(p), 1);
    // cluster-to-cluster distances indexed by node id
    Matrix d = Matrix::Zero(2 * p, 2 * p);
    d.topLeftCorner(p, p) = distance;
    while (active.size() > 1) {
        std::size_t ba = 0, bb = 1;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < active.size(); ++a)
            for (std::size_t b = a + 1; b < active.size(); ++b) {
                const double v = d(active[a], active[b]);
                if (v < best) {
                    best = v;
                    ba = a;
                    bb = b;
                }
            }
        const Index left = active[ba], right = active[bb];
        const Index node = p + static_cast<Index>(tree.merges.size());
        const Index size = sizes[static_cast<std::size_t>(left)] + sizes[static_cast<std::size_t>(right)];
        const double prev = tree.merges.empty() ? 0.0 : tree.merges.back().height;
        tree.merges.push_back({left, right, std::max(best, prev), size});
        sizes.push_back(size);
        for (Index other : active) {
            if (other == left || other == right) continue;
            d(node, other) = d(other, node) = std::max(d(left, other), d(right, other));
        }
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(bb));
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(ba));
        active.push_back(node);
    }
    return tree;
}

/// Cophenetic distance: height at which i and j first share a cluster.
inline double cophenetic(const Dendrogram& tree, Index i, Index j)
{
    if (i == j) return 0.0;
    for (std::size_t m = 0; m < tree.merges.size(); ++m) {
        const auto leaves = tree.leaves_under(tree.num_leaves + static_cast<Index>(m));
        const bool hi = std::find(leaves.begin(), leaves.end(), i) != leaves.end();
        const bool hj = std::find(leaves.begin(), leaves.end(), j) != leaves.end();
        if (hi && hj) return tree.merges[m].height;
    }
    return std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct SelectionConfig {
    SelectionRule rule = SelectionRule::delta;
    double delta_threshold = 4.0;
    bool smooth = false;
    Index drop_prefix = 1;
};

struct SelectionReport {
    Index selected_size = 0;
    SelectionRule rule = SelectionRule::delta;
    bool smoothed = false;
    std::optional<SmoothedCurve> smoothed_curve;
    bool fallback_used = false;
    Vector delta_elpd;
    Vector se_delta;
    std::optional<Matrix> distance_matrix;
    std::optional<Dendrogram> dendrogram;
};

inline SelectionReport select_size(const PathEvaluation& eval, const SelectionConfig& config = {})
{
    SelectionReport r;
    r.rule = config.rule;
    r.delta_elpd = eval.delta_elpd;
    r.se_delta = eval.se_delta;
    Vector curve = eval.delta_elpd;
    if (config.smooth) {
        r.smoothed_curve = smooth_monotone(eval, config.drop_prefix);
        r.smoothed = r.smoothed_curve->smoothed;
        curve = r.smoothed_curve->elpd_scale;
    }
    const SizeChoice c = config.rule == SelectionRule::se ? select_size_se(curve, eval.se_delta)
                                                          : select_size_delta(curve, config.delta_threshold);
    r.selected_size = c.size;
    r.fallback_used = c.fallback_used;
    if (c.fallback_used) warn("selection: no size satisfies the rule, falling back to the largest evaluated size");
    return r;
}

}  // namespace projpred
