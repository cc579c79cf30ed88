#pragma once

#include "core.hpp"
#include "reference.hpp"

#include <atomic>
#include <cstdint>
#include <optional>

namespace projpred {

/// Counts submodel projections (one per projected posterior, regardless of
/// how many draws or clusters it spans). Used to audit search cost.
inline std::atomic<std::uint64_t>& projection_counter()
{
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

struct IrlsOptions {
    int max_iter = 100;
    double tolerance = 1e-8;
};

/// Result of projecting one reference fit onto a submodel.
struct SingleProjection {
    Vector coefficients;  // intercept first
    std::optional<double> dispersion;
    double kl = 0.0;  // sum over observations
};

/// Projected posterior: one parameter vector per draw or cluster.
struct ProjectedPosterior {
    Submodel submodel;
    Matrix coefficients;  // C x (k+1)
    std::optional<Vector> dispersion;
    Vector weights;
    double kl_total = 0.0;
    Vector kl_per_component;

    Index size() const { return coefficients.rows(); }
    std::optional<double> dispersion_at(Index c) const
    {
        if (!dispersion) return std::nullopt;
        return (*dispersion)(c);
    }
};

namespace detail {

inline double kl_gaussian(double ref_mu, double ref_sigma, double mu, double sigma)
{
    const double d = ref_mu - mu;
    return std::log(sigma / ref_sigma) + (ref_sigma * ref_sigma + d * d) / (2.0 * sigma * sigma) - 0.5;
}

inline double xlogy_ratio(double a, double b) { return a > 0.0 ? a * std::log(a / b) : 0.0; }

inline double kl_pointwise(Family family, double ref_mu, double mu)
{
    switch (family.kind) {
    case FamilyKind::bernoulli: {
        const double m = std::clamp(mu, kProbClamp, 1.0 - kProbClamp);
        return xlogy_ratio(ref_mu, m) + xlogy_ratio(1.0 - ref_mu, 1.0 - m);
    }
    case FamilyKind::poisson: return xlogy_ratio(ref_mu, mu) - ref_mu + mu;
    case FamilyKind::gaussian: break;
    }
    return 0.0;
}

// Expected log-likelihood (up to constants) of canonical GLM at eta with pseudo-responses t.
inline double glm_objective(Family family, const Vector& t, const Vector& eta)
{
    double acc = 0.0;
    for (Index i = 0; i < t.size(); ++i) {
        const double e = clamp_eta(eta(i));
        const double b = family.kind == FamilyKind::bernoulli ? (e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e)))
                                                               : std::exp(e);
        acc += t(i) * e - b;
    }
    return acc;
}

}  // namespace detail

/// Projection engine for one submodel. Factorizes the submodel design once
/// and reuses it for every reference fit projected onto it.
class SubmodelProjector {
public:
    SubmodelProjector(const Dataset& data, Submodel sub, IrlsOptions irls = {})
        : family_(data.family()), sub_(std::move(sub)), design_(submodel_design(data, sub_)), irls_(irls)
    {
        if (family_.kind == FamilyKind::gaussian) qr_.compute(design_);
    }

    const Submodel& submodel() const { return sub_; }
    const Matrix& design() const { return design_; }

    SingleProjection project(const Eigen::Ref<const Vector>& ref_mu, std::optional<double> ref_dispersion) const
    {
        if (ref_mu.size() != design_.rows()) fail_validation("project_single: reference mean has wrong length");
        if (!ref_mu.allFinite()) fail_validation("project_single: non-finite reference mean");
        return family_.kind == FamilyKind::gaussian ? project_gaussian(ref_mu, ref_dispersion) : project_glm(ref_mu);
    }

private:
    SingleProjection project_gaussian(const Eigen::Ref<const Vector>& ref_mu, std::optional<double> ref_sigma) const
    {
        if (!ref_sigma || !(*ref_sigma > 0.0))
            fail_validation("project_single: gaussian projection needs a positive reference dispersion");
        SingleProjection out;
        out.coefficients = qr_.solve(Vector(ref_mu));
        const Vector fit = design_ * out.coefficients;
        const double n = static_cast<double>(ref_mu.size());
        const double mse = (ref_mu - fit).squaredNorm() / n;
        const double sigma = std::sqrt(*ref_sigma * *ref_sigma + mse);
        out.dispersion = sigma;
        double kl = 0.0;
        for (Index i = 0; i < ref_mu.size(); ++i)
            kl += std::max(0.0, detail::kl_gaussian(ref_mu(i), *ref_sigma, fit(i), sigma));
        out.kl = kl;
        return out;
    }

    SingleProjection project_glm(const Eigen::Ref<const Vector>& ref_mu) const
    {
        const Index n = design_.rows();
        const Index d = design_.cols();
        if (family_.kind == FamilyKind::bernoulli && ((ref_mu.array() < 0.0).any() || (ref_mu.array() > 1.0).any()))
            fail_validation("project_single: bernoulli reference mean outside [0, 1]");
        if (family_.kind == FamilyKind::poisson && (ref_mu.array() < 0.0).any())
            fail_validation("project_single: poisson reference mean is negative");

        const Vector t = ref_mu;
        Vector beta = Vector::Zero(d);
        Vector eta = Vector::Zero(n);
        double objective = detail::glm_objective(family_, t, eta);
        Matrix weighted(n, d);
        Vector rhs(n);
        bool converged = false;
        for (int iter = 0; iter < irls_.max_iter; ++iter) {
            for (Index i = 0; i < n; ++i) {
                const double mu = mean_from_eta(family_, eta(i));
                const double w = std::max(family_.kind == FamilyKind::bernoulli ? mu * (1.0 - mu) : mu, 1e-12);
                const double sw = std::sqrt(w);
                weighted.row(i) = sw * design_.row(i);
                rhs(i) = (t(i) - mu) / sw;
            }
            Eigen::ColPivHouseholderQR<Matrix> qr(weighted);
            Vector step = qr.solve(rhs);
            if (!step.allFinite()) fail_numerical("IRLS produced a non-finite step");

            double scale = 1.0;
            Vector candidate = beta + step;
            Vector cand_eta = design_ * candidate;
            double cand_obj = detail::glm_objective(family_, t, cand_eta);
            for (int h = 0; h < 30 && cand_obj < objective - 1e-12 * (1.0 + std::abs(objective)); ++h) {
                scale *= 0.5;
                candidate = beta + scale * step;
                cand_eta = design_ * candidate;
                cand_obj = detail::glm_objective(family_, t, cand_eta);
            }
            const double delta = (candidate - beta).cwiseAbs().maxCoeff();
            beta = std::move(candidate);
            eta = std::move(cand_eta);
            objective = cand_obj;
            if (delta < irls_.tolerance) {
                converged = true;
                break;
            }
        }
        if (!converged)
            fail_numerical("IRLS did not converge in " + std::to_string(irls_.max_iter) +
                           " iterations (possible separation or degenerate design)");

        SingleProjection out;
        out.coefficients = std::move(beta);
        double kl = 0.0;
        for (Index i = 0; i < n; ++i)
            kl += std::max(0.0, detail::kl_pointwise(family_, t(i), mean_from_eta(family_, eta(i))));
        out.kl = kl;
        return out;
    }

    Family family_;
    Submodel sub_;
    Matrix design_;
    IrlsOptions irls_;
    Eigen::ColPivHouseholderQR<Matrix> qr_;
};

/// Single-point projection of one reference fit.
inline SingleProjection project_single(const Dataset& data, const Submodel& sub, const Eigen::Ref<const Vector>& ref_mu,
                                       std::optional<double> ref_dispersion, IrlsOptions irls = {})
{
    return SubmodelProjector(data, sub, irls).project(ref_mu, ref_dispersion);
}

/// Projects precomputed reference means (one row per draw/cluster).
inline ProjectedPosterior project_means(const SubmodelProjector& projector, const Matrix& ref_mu,
                                        const std::optional<Vector>& ref_dispersion, const Vector& weights)
{
    projection_counter().fetch_add(1, std::memory_order_relaxed);
    const Index c_count = ref_mu.rows();
    ProjectedPosterior out;
    out.submodel = projector.submodel();
    out.coefficients.resize(c_count, projector.submodel().size() + 1);
    out.weights = weights;
    out.kl_per_component.resize(c_count);
    for (Index c = 0; c < c_count; ++c) {
        std::optional<double> disp;
        if (ref_dispersion) disp = (*ref_dispersion)(c);
        SingleProjection sp;
        try {
            sp = projector.project(ref_mu.row(c).transpose(), disp);
        } catch (const Error& e) {
            throw Error(e.kind(), "draw " + std::to_string(c + 1) + ": " + e.what());
        }
        out.coefficients.row(c) = sp.coefficients.transpose();
        if (sp.dispersion) {
            if (!out.dispersion) out.dispersion = Vector(c_count);
            (*out.dispersion)(c) = *sp.dispersion;
        }
        out.kl_per_component(c) = sp.kl;
    }
    out.kl_total = weights.dot(out.kl_per_component);
    return out;
}

/// Draw-by-draw projection.
inline ProjectedPosterior project_drawwise(const Dataset& data, const Submodel& sub, const PosteriorDraws& draws,
                                           IrlsOptions irls = {})
{
    const SubmodelProjector projector(data, sub, irls);
    return project_means(projector, fitted_means(data, draws), draws.dispersion(), draws.weights());
}

/// One single-point projection per cluster centroid; cluster weights carried over.
inline ProjectedPosterior project_clustered(const Dataset& data, const Submodel& sub, const ClusteredDraws& clusters,
                                            IrlsOptions irls = {})
{
    return project_drawwise(data, sub, clusters.centroids, irls);
}

/// C x n matrix of log p(y_i | projected component c).
inline Matrix projected_pointwise_log_density(const ProjectedPosterior& proj, const Dataset& data)
{
    proj.submodel.check_against(data);
    const Matrix design = submodel_design(data, proj.submodel);
    const Matrix eta = proj.coefficients * design.transpose();
    Matrix out(proj.size(), data.n());
    for (Index c = 0; c < proj.size(); ++c) {
        const auto disp = proj.dispersion_at(c);
        for (Index i = 0; i < data.n(); ++i)
            out(c, i) = log_density(data.family(), data.y()(i), mean_from_eta(data.family(), eta(c, i)), disp);
    }
    return out;
}

/// log sum_c w_c p(y_i | theta_c) for one observation.
inline double predictive_log_density(const ProjectedPosterior& proj, const Dataset& data, Index i)
{
    if (i < 0 || i >= data.n()) fail_validation("predictive_log_density: observation index out of range");
    proj.submodel.check_against(data);
    Vector comp(proj.size());
    for (Index c = 0; c < proj.size(); ++c) {
        const Vector row = data.x().row(i).transpose();
        double eta = proj.coefficients(c, 0);
        for (Index k = 0; k < proj.submodel.size(); ++k)
            eta += proj.coefficients(c, k + 1) * row(proj.submodel.indices()[static_cast<std::size_t>(k)]);
        comp(c) = log_density(data.family(), data.y()(i), mean_from_eta(data.family(), eta), proj.dispersion_at(c));
    }
    return log_sum_exp(comp, proj.weights);
}

}  // namespace projpred
