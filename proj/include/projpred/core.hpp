#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace projpred {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class ErrorKind { validation, numerical };

/// Library-wide exception. `kind` separates bad input from numerical failure
/// so front ends can map them to distinct exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail_validation(const std::string& msg) { throw Error(ErrorKind::validation, msg); }
[[noreturn]] inline void fail_numerical(const std::string& msg) { throw Error(ErrorKind::numerical, msg); }

inline constexpr double kEtaClamp = 35.0;
inline constexpr double kProbClamp = 1e-12;

// ---------------------------------------------------------------------------
// Family
// ---------------------------------------------------------------------------

enum class FamilyKind { gaussian, bernoulli, poisson };

/// Observation family with its canonical link.
struct Family {
    FamilyKind kind = FamilyKind::gaussian;

    static constexpr Family gaussian() { return {FamilyKind::gaussian}; }
    static constexpr Family bernoulli() { return {FamilyKind::bernoulli}; }
    static constexpr Family poisson() { return {FamilyKind::poisson}; }

    constexpr bool has_dispersion() const { return kind == FamilyKind::gaussian; }

    std::string_view name() const
    {
        switch (kind) {
        case FamilyKind::gaussian: return "gaussian";
        case FamilyKind::bernoulli: return "bernoulli";
        case FamilyKind::poisson: return "poisson";
        }
        return "unknown";
    }

    static Family parse(std::string_view s)
    {
        if (s == "gaussian") return gaussian();
        if (s == "bernoulli" || s == "binomial") return bernoulli();
        if (s == "poisson") return poisson();
        fail_validation("unknown family '" + std::string(s) + "'");
    }

    friend constexpr bool operator==(Family, Family) = default;
};

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// Design matrix, response and family. Validated on construction and
/// immutable afterwards.
class Dataset {
public:
    Dataset(Matrix x, Vector y, std::vector<std::string> names, Family family)
        : x_(std::move(x)), y_(std::move(y)), names_(std::move(names)), family_(family)
    {
        validate();
    }

    Dataset(Matrix x, Vector y, Family family) : Dataset(std::move(x), std::move(y), {}, family) {}

    Index n() const { return x_.rows(); }
    Index p() const { return x_.cols(); }
    const Matrix& x() const { return x_; }
    const Vector& y() const { return y_; }
    const std::vector<std::string>& predictor_names() const { return names_; }
    Family family() const { return family_; }

    /// Row subset in the given order.
    Dataset rows(std::span<const Index> idx) const
    {
        Matrix xs(static_cast<Index>(idx.size()), p());
        Vector ys(static_cast<Index>(idx.size()));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            xs.row(static_cast<Index>(r)) = x_.row(idx[r]);
            ys(static_cast<Index>(r)) = y_(idx[r]);
        }
        return Dataset(std::move(xs), std::move(ys), names_, family_);
    }

private:
    void validate()
    {
        if (x_.rows() < 1) fail_validation("dataset needs at least one observation");
        if (x_.cols() < 1) fail_validation("dataset needs at least one predictor");
        if (y_.size() != x_.rows())
            fail_validation("response length " + std::to_string(y_.size()) + " does not match " +
                            std::to_string(x_.rows()) + " design rows");
        if (!x_.allFinite()) fail_validation("design matrix has non-finite entries");
        if (!y_.allFinite()) fail_validation("response has non-finite entries");
        if (names_.empty()) {
            for (Index j = 0; j < x_.cols(); ++j) names_.push_back("x" + std::to_string(j + 1));
        }
        if (static_cast<Index>(names_.size()) != x_.cols())
            fail_validation("predictor name count does not match design columns");
        for (Index i = 0; i < y_.size(); ++i) {
            const double v = y_(i);
            if (family_.kind == FamilyKind::bernoulli && v != 0.0 && v != 1.0)
                fail_validation("bernoulli response must be 0 or 1 (row " + std::to_string(i + 1) + ")");
            if (family_.kind == FamilyKind::poisson && (v < 0.0 || v != std::floor(v)))
                fail_validation("poisson response must be a non-negative integer (row " + std::to_string(i + 1) +
                                ")");
        }
    }

    Matrix x_;
    Vector y_;
    std::vector<std::string> names_;
    Family family_;
};

// ---------------------------------------------------------------------------
// PosteriorDraws
// ---------------------------------------------------------------------------

/// S reference-model draws. Column 0 of `coefficients` is the intercept.
class PosteriorDraws {
public:
    PosteriorDraws(Matrix coefficients, std::optional<Vector> dispersion, Vector weights)
        : coef_(std::move(coefficients)), dispersion_(std::move(dispersion)), weights_(std::move(weights))
    {
        validate();
    }

    /// Uniformly weighted draws.
    PosteriorDraws(Matrix coefficients, std::optional<Vector> dispersion)
        : PosteriorDraws(coefficients, std::move(dispersion),
                         Vector::Constant(coefficients.rows(), 1.0 / static_cast<double>(coefficients.rows())))
    {
    }

    Index size() const { return coef_.rows(); }
    Index num_predictors() const { return coef_.cols() - 1; }
    const Matrix& coefficients() const { return coef_; }
    const std::optional<Vector>& dispersion() const { return dispersion_; }
    const Vector& weights() const { return weights_; }

    std::optional<double> dispersion_at(Index s) const
    {
        if (!dispersion_) return std::nullopt;
        return (*dispersion_)(s);
    }

private:
    void validate()
    {
        if (coef_.rows() < 1) fail_validation("posterior draws: need at least one draw");
        if (coef_.cols() < 1) fail_validation("posterior draws: need an intercept column");
        if (!coef_.allFinite()) fail_validation("posterior draws: non-finite coefficient");
        if (weights_.size() != coef_.rows()) fail_validation("posterior draws: weight count mismatch");
        if ((weights_.array() < 0.0).any() || !weights_.allFinite())
            fail_validation("posterior draws: weights must be finite and non-negative");
        if (std::abs(weights_.sum() - 1.0) > 1e-12) fail_validation("posterior draws: weights must sum to 1");
        if (dispersion_) {
            if (dispersion_->size() != coef_.rows()) fail_validation("posterior draws: dispersion count mismatch");
            if (!dispersion_->allFinite() || (dispersion_->array() <= 0.0).any())
                fail_validation("posterior draws: dispersion must be positive and finite");
        }
    }

    Matrix coef_;
    std::optional<Vector> dispersion_;
    Vector weights_;
};

// ---------------------------------------------------------------------------
// Submodel
// ---------------------------------------------------------------------------

/// Ordered predictor subset (0-based column indices). The intercept is always
/// present and not counted in size().
class Submodel {
public:
    Submodel() = default;
    explicit Submodel(std::vector<Index> indices) : indices_(std::move(indices))
    {
        std::unordered_set<Index> seen;
        for (Index j : indices_) {
            if (j < 0) fail_validation("submodel: negative predictor index");
            if (!seen.insert(j).second) fail_validation("submodel: duplicate predictor index " + std::to_string(j));
        }
    }

    Index size() const { return static_cast<Index>(indices_.size()); }
    const std::vector<Index>& indices() const { return indices_; }

    void check_against(const Dataset& data) const
    {
        for (Index j : indices_)
            if (j >= data.p())
                fail_validation("submodel: predictor index " + std::to_string(j) + " out of range (p = " +
                                std::to_string(data.p()) + ")");
    }

    friend bool operator==(const Submodel&, const Submodel&) = default;

private:
    std::vector<Index> indices_;
};

/// n x (k+1) design with a leading column of ones.
inline Matrix submodel_design(const Dataset& data, const Submodel& sub)
{
    sub.check_against(data);
    Matrix design(data.n(), sub.size() + 1);
    design.col(0).setOnes();
    for (Index c = 0; c < sub.size(); ++c) design.col(c + 1) = data.x().col(sub.indices()[static_cast<std::size_t>(c)]);
    return design;
}

// ---------------------------------------------------------------------------
// Pointwise operations
// ---------------------------------------------------------------------------

inline Vector linear_predictor(const Dataset& data, const Submodel& sub, const Eigen::Ref<const Vector>& coefficients)
{
    sub.check_against(data);
    if (coefficients.size() != sub.size() + 1)
        fail_validation("linear_predictor: expected " + std::to_string(sub.size() + 1) + " coefficients, got " +
                        std::to_string(coefficients.size()));
    Vector eta = Vector::Constant(data.n(), coefficients(0));
    for (Index c = 0; c < sub.size(); ++c)
        eta.noalias() += coefficients(c + 1) * data.x().col(sub.indices()[static_cast<std::size_t>(c)]);
    return eta;
}

inline double clamp_eta(double eta) { return std::clamp(eta, -kEtaClamp, kEtaClamp); }

inline double mean_from_eta(Family family, double eta)
{
    switch (family.kind) {
    case FamilyKind::gaussian: return eta;
    case FamilyKind::bernoulli: return 1.0 / (1.0 + std::exp(-clamp_eta(eta)));
    case FamilyKind::poisson: return std::exp(clamp_eta(eta));
    }
    return eta;
}

inline Vector mean_from_eta(Family family, const Eigen::Ref<const Vector>& eta)
{
    if (!eta.allFinite()) fail_numerical("mean_from_eta: non-finite linear predictor");
    Vector mu(eta.size());
    for (Index i = 0; i < eta.size(); ++i) mu(i) = mean_from_eta(family, eta(i));
    return mu;
}

/// Exact log-density of one observation given its mean (and sigma for Gaussian).
inline double log_density(Family family, double y, double mu, std::optional<double> dispersion = std::nullopt)
{
    switch (family.kind) {
    case FamilyKind::gaussian: {
        if (!dispersion || !(*dispersion > 0.0)) fail_validation("log_density: gaussian needs a positive dispersion");
        const double z = (y - mu) / *dispersion;
        return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(*dispersion) - 0.5 * z * z;
    }
    case FamilyKind::bernoulli: {
        if (!(mu >= 0.0 && mu <= 1.0)) fail_validation("log_density: bernoulli mean outside [0, 1]");
        const double m = std::clamp(mu, kProbClamp, 1.0 - kProbClamp);
        return y * std::log(m) + (1.0 - y) * std::log1p(-m);
    }
    case FamilyKind::poisson: {
        if (!(mu > 0.0) || !std::isfinite(mu)) fail_validation("log_density: poisson mean must be positive");
        return y * std::log(mu) - mu - std::lgamma(y + 1.0);
    }
    }
    return 0.0;
}

/// S x n matrix of log p(y_i | draw s) for the full reference model.
inline Matrix pointwise_log_density(const Dataset& data, const PosteriorDraws& draws)
{
    if (draws.num_predictors() != data.p()) fail_validation("draws and dataset disagree on predictor count");
    if (data.family().has_dispersion() && !draws.dispersion())
        fail_validation("gaussian draws require a dispersion column");
    Matrix eta = draws.coefficients().rightCols(data.p()) * data.x().transpose();
    eta.colwise() += draws.coefficients().col(0);
    Matrix out(draws.size(), data.n());
    for (Index s = 0; s < draws.size(); ++s) {
        const auto disp = draws.dispersion_at(s);
        for (Index i = 0; i < data.n(); ++i)
            out(s, i) = log_density(data.family(), data.y()(i), mean_from_eta(data.family(), eta(s, i)), disp);
    }
    return out;
}

/// Numerically stable log(sum_s w_s exp(a_s)).
inline double log_sum_exp(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& w)
{
    double mx = -std::numeric_limits<double>::infinity();
    for (Index s = 0; s < a.size(); ++s)
        if (w(s) > 0.0) mx = std::max(mx, a(s));
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (Index s = 0; s < a.size(); ++s)
        if (w(s) > 0.0) acc += w(s) * std::exp(a(s) - mx);
    return mx + std::log(acc);
}

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

/// Deterministic sub-seed derivation (splitmix64 finalizer over seed and stream id).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace projpred
