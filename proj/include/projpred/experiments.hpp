#pragma once

#include "core.hpp"
#include "evaluation.hpp"
#include "log.hpp"
#include "parallel.hpp"
#include "projection.hpp"
#include "reference.hpp"
#include "search.hpp"
#include "selection.hpp"

#include <boost/math/distributions/binomial.hpp>

#include <random>
#include <string>
#include <vector>

namespace projpred {

enum class DgpKind { block_correlated, weakly_relevant, overfit_demo, sbc };

inline std::string_view to_string(DgpKind k)
{
    switch (k) {
    case DgpKind::block_correlated: return "block-correlated";
    case DgpKind::weakly_relevant: return "weakly-relevant";
    case DgpKind::overfit_demo: return "overfit-demo";
    case DgpKind::sbc: return "sbc";
    }
    return "unknown";
}

inline DgpKind parse_dgp_kind(std::string_view s)
{
    if (s == "block-correlated") return DgpKind::block_correlated;
    if (s == "weakly-relevant") return DgpKind::weakly_relevant;
    if (s == "overfit-demo") return DgpKind::overfit_demo;
    if (s == "sbc") return DgpKind::sbc;
    fail_validation("unknown data-generating process '" + std::string(s) + "'");
}

struct DgpConfig {
    DgpKind kind = DgpKind::block_correlated;
    Index n = 500;
    Index p = 100;
    double rho = 0.9;
    double r_squared = 0.7;
    double xi = 0.59;  // <= 0: solve xi from r_squared
    double sigma2 = 1.0;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (n < 1 || p < 1) fail_validation("dgp: n and p must be at least 1");
        if (!(rho >= 0.0 && rho < 1.0)) fail_validation("dgp: rho must be in [0, 1)");
        if (!(r_squared > 0.0 && r_squared < 1.0)) fail_validation("dgp: r_squared must be in (0, 1)");
        if (!(sigma2 > 0.0)) fail_validation("dgp: sigma2 must be positive");
        if (kind == DgpKind::block_correlated && p % 5 != 0)
            fail_validation("dgp: block-correlated design needs p divisible by 5 (got " + std::to_string(p) + ")");
    }
};

inline DgpConfig default_dgp(DgpKind kind)
{
    DgpConfig c;
    c.kind = kind;
    switch (kind) {
    case DgpKind::block_correlated: break;
    case DgpKind::weakly_relevant:
        c.p = 50;
        c.rho = 0.1;
        c.r_squared = 0.5;
        break;
    case DgpKind::overfit_demo:
        c.n = 100;
        c.p = 95;
        c.rho = 0.0;
        break;
    case DgpKind::sbc:
        c.n = 100;
        c.p = 20;
        c.rho = 0.0;
        break;
    }
    return c;
}

struct SimulatedData {
    Dataset data;
    Vector weights;  // true coefficients (no intercept)
    double intercept = 0.0;
    double sigma = 1.0;
    double population_r2 = 0.0;
};

namespace detail {

inline Vector standard_normals(std::mt19937_64& rng, Index m)
{
    std::normal_distribution<double> normal;
    Vector z(m);
    for (Index i = 0; i < m; ++i) z(i) = normal(rng);
    return z;
}

// w' R w for a block-diagonal equicorrelation R with 5 x 5 blocks.
inline double block_quadratic(const Vector& w, double rho)
{
    double acc = 0.0;
    for (Index b = 0; b + 5 <= w.size(); b += 5) {
        const auto blk = w.segment(b, 5);
        const double s = blk.sum();
        acc += (1.0 - rho) * blk.squaredNorm() + rho * s * s;
    }
    return acc;
}

inline double equicorrelated_quadratic(const Vector& w, double rho)
{
    const double s = w.sum();
    return (1.0 - rho) * w.squaredNorm() + rho * s * s;
}

inline Vector simulate_response(const Matrix& x, const Vector& w, double intercept, double sigma, std::mt19937_64& rng)
{
    Vector y = x * w;
    y.array() += intercept;
    y += sigma * standard_normals(rng, x.rows());
    return y;
}

}  // namespace detail

/// Correlation matrix of the block design (for oracle checks).
inline Matrix block_correlation(Index p, double rho)
{
    Matrix r = Matrix::Identity(p, p);
    for (Index b = 0; b < p; b += 5)
        for (Index i = b; i < b + 5; ++i)
            for (Index j = b; j < b + 5; ++j)
                if (i != j) r(i, j) = rho;
    return r;
}

/// Relevant-weight pattern (xi, xi/2, xi/4) on the first three blocks.
inline Vector block_weights(Index p, double xi)
{
    Vector w = Vector::Zero(p);
    const double scale[3] = {1.0, 0.5, 0.25};
    for (Index j = 0; j < std::min<Index>(15, p); ++j) w(j) = xi * scale[j / 5];
    return w;
}

inline double population_r2(double quad, double sigma2) { return quad / (quad + sigma2); }

inline SimulatedData generate_block_correlated(const DgpConfig& config)
{
    config.validate();
    if (config.kind != DgpKind::block_correlated) fail_validation("generate_block_correlated: wrong dgp kind");
    double xi = config.xi;
    if (!(xi > 0.0)) {
        const double unit = detail::block_quadratic(block_weights(config.p, 1.0), config.rho);
        xi = std::sqrt(config.sigma2 * config.r_squared / (1.0 - config.r_squared) / unit);
    }
    Matrix block = Matrix::Constant(5, 5, config.rho);
    block.diagonal().setOnes();
    Eigen::LLT<Matrix> llt(block);
    if (llt.info() != Eigen::Success) fail_numerical("block correlation matrix is not positive definite");
    const Matrix lower = llt.matrixL();

    std::mt19937_64 rng(config.seed);
    Matrix x(config.n, config.p);
    for (Index i = 0; i < config.n; ++i)
        for (Index b = 0; b < config.p; b += 5) x.row(i).segment(b, 5) = (lower * detail::standard_normals(rng, 5)).transpose();
    const Vector w = block_weights(config.p, xi);
    const double sigma = std::sqrt(config.sigma2);
    Vector y = detail::simulate_response(x, w, 0.0, sigma, rng);
    SimulatedData out{Dataset(std::move(x), std::move(y), Family::gaussian()), w, 0.0, sigma, 0.0};
    out.population_r2 = population_r2(detail::block_quadratic(w, config.rho), config.sigma2);
    return out;
}

/// Uniform weight giving population R^2 under equicorrelation rho.
inline double weakly_relevant_weight(Index p, double rho, double r_squared, double sigma2)
{
    const double dp = static_cast<double>(p);
    return std::sqrt(sigma2 * r_squared / (1.0 - r_squared) / (dp + dp * (dp - 1.0) * rho));
}

inline SimulatedData generate_weakly_relevant(const DgpConfig& config)
{
    config.validate();
    if (config.kind != DgpKind::weakly_relevant) fail_validation("generate_weakly_relevant: wrong dgp kind");
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal;
    Matrix x(config.n, config.p);
    const double a = std::sqrt(config.rho), b = std::sqrt(1.0 - config.rho);
    for (Index i = 0; i < config.n; ++i) {
        const double common = normal(rng);
        for (Index j = 0; j < config.p; ++j) x(i, j) = a * common + b * normal(rng);
    }
    const Vector w =
        Vector::Constant(config.p, weakly_relevant_weight(config.p, config.rho, config.r_squared, config.sigma2));
    const double sigma = std::sqrt(config.sigma2);
    Vector y = detail::simulate_response(x, w, 0.0, sigma, rng);
    SimulatedData out{Dataset(std::move(x), std::move(y), Family::gaussian()), w, 0.0, sigma, 0.0};
    out.population_r2 = population_r2(detail::equicorrelated_quadratic(w, config.rho), config.sigma2);
    return out;
}

/// Independent standard-normal predictors; the first `relevant` have unit weight.
inline SimulatedData generate_sparse_independent(const DgpConfig& config, Index relevant)
{
    config.validate();
    std::mt19937_64 rng(config.seed);
    Matrix x(config.n, config.p);
    std::normal_distribution<double> normal;
    for (Index i = 0; i < config.n; ++i)
        for (Index j = 0; j < config.p; ++j) x(i, j) = normal(rng);
    Vector w = Vector::Zero(config.p);
    w.head(std::min(relevant, config.p)).setOnes();
    const double sigma = std::sqrt(config.sigma2);
    Vector y = detail::simulate_response(x, w, 0.0, sigma, rng);
    SimulatedData out{Dataset(std::move(x), std::move(y), Family::gaussian()), w, 0.0, sigma, 0.0};
    out.population_r2 = population_r2(w.squaredNorm(), config.sigma2);
    return out;
}

// ---------------------------------------------------------------------------
// Dispersion demo
// ---------------------------------------------------------------------------

struct MarginalSummary {
    double mean = 0.0;
    double sd = 0.0;
};

inline MarginalSummary summarize(const Vector& v)
{
    MarginalSummary s;
    s.mean = v.mean();
    s.sd = v.size() > 1 ? std::sqrt((v.array() - s.mean).square().sum() / static_cast<double>(v.size() - 1)) : 0.0;
    return s;
}

struct DispersionDemoConfig {
    Index n = 100;
    Index p = 95;
    Index relevant = 15;
    Index num_draws = 1000;
    ConjugatePrior prior{10.0, 1.0, 1.0, 100.0, true};
    std::uint64_t seed = 1;
};

struct DispersionDemoReport {
    Vector sigma_reference;   // per draw
    Vector sigma_projected;   // per draw
    MarginalSummary beta1_reference, beta1_projected;
    MarginalSummary beta2_reference, beta2_projected;
    double fraction_inflated = 0.0;  // share of draws with sigma_proj >= sigma_ref
    Index num_draws = 0;
};

inline DispersionDemoReport run_dispersion_demo(const DispersionDemoConfig& config = {})
{
    if (config.relevant < 2 || config.relevant > config.p) fail_validation("dispersion demo: need 2 <= relevant <= p");
    DgpConfig dgp = default_dgp(DgpKind::overfit_demo);
    dgp.n = config.n;
    dgp.p = config.p;
    dgp.seed = derive_seed(config.seed, 1);
    const SimulatedData sim = generate_sparse_independent(dgp, config.relevant);
    const PosteriorDraws draws = fit_conjugate_gaussian(sim.data, config.prior, config.num_draws, derive_seed(config.seed, 2));
    std::vector<Index> truth(static_cast<std::size_t>(config.relevant));
    std::iota(truth.begin(), truth.end(), Index{0});
    const ProjectedPosterior proj = project_drawwise(sim.data, Submodel(truth), draws);

    DispersionDemoReport r;
    r.num_draws = draws.size();
    r.sigma_reference = *draws.dispersion();
    r.sigma_projected = *proj.dispersion;
    Index inflated = 0;
    for (Index s = 0; s < r.num_draws; ++s)
        if (r.sigma_projected(s) >= r.sigma_reference(s)) ++inflated;
    r.fraction_inflated = static_cast<double>(inflated) / static_cast<double>(r.num_draws);
    r.beta1_reference = summarize(draws.coefficients().col(1));
    r.beta2_reference = summarize(draws.coefficients().col(2));
    r.beta1_projected = summarize(proj.coefficients.col(1));
    r.beta2_projected = summarize(proj.coefficients.col(2));
    return r;
}

// ---------------------------------------------------------------------------
// Simultaneous ECDF band for rank uniformity
// ---------------------------------------------------------------------------

/// Ranks take values 0..L-1. The ECDF is checked at z_j = j/L, j = 1..L-1,
/// where under uniformity N * ECDF(z_j) ~ Binomial(N, z_j) exactly.
struct EcdfBand {
    Index num_ranks = 0;    // N
    Index num_levels = 0;   // L
    double alpha = 0.05;
    double gamma = 0.0;     // adjusted pointwise level
    Vector z;
    Vector lower;  // count bounds
    Vector upper;
};

namespace detail {

// Smallest two-sided pointwise tail probability of the ECDF over the grid.
inline double ecdf_min_tail(const std::vector<Index>& counts_below, Index n, Index levels)
{
    double worst = 1.0;
    for (Index j = 1; j < levels; ++j) {
        const double z = static_cast<double>(j) / static_cast<double>(levels);
        const boost::math::binomial_distribution<double> dist(static_cast<double>(n), z);
        const auto c = static_cast<double>(counts_below[static_cast<std::size_t>(j)]);
        const double lo = boost::math::cdf(dist, c);
        const double hi = c > 0.0 ? boost::math::cdf(boost::math::complement(dist, c - 1.0)) : 1.0;
        worst = std::min(worst, std::min(lo, hi));
    }
    return worst;
}

inline std::vector<Index> counts_below(const std::vector<Index>& ranks, Index levels)
{
    std::vector<Index> hist(static_cast<std::size_t>(levels), 0);
    for (Index r : ranks) {
        if (r < 0 || r >= levels) fail_validation("ecdf: rank outside [0, levels)");
        ++hist[static_cast<std::size_t>(r)];
    }
    std::vector<Index> below(static_cast<std::size_t>(levels), 0);
    for (Index j = 1; j < levels; ++j) below[static_cast<std::size_t>(j)] = below[static_cast<std::size_t>(j - 1)] + hist[static_cast<std::size_t>(j - 1)];
    return below;
}

}  // namespace detail

/// Calibrates gamma by simulating uniform ranks so that the band holds for the
/// whole ECDF with probability 1 - alpha.
inline EcdfBand ecdf_band(Index num_ranks, Index num_levels, double alpha = 0.05, Index simulations = 2000,
                          std::uint64_t seed = 7)
{
    if (num_ranks < 1 || num_levels < 2) fail_validation("ecdf_band: need at least one rank and two levels");
    EcdfBand band;
    band.num_ranks = num_ranks;
    band.num_levels = num_levels;
    band.alpha = alpha;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> unif(0, num_levels - 1);
    std::vector<double> stats(static_cast<std::size_t>(simulations));
    std::vector<Index> ranks(static_cast<std::size_t>(num_ranks));
    for (auto& st : stats) {
        for (auto& r : ranks) r = unif(rng);
        st = detail::ecdf_min_tail(detail::counts_below(ranks, num_levels), num_ranks, num_levels);
    }
    std::sort(stats.begin(), stats.end());
    const auto idx = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(simulations)));
    band.gamma = stats[std::min(idx, stats.size() - 1)];

    band.z.resize(num_levels - 1);
    band.lower.resize(num_levels - 1);
    band.upper.resize(num_levels - 1);
    for (Index j = 1; j < num_levels; ++j) {
        const double z = static_cast<double>(j) / static_cast<double>(num_levels);
        const boost::math::binomial_distribution<double> dist(static_cast<double>(num_ranks), z);
        double lo = 0.0;
        while (lo < static_cast<double>(num_ranks) && boost::math::cdf(dist, lo) < band.gamma) lo += 1.0;
        double hi = static_cast<double>(num_ranks);
        while (hi > 0.0 && boost::math::cdf(boost::math::complement(dist, hi - 1.0)) < band.gamma) hi -= 1.0;
        band.z(j - 1) = z;
        band.lower(j - 1) = lo;
        band.upper(j - 1) = hi;
    }
    return band;
}

inline bool ecdf_within_band(const std::vector<Index>& ranks, const EcdfBand& band)
{
    if (static_cast<Index>(ranks.size()) != band.num_ranks) fail_validation("ecdf: rank count does not match band");
    const auto below = detail::counts_below(ranks, band.num_levels);
    for (Index j = 1; j < band.num_levels; ++j) {
        const auto c = static_cast<double>(below[static_cast<std::size_t>(j)]);
        if (c < band.lower(j - 1) || c > band.upper(j - 1)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Simulation-based calibration
// ---------------------------------------------------------------------------

struct SbcConfig {
    Index replications = 200;
    Index n = 100;
    Index p = 20;  // standard-normal predictors; the treatment column is appended
    ConjugatePrior truth_prior{1.0, 5.0, 4.0, 1.0, false};
    double inference_ridge_multiplier = 1.0;
    Index num_draws = 399;
    Index folds = 10;
    SearchConfig search{};
    Index eval_draws = 400;
    SelectionRule rule = SelectionRule::se;
    double delta_threshold = 4.0;
    double alpha = 0.05;
    Index band_simulations = 2000;
    std::uint64_t seed = 1;
    unsigned jobs = 1;

    void validate() const
    {
        if (replications < 50) fail_validation("sbc: at least 50 replications are required");
        if (n < 2 * folds) fail_validation("sbc: n too small for the number of folds");
        if (p < 1) fail_validation("sbc: need at least one standard-normal predictor");
        if (num_draws < 1) fail_validation("sbc: need at least one posterior draw");
        if (!(inference_ridge_multiplier > 0.0)) fail_validation("sbc: ridge multiplier must be positive");
        truth_prior.validate();
    }
};

struct SbcReplication {
    bool ok = false;
    std::string error;
    Index rank = 0;
    double normalized_rank = 0.0;  // (rank + 1) / (S + 1)
    Index selected_size = 0;
    std::vector<Index> selected;
    bool treatment_included = false;
    double true_treatment = 0.0;
};

struct SbcResult {
    std::vector<SbcReplication> replications;
    std::vector<Index> ranks;  // successful replications only
    Index requested = 0;
    Index failures = 0;
    Index num_levels = 0;
    EcdfBand band;
    bool passed = false;
};

/// Draws a synthetic truth from the conjugate prior and simulates data with a
/// Bernoulli(0.5) treatment column as the last predictor.
inline SimulatedData sbc_simulate(const SbcConfig& config, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::gamma_distribution<double> gamma(config.truth_prior.a0, 1.0 / config.truth_prior.b0);
    const double sigma = std::sqrt(1.0 / gamma(rng));
    const Index p = config.p + 1;
    Vector w(p);
    for (Index j = 0; j < p; ++j) w(j) = sigma * config.truth_prior.ridge_scale * normal(rng);
    const double intercept = sigma * config.truth_prior.intercept_scale * normal(rng);
    Matrix x(config.n, p);
    std::bernoulli_distribution coin(0.5);
    for (Index i = 0; i < config.n; ++i) {
        for (Index j = 0; j < config.p; ++j) x(i, j) = normal(rng);
        x(i, config.p) = coin(rng) ? 1.0 : 0.0;
    }
    Vector y = detail::simulate_response(x, w, intercept, sigma, rng);
    std::vector<std::string> names;
    for (Index j = 0; j < config.p; ++j) names.push_back("x" + std::to_string(j + 1));
    names.emplace_back("treatment");
    SimulatedData out{Dataset(std::move(x), std::move(y), std::move(names), Family::gaussian()), w, intercept, sigma, 0.0};
    out.population_r2 = 0.0;
    return out;
}

inline SbcReplication sbc_replication(const SbcConfig& config, std::uint64_t seed)
{
    SbcReplication rep;
    try {
        const SimulatedData sim = sbc_simulate(config, derive_seed(seed, 1));
        const Index treatment = config.p;
        rep.true_treatment = sim.weights(treatment);
        ConjugatePrior inference = config.truth_prior;
        inference.ridge_scale *= config.inference_ridge_multiplier;

        const PosteriorDraws draws = fit_conjugate_gaussian(sim.data, inference, config.num_draws, derive_seed(seed, 2));
        KFoldConfig kcfg;
        kcfg.folds = config.folds;
        kcfg.search = config.search;
        kcfg.eval_draws = config.eval_draws;
        kcfg.forced = {treatment};
        kcfg.seed = derive_seed(seed, 3);
        kcfg.jobs = 1;
        const KFoldResult cv = kfold_cv_with_search(sim.data, conjugate_reference(inference, config.num_draws), kcfg);

        SelectionConfig scfg;
        scfg.rule = config.rule;
        scfg.delta_threshold = config.delta_threshold;
        const SelectionReport report = select_size(cv.evaluation, scfg);
        rep.selected_size = std::max<Index>(1, report.selected_size);

        SearchConfig sc = config.search;
        sc.seed = derive_seed(seed, 4);
        sc.jobs = 1;
        const SolutionPath full = with_forced_prefix(run_search(sim.data, draws, sc), {treatment}, sim.data, pooled_draw(draws));
        rep.selected_size = std::min(rep.selected_size, full.max_size());
        const Submodel sub = full.prefix(rep.selected_size);
        rep.selected = sub.indices();
        const auto pos = std::find(rep.selected.begin(), rep.selected.end(), treatment);
        rep.treatment_included = pos != rep.selected.end();
        if (!rep.treatment_included) fail_numerical("sbc: forced treatment missing from the selected submodel");
        const ProjectedPosterior proj = project_drawwise(sim.data, sub, draws);
        const Index col = 1 + static_cast<Index>(pos - rep.selected.begin());
        Index rank = 0;
        for (Index s = 0; s < proj.size(); ++s)
            if (proj.coefficients(s, col) < rep.true_treatment) ++rank;
        rep.rank = rank;
        rep.normalized_rank = static_cast<double>(rank + 1) / static_cast<double>(proj.size() + 1);
        rep.ok = true;
    } catch (const Error& e) {
        rep.error = e.what();
    }
    return rep;
}

inline SbcResult run_sbc(const SbcConfig& config)
{
    config.validate();
    SbcResult result;
    result.requested = config.replications;
    result.num_levels = config.num_draws + 1;
    result.replications.resize(static_cast<std::size_t>(config.replications));
    {
        ScopedSilence quiet;
        parallel_for(static_cast<std::size_t>(config.replications), config.jobs, [&](std::size_t r) {
            result.replications[r] = sbc_replication(config, derive_seed(config.seed, 1000 + r));
        });
    }
    for (std::size_t r = 0; r < result.replications.size(); ++r) {
        const auto& rep = result.replications[r];
        if (rep.ok) {
            result.ranks.push_back(rep.rank);
        } else {
            ++result.failures;
            warn("sbc: replication " + std::to_string(r + 1) + " failed: " + rep.error);
        }
    }
    if (result.ranks.empty()) fail_numerical("sbc: every replication failed");
    result.band = ecdf_band(static_cast<Index>(result.ranks.size()), result.num_levels, config.alpha,
                            config.band_simulations, derive_seed(config.seed, 7));
    result.passed = ecdf_within_band(result.ranks, result.band);
    return result;
}

}  // namespace projpred
