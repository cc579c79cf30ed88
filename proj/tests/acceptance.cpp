// End-to-end acceptance checks. Usage: acceptance [--criterion N]
#include "oracles.hpp"
#include "projpred/projpred.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

using namespace projpred;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

unsigned jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string fmt(double v, int digits = 3)
{
    std::ostringstream o;
    o.precision(digits);
    o << v;
    return o.str();
}

SolutionPath identity_path(Index p)
{
    SolutionPath path;
    for (Index j = 0; j < p; ++j) path.order.push_back(j);
    path.kl_at_size = Vector::Zero(p + 1);
    return path;
}

Matrix with_intercept(const Matrix& x)
{
    Matrix out(x.rows(), x.cols() + 1);
    out.col(0).setOnes();
    out.rightCols(x.cols()) = x;
    return out;
}

// Full-data search and PSIS evaluation, then CV including the search up to the
// bulge truncation point (the whole path when no bulge is flagged).
struct Pipeline {
    PathEvaluation fulldata;
    BulgeResult bulge;
    KFoldResult cv;
    PosteriorDraws draws;
};

Pipeline run_pipeline(const Dataset& d, std::uint64_t seed, Index num_draws, bool truncate)
{
    const ConjugatePrior prior{};
    Pipeline out{{}, {}, {}, fit_conjugate_gaussian(d, prior, num_draws, derive_seed(seed, 1))};
    SearchConfig sc;
    sc.clusters = 20;
    sc.seed = derive_seed(seed, 2);
    sc.jobs = jobs();
    const SolutionPath path = run_search(d, out.draws, sc);
    FullDataEvalConfig fc;
    fc.eval_draws = 400;
    fc.seed = derive_seed(seed, 3);
    fc.jobs = jobs();
    out.fulldata = evaluate_path_fulldata(path, d, out.draws, fc);
    out.bulge = bulge_diagnostic(out.fulldata);

    KFoldConfig kc;
    kc.folds = 10;
    kc.search = sc;
    kc.search.jobs = 1;
    if (truncate) kc.search.p_max = std::max<Index>(1, out.bulge.argmax_size);
    kc.eval_draws = 400;
    kc.seed = derive_seed(seed, 4);
    kc.jobs = jobs();
    out.cv = kfold_cv_with_search(d, conjugate_reference(prior, num_draws), kc);
    return out;
}

Outcome criterion1()
{
    ScopedSilence quiet;
    const auto t0 = Clock::now();
    DgpConfig dgp = default_dgp(DgpKind::block_correlated);
    dgp.seed = 1;
    const Dataset d = generate_block_correlated(dgp).data;
    const PosteriorDraws draws = fit_conjugate_gaussian(d, ConjugatePrior{}, 400, 2);
    const ClusteredDraws cl = cluster_draws(draws, d, 20, 3);
    const Submodel full = identity_path(d.p()).prefix(d.p());
    const ProjectedPosterior proj = project_clustered(d, full, cl);

    FullDataEvalConfig fc;
    fc.jobs = jobs();
    const PathEvaluation e = evaluate_path_fulldata(identity_path(d.p()), d, draws, fc);
    const double delta = e.delta_elpd(d.p()), se = e.se_delta(d.p());
    const double t = seconds_since(t0);
    const bool ok = proj.kl_total <= 1e-8 && std::abs(delta) <= 2.0 * se && t < 5.0;
    return {ok, "kl_total=" + fmt(proj.kl_total) + " full-size delta=" + fmt(delta) + " s=" + fmt(se) +
                    " runtime=" + fmt(t) + "s (limits 1e-8, 2s, 5s)"};
}

Outcome criterion2()
{
    const auto t0 = Clock::now();
    Vector beta(5);
    beta << 1.0, -0.5, 0.0, 0.3, 0.0;
    const Dataset d = oracle::gaussian_data(50, beta, 1.0, 12, 0.3);
    const ConjugatePrior prior{1.0, 2.0, 2.0, 10.0, false};
    const PosteriorDraws draws = fit_conjugate_gaussian(d, prior, 4000, 5);
    const auto [loo, diag] = psis_loo_elpd(pointwise_log_density(d, draws), draws, d);
    const Vector exact =
        oracle::nig_exact_loo(with_intercept(d.x()), d.y(), conjugate_prior_precision(d, prior), prior.a0, prior.b0);
    const double gap = std::abs(loo.sum() - exact.sum());
    const double kmax = diag.khat_per_observation.maxCoeff();
    const double t = seconds_since(t0);
    const bool ok = gap <= 0.5 && kmax < 0.7 && t < 10.0;
    return {ok, "psis=" + fmt(loo.sum(), 6) + " exact=" + fmt(exact.sum(), 6) + " gap=" + fmt(gap) +
                    " max khat=" + fmt(kmax) + " runtime=" + fmt(t) + "s (limits 0.5, 0.7, 10s)"};
}

double mean_distance(const Matrix& m, const std::vector<Index>& a, const std::vector<Index>& b, bool same)
{
    double sum = 0.0;
    Index count = 0;
    for (Index i : a)
        for (Index j : b) {
            if (same && i >= j) continue;
            sum += m(i, j);
            ++count;
        }
    return sum / static_cast<double>(count);
}

Outcome criterion3()
{
    ScopedSilence quiet;
    const auto t0 = Clock::now();
    DgpConfig dgp = default_dgp(DgpKind::block_correlated);
    dgp.seed = 1;
    const Dataset d = generate_block_correlated(dgp).data;
    const Pipeline run = run_pipeline(d, 7, 1000, true);
    const PathEvaluation& e = run.cv.evaluation;
    SelectionConfig scfg;
    scfg.rule = SelectionRule::delta;
    const SelectionReport rep = select_size(e, scfg);
    const Index k = rep.selected_size;
    const bool size_ok = k <= 15 && e.delta_elpd(k) >= -4.0 - e.se_delta(k);

    const Matrix dist = distance_matrix(d, run.draws, jobs());
    bool blocks_ok = true;
    std::string block_detail;
    for (Index b = 0; b < 3; ++b) {
        std::vector<Index> in, out;
        for (Index j = 0; j < d.p(); ++j) (j / 5 == b ? in : out).push_back(j);
        const double within = mean_distance(dist, in, in, true);
        const double cross = mean_distance(dist, in, out, false);
        blocks_ok = blocks_ok && within < cross;
        block_detail += " block" + std::to_string(b + 1) + "=" + fmt(within) + "/" + fmt(cross);
    }
    const double t = seconds_since(t0);
    const bool ok = size_ok && blocks_ok && t < 600.0;
    return {ok, "bulge=" + std::string(run.bulge.flagged ? "yes" : "no") + " cv p_max=" +
                    std::to_string(e.delta_elpd.size() - 1) + " size=" + std::to_string(k) +
                    " delta=" + fmt(e.delta_elpd(k)) + " s=" + fmt(e.se_delta(k)) +
                    (rep.fallback_used ? " (fallback)" : "") + " within/cross:" + block_detail +
                    " runtime=" + fmt(t) + "s (limits size<=15, delta>=-4-s, 600s)"};
}

Outcome criterion4()
{
    ScopedSilence quiet;
    const auto t0 = Clock::now();
    bool ok = true;
    std::string detail = "sizes:";
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        DgpConfig dgp = default_dgp(DgpKind::weakly_relevant);
        dgp.seed = seed;
        const Dataset d = generate_weakly_relevant(dgp).data;
        const Pipeline run = run_pipeline(d, 100 + seed, 1000, false);
        const PathEvaluation& e = run.cv.evaluation;
        SelectionConfig scfg;
        scfg.rule = SelectionRule::delta;
        scfg.smooth = true;
        const SelectionReport rep = select_size(e, scfg);
        const Vector& curve = rep.smoothed_curve->normalized;
        bool monotone = true;
        for (Index k = rep.smoothed_curve->drop_prefix + 1; k < curve.size(); ++k)
            monotone = monotone && curve(k) >= curve(k - 1);
        const Index k = rep.selected_size;
        const bool seed_ok = monotone && k >= 15 && k <= 45 && e.delta_elpd(k) >= -4.0 - e.se_delta(k);
        ok = ok && seed_ok;
        detail += " " + std::to_string(k) + (monotone ? "" : "(non-monotone)") + "[delta=" + fmt(e.delta_elpd(k)) +
                  ",s=" + fmt(e.se_delta(k)) + "]";
    }
    const double t = seconds_since(t0);
    ok = ok && t < 600.0;
    return {ok, detail + " runtime=" + fmt(t) + "s (limits [15,45], delta>=-4-s, 600s)"};
}

Outcome criterion5()
{
    ScopedSilence quiet;
    const auto t0 = Clock::now();
    int bulges = 0, decreases = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        DgpConfig dgp = default_dgp(DgpKind::block_correlated);
        dgp.seed = 200 + seed;
        const Dataset d = generate_block_correlated(dgp).data;
        const Pipeline run = run_pipeline(d, 300 + seed, 1000, true);
        const double full_max = run.fulldata.delta_elpd.maxCoeff();
        const double cv_max = run.cv.evaluation.delta_elpd.maxCoeff();
        bulges += run.bulge.flagged;
        decreases += cv_max < full_max;
        detail += " [" + std::string(run.bulge.flagged ? "bulge" : "none") + " full max=" + fmt(full_max) +
                  " cv max=" + fmt(cv_max) + "]";
    }
    const bool ok = bulges >= 3 && decreases >= 4;
    return {ok, "bulges=" + std::to_string(bulges) + "/5 decreases=" + std::to_string(decreases) + "/5" + detail +
                    " runtime=" + fmt(seconds_since(t0)) + "s (limits 3/5, 4/5)"};
}

Outcome criterion6()
{
    const DispersionDemoReport r = run_dispersion_demo();
    Index below = 0;
    for (Index s = 0; s < r.num_draws; ++s) below += r.sigma_projected(s) < r.sigma_reference(s);
    const bool ok = r.fraction_inflated == 1.0 && below == 0;
    return {ok, "draws=" + std::to_string(r.num_draws) + " inflated fraction=" + fmt(r.fraction_inflated, 6) +
                    " (limit 1.0 exactly)"};
}

Outcome criterion7()
{
    ScopedSilence quiet;
    int good = 0;
    const Family families[3] = {Family::gaussian(), Family::bernoulli(), Family::poisson()};
    for (std::uint64_t inst = 1; inst <= 10; ++inst) {
        const Family f = families[inst % 3];
        const Index n = 40 + static_cast<Index>(inst) * 3, p = 3 + static_cast<Index>(inst % 4), s = 12;
        Vector beta = oracle::normal_matrix(p, 1, inst).col(0) * 0.5;
        Dataset d = f == Family::gaussian()    ? oracle::gaussian_data(n, beta, 1.0, inst)
                    : f == Family::bernoulli() ? oracle::bernoulli_data(n, beta, inst)
                                               : oracle::poisson_data(n, beta, inst);
        const PosteriorDraws draws = f == Family::gaussian()
                                         ? fit_conjugate_gaussian(d, ConjugatePrior{}, s, inst)
                                         : PosteriorDraws(Matrix(oracle::normal_matrix(s, p + 1, inst + 50) * 0.3), std::nullopt);
        std::vector<Index> idx;
        for (Index j = 0; j < p; j += 2) idx.push_back(j);
        const Submodel sub(idx);

        const ProjectedPosterior all = project_clustered(d, sub, cluster_draws(draws, d, s, inst));
        const ProjectedPosterior dw = project_drawwise(d, sub, draws);
        bool same = all.coefficients == dw.coefficients && all.weights == dw.weights && all.kl_total == dw.kl_total;
        if (dw.dispersion) same = same && all.dispersion && *all.dispersion == *dw.dispersion;

        const ClusteredDraws one = cluster_draws(draws, d, 1, inst);
        const ProjectedPosterior pc = project_clustered(d, sub, one);
        const PosteriorDraws pooled = pooled_draw(draws);
        const SingleProjection sp =
            project_single(d, sub, fitted_means(d, pooled).row(0).transpose(), pooled.dispersion_at(0));
        same = same && pc.size() == 1 && Vector(pc.coefficients.row(0).transpose()) == sp.coefficients &&
               pc.kl_total == sp.kl && pc.dispersion_at(0) == sp.dispersion;
        good += same;
    }
    return {good == 10, std::to_string(good) + "/10 instances bit-identical"};
}

Outcome criterion8()
{
    ScopedSilence quiet;
    bool ok = true;
    std::string detail;
    for (Index p : {3, 13, 25}) {
        Vector beta = oracle::normal_matrix(p, 1, static_cast<std::uint64_t>(p)).col(0);
        const Dataset d = oracle::gaussian_data(120, beta, 1.0, static_cast<std::uint64_t>(p));
        const PosteriorDraws draws = fit_conjugate_gaussian(d, ConjugatePrior{}, 100, 1);
        SearchConfig sc;
        sc.clusters = 10;
        const std::uint64_t before = projection_counter().load();
        const SolutionPath path = run_search(d, draws, sc);
        const std::uint64_t counted = projection_counter().load() - before;
        const auto expected = static_cast<std::uint64_t>(p * (p + 1) / 2 + 1);
        ok = ok && counted == expected && path.projection_count == expected;
        detail += " p=" + std::to_string(p) + ":" + std::to_string(counted) + "/" + std::to_string(expected);
    }
    return {ok, "counted/expected" + detail};
}

Outcome criterion9()
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> folds(2, 20), preds(1, 200), clusters(1, 50), evalc(1, 1000);
    std::uniform_real_distribution<double> tproj(1e-4, 2.0);
    int exact = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const double k = folds(rng), p = preds(rng), c = clusters(rng), ce = evalc(rng), t = tproj(rng);
        const double search = k * (p * (p + 1.0) / 2.0 + 1.0) * t;
        const double eval = k * (p + 1.0) * (ce / c) * t;
        const CostEstimate got = estimate_costs(k, p, c, ce, t);
        exact += got.t_search == search && got.t_eval == eval && got.t_total == search + eval;
    }
    return {exact == 20, std::to_string(exact) + "/20 tuples exact"};
}

Outcome criterion10()
{
    ScopedSilence quiet;
    auto t0 = Clock::now();
    SbcConfig cfg;
    cfg.seed = 1;
    cfg.jobs = jobs();
    const SbcResult main = run_sbc(cfg);
    const double t_main = seconds_since(t0);

    t0 = Clock::now();
    int contrast_failures = 0;
    std::string contrast;
    for (std::uint64_t meta = 1; meta <= 5; ++meta) {
        SbcConfig c = cfg;
        c.seed = 1000 + meta;
        c.inference_ridge_multiplier = 100.0;
        const SbcResult r = run_sbc(c);
        contrast_failures += !r.passed;
        contrast += r.passed ? " pass" : " fail";
    }
    const double t_contrast = seconds_since(t0);
    const bool ok = main.passed && main.failures == 0 && t_main < 1800.0 && contrast_failures >= 3;
    return {ok, "calibrated band " + std::string(main.passed ? "passed" : "failed") + " (" +
                    std::to_string(main.ranks.size()) + " ranks, " + std::to_string(main.failures) +
                    " failed replications, runtime=" + fmt(t_main) + "s); ridge x100 contrast:" + contrast + " -> " +
                    std::to_string(contrast_failures) + "/5 band failures (runtime=" + fmt(t_contrast) +
                    "s) (limits band pass, 1800s, >=3/5 contrast failures)"};
}

Outcome criterion11()
{
    const auto t0 = Clock::now();
    const std::string cmd = std::string("\"") + PROJPRED_PROPERTIES + "\" --gtest_brief=1 > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    const double t = seconds_since(t0);
    const bool ok = status == 0 && t < 120.0;
    return {ok, "property suite exit=" + std::to_string(status) + " runtime=" + fmt(t) + "s (limit 120s)"};
}

const std::function<Outcome()> kCriteria[] = {criterion1, criterion2, criterion3, criterion4,  criterion5, criterion6,
                                              criterion7, criterion8, criterion9, criterion10, criterion11};

}  // namespace

int main(int argc, char** argv)
{
    std::vector<int> which;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--criterion" && i + 1 < argc) {
            which.push_back(std::atoi(argv[++i]));
        } else {
            std::cerr << "usage: acceptance [--criterion N]\n";
            return 2;
        }
    }
    if (which.empty())
        for (int c = 1; c <= 11; ++c) which.push_back(c);

    bool all = true;
    for (int c : which) {
        if (c < 1 || c > 11) {
            std::cerr << "unknown criterion " << c << "\n";
            return 2;
        }
        Outcome o;
        try {
            o = kCriteria[c - 1]();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << " " << o.detail << std::endl;
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
