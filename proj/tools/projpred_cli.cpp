// projpred command-line front end: simulate | search | eval | select | distance | sbc

#include "projpred/projpred.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace projpred;
using nlohmann::json;

namespace {

struct Options {
    std::string config;
    std::uint64_t seed = 1;
    unsigned jobs = 1;
    std::string out_dir = ".";

    // inputs
    std::string data = "data.csv";
    std::string draws = "draws.csv";
    std::string path = "path.json";
    std::string eval = "eval.json";
    std::string family = "gaussian";

    // simulate
    std::string dgp = "block-correlated";
    Index n = 0, p = 0;
    double rho = -1.0, r_squared = -1.0, xi = -1.0, sigma2 = 1.0;
    Index num_draws = 4000;
    double ridge_scale = 1.0, a0 = 1.0, b0 = 1.0, intercept_scale = 100.0;

    // search
    std::string method = "forward";
    Index p_max = 0;
    Index clusters = 20;
    Index lambda_grid = 100;

    // eval
    Index eval_draws = 400;
    bool cv_search = false;
    Index folds = 10;
    double khat_threshold = 0.7;

    // select
    std::string rule = "delta";
    double threshold = 4.0;
    bool smooth = false;
    Index drop_prefix = 1;

    // sbc
    Index replications = 200;
    double ridge_multiplier = 1.0;
};

std::string out_path(const Options& o, const std::string& name) { return (fs::path(o.out_dir) / name).string(); }

void ensure_out_dir(const Options& o)
{
    std::error_code ec;
    fs::create_directories(o.out_dir, ec);
    if (ec) fail_validation("cannot create output directory '" + o.out_dir + "'");
}

template <class Fn>
void write_file(const std::string& path, Fn&& fn)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) fail_validation("cannot open '" + path + "' for writing");
    fn(out);
}

ConjugatePrior prior_from(const Options& o)
{
    ConjugatePrior prior;
    prior.ridge_scale = o.ridge_scale;
    prior.a0 = o.a0;
    prior.b0 = o.b0;
    prior.intercept_scale = o.intercept_scale;
    prior.validate();
    return prior;
}

SearchConfig search_config(const Options& o)
{
    SearchConfig sc;
    sc.method = parse_search_method(o.method);
    sc.p_max = o.p_max;
    sc.clusters = o.clusters;
    sc.lambda_grid_size = o.lambda_grid;
    sc.seed = derive_seed(o.seed, 2);
    sc.jobs = o.jobs;
    return sc;
}

std::pair<Dataset, PosteriorDraws> load_inputs(const Options& o)
{
    return io::ingest_draws(o.draws, o.data, Family::parse(o.family));
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Options& o)
{
    if (o.n < 0 || o.p < 0) fail_validation("simulate: n and p must be positive");
    DgpConfig dgp = default_dgp(parse_dgp_kind(o.dgp));
    if (o.n > 0) dgp.n = o.n;
    if (o.p > 0) dgp.p = o.p;
    if (o.rho >= 0.0) dgp.rho = o.rho;
    if (o.r_squared >= 0.0) dgp.r_squared = o.r_squared;
    if (o.xi >= 0.0) dgp.xi = o.xi;
    dgp.sigma2 = o.sigma2;
    dgp.seed = derive_seed(o.seed, 1);
    dgp.validate();

    SimulatedData sim = [&] {
        switch (dgp.kind) {
        case DgpKind::block_correlated: return generate_block_correlated(dgp);
        case DgpKind::weakly_relevant: return generate_weakly_relevant(dgp);
        case DgpKind::overfit_demo: return generate_sparse_independent(dgp, std::min<Index>(15, dgp.p));
        case DgpKind::sbc: {
            SbcConfig sc;
            sc.n = dgp.n;
            sc.p = dgp.p;
            return sbc_simulate(sc, dgp.seed);
        }
        }
        fail_validation("simulate: unsupported dgp");
    }();
    ConjugatePrior prior = prior_from(o);
    if (dgp.kind == DgpKind::overfit_demo) prior.ridge_scale = std::max(prior.ridge_scale, 10.0);
    const PosteriorDraws draws = fit_conjugate_gaussian(sim.data, prior, o.num_draws, derive_seed(o.seed, 2));

    ensure_out_dir(o);
    io::write_dataset(out_path(o, "data.csv"), sim.data);
    io::write_draws(out_path(o, "draws.csv"), draws);
    io::write_json(out_path(o, "truth.json"), io::truth_json(sim, dgp));
    std::cout << "simulated " << to_string(dgp.kind) << ": n=" << sim.data.n() << " p=" << sim.data.p()
              << " draws=" << draws.size() << "\n";

    if (dgp.kind == DgpKind::overfit_demo) {
        DispersionDemoConfig dc;
        dc.n = dgp.n;
        dc.p = dgp.p;
        dc.relevant = std::min<Index>(15, dgp.p);
        dc.num_draws = std::min<Index>(o.num_draws, 1000);
        dc.prior = prior;
        dc.seed = o.seed;
        const auto report = run_dispersion_demo(dc);
        const std::string stem = "dispersion_" + std::to_string(o.seed);
        io::write_json(out_path(o, stem + ".json"), io::dispersion_demo_json(report));
        write_file(out_path(o, stem + ".csv"), [&](std::ostream& out) {
            out << "draw,sigma_reference,sigma_projected\n";
            for (Index s = 0; s < report.num_draws; ++s)
                out << s + 1 << ',' << io::format_double(report.sigma_reference(s)) << ','
                    << io::format_double(report.sigma_projected(s)) << '\n';
        });
        std::cout << "dispersion inflated in " << report.fraction_inflated * 100.0 << "% of draws\n";
    }
    return 0;
}

int cmd_search(const Options& o)
{
    const auto [data, draws] = load_inputs(o);
    const SearchConfig sc = search_config(o);
    const auto t0 = std::chrono::steady_clock::now();
    const SolutionPath path = run_search(data, draws, sc);
    const double elapsed = seconds_since(t0);
    ensure_out_dir(o);
    io::write_json(out_path(o, "path.json"), io::path_json(path, data));
    const double t_proj = path.projection_count > 0 ? elapsed / static_cast<double>(path.projection_count) : 0.0;
    std::cout << "search: method=" << to_string(path.method) << " size=" << path.max_size()
              << " projections=" << path.projection_count << " t_proj=" << t_proj << "s\n";
    return 0;
}

/// Median wall time of one clustered projection onto a mid-path submodel.
double measure_t_proj(const Dataset& data, const PosteriorDraws& draws, const SolutionPath& path, Index clusters,
                      std::uint64_t seed)
{
    const auto cl = cluster_draws(draws, data, std::min(clusters, draws.size()), seed);
    const Submodel sub = path.prefix(path.max_size() / 2);
    std::vector<double> t;
    for (int r = 0; r < 3; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        (void)project_clustered(data, sub, cl);
        t.push_back(seconds_since(t0));
    }
    std::sort(t.begin(), t.end());
    return t[1];
}

int cmd_eval(const Options& o)
{
    const auto [data, draws] = load_inputs(o);
    ensure_out_dir(o);
    PathEvaluation eval;
    SolutionPath path;
    if (o.cv_search) {
        KFoldConfig kc;
        kc.folds = o.folds;
        kc.search = search_config(o);
        kc.eval_draws = o.eval_draws;
        kc.seed = derive_seed(o.seed, 3);
        kc.jobs = o.jobs;
        const ConjugatePrior prior = prior_from(o);
        auto cv = kfold_cv_with_search(data, conjugate_reference(prior, draws.size()), kc);
        eval = std::move(cv.evaluation);
        const Matrix rates = cumulative_inclusion_rates(cv.fold_paths, data.p());
        write_file(out_path(o, "inclusion.csv"), [&](std::ostream& out) {
            out << "predictor";
            for (Index k = 1; k <= rates.cols(); ++k) out << ",size" << k;
            out << '\n';
            for (Index j = 0; j < rates.rows(); ++j) {
                out << data.predictor_names()[static_cast<std::size_t>(j)];
                for (Index k = 0; k < rates.cols(); ++k) out << ',' << io::format_double(rates(j, k));
                out << '\n';
            }
        });
        std::cout << "kfold-with-search: K=" << cv.effective_folds << " sizes=" << eval.num_sizes() << "\n";
    } else {
        path = io::path_from_json(io::read_json(o.path), data);
        FullDataEvalConfig fc;
        fc.eval_draws = o.eval_draws;
        fc.seed = derive_seed(o.seed, 3);
        fc.khat_threshold = o.khat_threshold;
        fc.jobs = o.jobs;
        eval = evaluate_path_fulldata(path, data, draws, fc);
    }
    write_file(out_path(o, "eval.csv"), [&](std::ostream& out) { io::write_evaluation_csv(out, eval); });
    io::write_json(out_path(o, "eval.json"), io::evaluation_json(eval));

    const BulgeResult bulge = bulge_diagnostic(eval);
    if (o.cv_search) {
        if (bulge.flagged)
            std::cout << "note: cross-validated curve still exceeds the reference at size " << bulge.argmax_size << "\n";
        else
            std::cout << "bulge: none in the cross-validated curve\n";
        return 0;
    }
    if (!bulge.flagged) {
        std::cout << "bulge: none; full-data path accepted\n";
        return 0;
    }
    const double t_proj = measure_t_proj(data, draws, path, o.clusters, derive_seed(o.seed, 4));
    const double c_prime = static_cast<double>(std::min(o.eval_draws, draws.size()));
    const auto cost = estimate_costs(static_cast<double>(o.folds), static_cast<double>(bulge.argmax_size),
                                     static_cast<double>(std::min(o.clusters, draws.size())), c_prime, t_proj);
    std::cout << "bulge: detected; most over-optimistic size " << bulge.argmax_size << "\n"
              << "recommendation: re-run with cross-validation including the search (--cv-search --folds " << o.folds
              << " --p-max " << bulge.argmax_size << ")\n"
              << "estimated cost: t_proj=" << t_proj << "s t_search=" << cost.t_search << "s t_eval=" << cost.t_eval
              << "s t_total=" << cost.t_total << "s\n";
    return 0;
}

int cmd_select(const Options& o)
{
    const auto [data, draws] = load_inputs(o);
    const PathEvaluation eval = io::evaluation_from_json(io::read_json(o.eval));
    SolutionPath path;
    if (fs::exists(o.path)) {
        path = io::path_from_json(io::read_json(o.path), data);
    } else {
        SearchConfig sc = search_config(o);
        sc.p_max = std::min(eval.max_size(), data.p());
        path = run_search(data, draws, sc);
    }
    SelectionConfig cfg;
    cfg.rule = parse_selection_rule(o.rule);
    cfg.delta_threshold = o.threshold;
    cfg.smooth = o.smooth;
    cfg.drop_prefix = o.drop_prefix;
    SelectionReport report = select_size(eval, cfg);
    if (report.selected_size > path.max_size())
        fail_validation("select: selected size " + std::to_string(report.selected_size) + " exceeds the path length " +
                        std::to_string(path.max_size()));
    const Submodel sub = path.prefix(report.selected_size);
    std::vector<std::string> names;
    for (Index j : sub.indices()) names.push_back(data.predictor_names()[static_cast<std::size_t>(j)]);

    ensure_out_dir(o);
    io::write_json(out_path(o, "selection.json"), io::selection_json(report, names));
    const ProjectedPosterior proj = project_drawwise(data, sub, draws);
    write_file(out_path(o, "projection.csv"), [&](std::ostream& out) { io::write_projection_csv(out, proj, data); });
    std::cout << "selected size " << report.selected_size << " (rule " << to_string(report.rule)
              << (report.smoothed ? ", smoothed" : "") << (report.fallback_used ? ", fallback" : "") << ")\n";
    return 0;
}

int cmd_distance(const Options& o)
{
    const auto [data, draws] = load_inputs(o);
    const Matrix d = distance_matrix(data, draws, o.jobs);
    const Dendrogram tree = build_dendrogram(d);
    ensure_out_dir(o);
    write_file(out_path(o, "distance.csv"),
               [&](std::ostream& out) { io::write_distance_csv(out, d, data.predictor_names()); });
    io::write_json(out_path(o, "dendrogram.json"), io::dendrogram_json(tree, data.predictor_names()));
    std::cout << "distance: " << d.rows() << " predictors, " << tree.merges.size() << " merges\n";
    return 0;
}

int cmd_sbc(const Options& o)
{
    SbcConfig sc;
    sc.replications = o.replications;
    if (o.n > 0) sc.n = o.n;
    if (o.p > 0) sc.p = o.p;
    sc.num_draws = o.num_draws;
    sc.folds = o.folds;
    sc.search = search_config(o);
    sc.search.jobs = 1;
    sc.eval_draws = o.eval_draws;
    sc.rule = parse_selection_rule(o.rule);
    sc.delta_threshold = o.threshold;
    sc.inference_ridge_multiplier = o.ridge_multiplier;
    sc.seed = o.seed;
    sc.jobs = o.jobs;
    const SbcResult r = run_sbc(sc);
    ensure_out_dir(o);
    const std::string stem = "sbc_" + std::to_string(o.seed);
    io::write_json(out_path(o, stem + ".json"), io::sbc_json(r, sc));
    write_file(out_path(o, stem + ".csv"), [&](std::ostream& out) { io::write_sbc_ranks_csv(out, r); });
    std::cout << "sbc: " << r.ranks.size() << "/" << r.requested << " replications, ECDF band "
              << (r.passed ? "passed" : "failed") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

void emit_error(const std::string& kind, const std::string& message)
{
    std::cerr << json{{"schema_version", io::kSchemaVersion}, {"error", {{"kind", kind}, {"message", message}}}}.dump()
              << '\n';
}

// Expands `--config file.json` into flags placed before the user's own
// arguments so explicit flags win (options take the last value).
std::vector<std::string> expand_config(std::vector<std::string> args, CLI::App& app)
{
    std::string config_path;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config_path.empty() || rest.empty()) return rest;
    CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands([](CLI::App*) { return true; }))
        if (s->get_name() == rest.front()) sub = s;
    if (sub == nullptr) return rest;

    const json cfg = io::read_json(config_path);
    if (!cfg.is_object()) fail_validation("config: top level must be an object");
    std::vector<std::string> injected{rest.front()};
    for (const auto& [key, value] : cfg.items()) {
        if (key == "schema_version") continue;
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        const CLI::Option* opt = sub->get_option_no_throw(flag);
        if (opt == nullptr) opt = app.get_option_no_throw(flag);
        if (opt == nullptr || flag == "--config") fail_validation("config: unknown key '" + key + "' for " + rest.front());
        if (value.is_boolean()) {
            if (opt->get_expected_min() != 0) fail_validation("config: key '" + key + "' expects a value");
            if (value.get<bool>()) injected.push_back(flag);
        } else if (value.is_string()) {
            injected.push_back(flag);
            injected.push_back(value.get<std::string>());
        } else if (value.is_number()) {
            injected.push_back(flag);
            injected.push_back(value.dump());
        } else {
            fail_validation("config: key '" + key + "' must be a string, number or boolean");
        }
    }
    injected.insert(injected.end(), rest.begin() + 1, rest.end());
    return injected;
}

}  // namespace

int main(int argc, char** argv)
{
    Options o;
    CLI::App app{"Projection predictive model selection for generalized linear models"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.add_option("--config", o.config, "JSON file with option values (flags override)");

    auto common = [&](CLI::App* c) {
        c->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        c->add_option("--seed", o.seed, "Root random seed");
        c->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::Range(1u, 1024u));
        c->add_option("--out-dir", o.out_dir, "Output directory");
    };
    auto inputs = [&](CLI::App* c) {
        c->add_option("--data", o.data, "Data CSV (y,x1..xp)");
        c->add_option("--draws", o.draws, "Reference draws CSV (b0..bp[,sigma])");
        c->add_option("--family", o.family, "gaussian | bernoulli | poisson");
    };
    auto prior_opts = [&](CLI::App* c) {
        c->add_option("--ridge-scale", o.ridge_scale, "Prior sd of standardized coefficients");
        c->add_option("--a0", o.a0, "Inverse-gamma shape");
        c->add_option("--b0", o.b0, "Inverse-gamma scale");
        c->add_option("--intercept-scale", o.intercept_scale, "Prior sd multiplier of the intercept");
    };
    auto search_opts = [&](CLI::App* c) {
        c->add_option("--method", o.method, "forward | l1");
        c->add_option("--p-max", o.p_max, "Maximum submodel size (0 = all)");
        c->add_option("--clusters", o.clusters, "Clusters used for the search");
        c->add_option("--lambda-grid", o.lambda_grid, "L1 grid size");
    };

    auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset and conjugate reference draws");
    common(sim);
    prior_opts(sim);
    sim->add_option("--dgp", o.dgp, "block-correlated | weakly-relevant | overfit-demo | sbc");
    sim->add_option("--n", o.n, "Observations");
    sim->add_option("--p", o.p, "Predictors");
    sim->add_option("--rho", o.rho, "Predictor correlation");
    sim->add_option("--r-squared", o.r_squared, "Target population R^2");
    sim->add_option("--xi", o.xi, "Block weight scale (0 = solve from R^2)");
    sim->add_option("--sigma2", o.sigma2, "Noise variance");
    sim->add_option("--num-draws", o.num_draws, "Reference draws");

    auto* search = app.add_subcommand("search", "Compute the solution path");
    common(search);
    inputs(search);
    search_opts(search);

    auto* eval = app.add_subcommand("eval", "Evaluate submodels along the path");
    common(eval);
    inputs(eval);
    search_opts(eval);
    prior_opts(eval);
    eval->add_option("--path", o.path, "Solution path JSON");
    eval->add_option("--eval-draws", o.eval_draws, "Thinned draws used for evaluation");
    eval->add_flag("--cv-search", o.cv_search, "K-fold cross-validation including the search");
    eval->add_option("--folds", o.folds, "Number of folds");
    eval->add_option("--khat-threshold", o.khat_threshold, "Pareto k-hat warning threshold");

    auto* select = app.add_subcommand("select", "Choose the submodel size");
    common(select);
    inputs(select);
    search_opts(select);
    select->add_option("--path", o.path, "Solution path JSON");
    select->add_option("--eval", o.eval, "Evaluation JSON");
    select->add_option("--rule", o.rule, "se | delta");
    select->add_option("--threshold", o.threshold, "Delta-utility threshold");
    select->add_flag("--smooth", o.smooth, "Select on the monotone smoothed curve");
    select->add_option("--drop-prefix", o.drop_prefix, "Sizes excluded from smoothing");

    auto* dist = app.add_subcommand("distance", "Predictor distance matrix and dendrogram");
    common(dist);
    inputs(dist);

    auto* sbc = app.add_subcommand("sbc", "Simulation-based calibration of the selection pipeline");
    common(sbc);
    search_opts(sbc);
    sbc->add_option("--replications", o.replications, "Replications (>= 50)");
    sbc->add_option("--n", o.n, "Observations per replication");
    sbc->add_option("--p", o.p, "Standard-normal predictors (a treatment column is added)");
    sbc->add_option("--num-draws", o.num_draws, "Reference draws per replication");
    sbc->add_option("--folds", o.folds, "Number of folds");
    sbc->add_option("--eval-draws", o.eval_draws, "Thinned draws used for evaluation");
    sbc->add_option("--rule", o.rule, "se | delta");
    sbc->add_option("--threshold", o.threshold, "Delta-utility threshold");
    sbc->add_option("--ridge-multiplier", o.ridge_multiplier, "Inflation of the inference prior scale");

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(std::move(args), app);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        emit_error("validation", e.what());
        return 2;
    } catch (const Error& e) {
        emit_error(e.kind() == ErrorKind::validation ? "validation" : "numerical", e.what());
        return e.kind() == ErrorKind::validation ? 2 : 3;
    }
    if (sbc->parsed() && sbc->get_option("--num-draws")->count() == 0) o.num_draws = 399;

    try {
        if (sim->parsed()) return cmd_simulate(o);
        if (search->parsed()) return cmd_search(o);
        if (eval->parsed()) return cmd_eval(o);
        if (select->parsed()) return cmd_select(o);
        if (dist->parsed()) return cmd_distance(o);
        if (sbc->parsed()) return cmd_sbc(o);
    } catch (const Error& e) {
        emit_error(e.kind() == ErrorKind::validation ? "validation" : "numerical", e.what());
        return e.kind() == ErrorKind::validation ? 2 : 3;
    } catch (const std::exception& e) {
        emit_error("numerical", e.what());
        return 3;
    }
    return 0;
}
