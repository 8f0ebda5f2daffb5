#include "gpdyn/experiments.hpp"
#include "gpdyn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace gpdyn {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const std::string& ctx) {
    if (!j.is_object()) fail(errc::usage, "config: " + ctx + " must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items())
        if (!ok.count(key)) fail(errc::usage, "config: unknown key '" + key + "' in " + ctx);
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    check_keys(j, {"system", "scenario", "data", "gp", "inference", "prediction", "out_dir"},
               "top level");
    cfg.system = j.value("system", cfg.system);
    cfg.scenario = j.value("scenario", cfg.scenario);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    if (j.contains("data")) {
        const auto& d = j["data"];
        check_keys(d,
                   {"density", "noise", "seed", "n_points", "ics", "t_end", "dt",
                    "train_fraction", "base_fraction"},
                   "data");
        cfg.data.density = d.value("density", cfg.data.density);
        cfg.data.noise = d.value("noise", cfg.data.noise);
        cfg.data.seed = d.value("seed", cfg.data.seed);
        cfg.data.n_points = d.value("n_points", cfg.data.n_points);
        cfg.data.ics = d.value("ics", cfg.data.ics);
        cfg.data.t_end = d.value("t_end", cfg.data.t_end);
        cfg.data.dt = d.value("dt", cfg.data.dt);
        cfg.data.train_fraction = d.value("train_fraction", cfg.data.train_fraction);
        cfg.data.base_fraction = d.value("base_fraction", cfg.data.base_fraction);
    }
    if (j.contains("gp")) {
        const auto& g = j["gp"];
        check_keys(g, {"restarts", "chi_d_init", "coarse_cap", "seed"}, "gp");
        cfg.gp.restarts = g.value("restarts", cfg.gp.restarts);
        cfg.gp.chi_d_init = g.value("chi_d_init", cfg.gp.chi_d_init);
        cfg.gp.coarse_cap = g.value("coarse_cap", cfg.gp.coarse_cap);
        cfg.gp.seed = g.value("seed", cfg.gp.seed);
    }
    if (j.contains("inference")) {
        const auto& i = j["inference"];
        check_keys(i,
                   {"lambda", "stridge_threshold", "lambda_active", "lambda_sparse",
                    "mcmc_steps", "mcmc_burn_in", "mcmc_thin", "hidden", "prior_lambda",
                    "init_draws", "polish_iters", "mcmc_seed"},
                   "inference");
        cfg.inference.lambda = i.value("lambda", cfg.inference.lambda);
        cfg.inference.stridge_threshold =
            i.value("stridge_threshold", cfg.inference.stridge_threshold);
        cfg.inference.lambda_active = i.value("lambda_active", cfg.inference.lambda_active);
        cfg.inference.lambda_sparse = i.value("lambda_sparse", cfg.inference.lambda_sparse);
        cfg.inference.mcmc_steps = i.value("mcmc_steps", cfg.inference.mcmc_steps);
        cfg.inference.mcmc_burn_in = i.value("mcmc_burn_in", cfg.inference.mcmc_burn_in);
        cfg.inference.mcmc_thin = i.value("mcmc_thin", cfg.inference.mcmc_thin);
        cfg.inference.hidden = i.value("hidden", cfg.inference.hidden);
        cfg.inference.prior_lambda = i.value("prior_lambda", cfg.inference.prior_lambda);
        cfg.inference.init_draws = i.value("init_draws", cfg.inference.init_draws);
        cfg.inference.polish_iters = i.value("polish_iters", cfg.inference.polish_iters);
        cfg.inference.mcmc_seed = i.value("mcmc_seed", cfg.inference.mcmc_seed);
    }
    if (j.contains("prediction")) {
        const auto& p = j["prediction"];
        check_keys(p, {"draws", "output_points", "seed"}, "prediction");
        cfg.prediction.draws = p.value("draws", cfg.prediction.draws);
        cfg.prediction.output_points = p.value("output_points", cfg.prediction.output_points);
        cfg.prediction.seed = p.value("seed", cfg.prediction.seed);
    }
    return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["system"] = cfg.system;
    j["scenario"] = cfg.scenario;
    j["out_dir"] = cfg.out_dir;
    j["data"] = {{"density", cfg.data.density},
                 {"noise", cfg.data.noise},
                 {"seed", cfg.data.seed},
                 {"n_points", cfg.data.n_points},
                 {"ics", cfg.data.ics},
                 {"t_end", cfg.data.t_end},
                 {"dt", cfg.data.dt},
                 {"train_fraction", cfg.data.train_fraction},
                 {"base_fraction", cfg.data.base_fraction}};
    j["gp"] = {{"restarts", cfg.gp.restarts},
               {"chi_d_init", cfg.gp.chi_d_init},
               {"coarse_cap", cfg.gp.coarse_cap},
               {"seed", cfg.gp.seed}};
    j["inference"] = {{"lambda", cfg.inference.lambda},
                      {"stridge_threshold", cfg.inference.stridge_threshold},
                      {"lambda_active", cfg.inference.lambda_active},
                      {"lambda_sparse", cfg.inference.lambda_sparse},
                      {"mcmc_steps", cfg.inference.mcmc_steps},
                      {"mcmc_burn_in", cfg.inference.mcmc_burn_in},
                      {"mcmc_thin", cfg.inference.mcmc_thin},
                      {"hidden", cfg.inference.hidden},
                      {"prior_lambda", cfg.inference.prior_lambda},
                      {"init_draws", cfg.inference.init_draws},
                      {"polish_iters", cfg.inference.polish_iters},
                      {"mcmc_seed", cfg.inference.mcmc_seed}};
    j["prediction"] = {{"draws", cfg.prediction.draws},
                       {"output_points", cfg.prediction.output_points},
                       {"seed", cfg.prediction.seed}};
    return j;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string s = config_to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

SystemSpec system_by_name(const std::string& name) {
    if (name == "lotka-volterra") return lotka_volterra_system();
    if (name == "logistic") return logistic_system();
    if (name == "blackhole") return blackhole_system();
    fail(errc::usage, "unknown system '" + name + "'");
}

Vec default_ic(const std::string& system) {
    if (system == "lotka-volterra") {
        Vec ic(2);
        ic << 1.0, 1.0;
        return ic;
    }
    if (system == "logistic") {
        Vec ic(1);
        ic << 0.01;
        return ic;
    }
    if (system == "blackhole") {
        Vec ic(2);
        ic << 0.0, M_PI;
        return ic;
    }
    fail(errc::usage, "unknown system '" + system + "'");
}

GenerateOptions make_generate_options(const ExperimentConfig& cfg) {
    GenerateOptions g;
    if (cfg.system == "lotka-volterra") {
        g.t_end = 20.0;
        g.dt = 1e-3;
        g.train_fraction = 0.4;
        g.base_fraction = 0.25;
        g.integrator.method = IntegrateOptions::Method::implicit_euler;
        g.integrator.dt = 1e-3;
        g.test_stride = 10;
    } else if (cfg.system == "logistic") {
        g.t_end = 9.0;
        g.dt = 1e-3;
        g.train_fraction = 0.5;
        g.base_fraction = 1.0;
        g.integrator.method = IntegrateOptions::Method::adaptive_rk;
        g.integrator.rtol = 1e-10;
        g.integrator.atol = 1e-12;
        g.n_points = 10;
        g.test_stride = 10;
    } else if (cfg.system == "blackhole") {
        g.t_end = 6e4;
        g.dt = 1.0;
        g.train_fraction = 1.0 / 6.0;
        g.base_fraction = 1.0;
        g.integrator.method = IntegrateOptions::Method::adaptive_rk;
        g.integrator.rtol = 1e-10;
        g.integrator.atol = 1e-12;
        g.n_points = 500;
        g.test_stride = 10;
    } else {
        fail(errc::usage, "unknown system '" + cfg.system + "'");
    }
    if (cfg.data.t_end > 0) g.t_end = cfg.data.t_end;
    if (cfg.data.dt > 0) g.dt = cfg.data.dt;
    if (cfg.data.train_fraction > 0) g.train_fraction = cfg.data.train_fraction;
    if (cfg.data.base_fraction > 0) g.base_fraction = cfg.data.base_fraction;
    g.density = cfg.data.density;
    g.noise_level = cfg.data.noise;
    g.seed = cfg.data.seed;
    if (cfg.data.n_points > 0) g.n_points = cfg.data.n_points;
    else if (cfg.data.density < 1.0 && cfg.system != "lotka-volterra")
        g.n_points = -1;  // density applies to the pool for every system
    return g;
}

namespace {

std::vector<Dictionary> scenario_dictionaries(const std::string& scenario) {
    if (scenario == "case-a") return {Dictionary::lv_known_eq1(), Dictionary::lv_known_eq2()};
    if (scenario == "case-b") return {Dictionary::quadratic_2d(), Dictionary::quadratic_2d()};
    fail(errc::usage, "no dictionaries for scenario '" + scenario + "'");
}

void validate_combo(const ExperimentConfig& cfg) {
    const bool ok = (cfg.scenario == "case-a" && cfg.system == "lotka-volterra") ||
                    (cfg.scenario == "case-b" && cfg.system == "lotka-volterra") ||
                    (cfg.scenario == "nn-mcmc" && cfg.system == "logistic") ||
                    (cfg.scenario == "shared-param" && cfg.system == "blackhole");
    if (!ok)
        fail(errc::usage,
             "scenario '" + cfg.scenario + "' is not defined for system '" + cfg.system + "'");
}

// One GP per state component per trajectory.
std::vector<std::vector<GPStateModel>> fit_gps(const std::vector<Dataset>& trains,
                                               const ExperimentConfig& cfg,
                                               nlohmann::json& log) {
    std::vector<std::vector<GPStateModel>> models(trains.size());
    for (size_t t = 0; t < trains.size(); ++t) {
        const auto view = train_view(trains[t]);
        const Index N = view.values.cols();
        models[t].reserve(static_cast<size_t>(N));
        for (Index j = 0; j < N; ++j) {
            FitOptions fo;
            fo.restarts = cfg.gp.restarts;
            fo.coarse_cap = cfg.gp.coarse_cap;
            fo.seed = derive_seed(cfg.gp.seed,
                                  "gp-" + std::to_string(t) + "-" + std::to_string(j));
            models[t].push_back(fit_state_model(view.times, view.values.col(j), fo,
                                                cfg.gp.chi_d_init));
            const auto& m = models[t].back();
            log["gp"].push_back({{"trajectory", t},
                                 {"component", j},
                                 {"variance", m.kernel.variance},
                                 {"lengthscale", m.kernel.lengthscale},
                                 {"chi_u", m.chi_u},
                                 {"chi_d", m.chi_d}});
        }
    }
    return models;
}

Mat smoothed_states(const std::vector<GPStateModel>& models) {
    const Index K = models.front().times.size();
    Mat Z(K, static_cast<Index>(models.size()));
    for (size_t j = 0; j < models.size(); ++j) Z.col(static_cast<Index>(j)) = models[j].u_hat;
    return Z;
}

FitResult fit_affine(const std::vector<Dataset>& trains, const ExperimentConfig& cfg) {
    FitResult out;
    out.system = cfg.system;
    out.scenario = cfg.scenario;
    const auto dicts = scenario_dictionaries(cfg.scenario);
    auto models = fit_gps(trains, cfg, out.log);

    std::vector<Mat> Zs;
    Zs.reserve(trains.size());
    for (const auto& ms : models) Zs.push_back(smoothed_states(ms));

    const size_t n_eq = dicts.size();
    for (size_t eq = 0; eq < n_eq; ++eq) {
        const int p = dicts[eq].size();
        std::vector<EquationBlock> blocks;
        for (size_t t = 0; t < trains.size(); ++t) {
            EquationBlock blk;
            blk.G = design_matrix(dicts[eq], Zs[t]);
            blk.Rdd = models[t][eq].Rdd;
            blk.d_hat = models[t][eq].d_hat;
            blk.index_map.resize(static_cast<size_t>(p));
            for (int j = 0; j < p; ++j) blk.index_map[static_cast<size_t>(j)] = j;
            blocks.push_back(std::move(blk));
        }

        Vec lambda;
        if (cfg.scenario == "case-b") {
            // Sparsity pattern from the stacked plain-L2 problem.
            Index rows = 0;
            for (const auto& b : blocks) rows += b.G.rows();
            Mat Gall(rows, p);
            Vec dall(rows);
            Index off = 0;
            for (const auto& b : blocks) {
                Gall.middleRows(off, b.G.rows()) = b.G;
                dall.segment(off, b.d_hat.size()) = b.d_hat;
                off += b.G.rows();
            }
            SparsityPattern pat =
                stridge(Gall, dall, cfg.inference.stridge_threshold, 20,
                        cfg.inference.lambda_active, cfg.inference.lambda_sparse);
            lambda = Vec::Constant(p, pat.lambda_sparse);
            for (int a : pat.active) lambda[a] = pat.lambda_active;
            out.patterns.push_back(std::move(pat));
        } else {
            lambda = Vec::Constant(p, cfg.inference.lambda);
        }

        GaussianPosterior post =
            trains.size() == 1
                ? posterior(blocks[0].G, blocks[0].Rdd, blocks[0].d_hat, lambda,
                            dicts[eq].names())
                : joint_posterior(blocks, lambda, dicts[eq].names());
        out.posteriors.push_back(std::move(post));
    }

    const auto truth = truth_by_scenario(cfg.system, cfg.scenario);
    auto [e1, e2] = metrics_eps(out.posteriors, truth);
    out.eps1 = e1;
    out.eps2 = e2;
    if (cfg.system == "lotka-volterra") {
        const Vec& m1 = out.posteriors[0].mean;
        const Vec& m2 = out.posteriors[1].mean;
        if (cfg.scenario == "case-a")
            out.log["named"] = {{"alpha", m1[0]}, {"beta", -m1[1]}, {"delta", m2[0]},
                                {"gamma", -m2[1]}};
        else
            out.log["named"] = {{"alpha", m1[1]}, {"beta", -m1[5]}, {"delta", m2[5]},
                                {"gamma", -m2[2]}};
    }
    for (size_t t = 0; t < trains.size(); ++t) out.gp_models.insert(out.gp_models.end(),
                                                                    models[t].begin(),
                                                                    models[t].end());
    return out;
}

// Residual block for one equation of a given rhs over the smoothed states.
ResidualBlock make_rhs_block(const SystemSpec& spec, int eq, const Mat& states,
                             const GPStateModel& model) {
    ResidualBlock blk;
    auto rhs = spec.rhs;
    blk.f = [rhs, eq](const Mat& S, const Vec& th) {
        Vec out(S.rows());
        for (Index k = 0; k < S.rows(); ++k) out[k] = rhs(S.row(k), th)[eq];
        return out;
    };
    blk.states = states;
    blk.Rdd = model.Rdd;
    blk.d_hat = model.d_hat;
    return blk;
}

FitResult fit_nn_mcmc(const std::vector<Dataset>& trains, const ExperimentConfig& cfg) {
    FitResult out;
    out.system = cfg.system;
    out.scenario = cfg.scenario;
    auto models = fit_gps(trains, cfg, out.log);

    ShallowNet net;
    net.input_dim = 1;
    net.hidden = cfg.inference.hidden;
    out.net = net;
    const int P = net.param_count();

    std::vector<ResidualBlock> blocks;
    for (size_t t = 0; t < trains.size(); ++t) {
        ResidualBlock blk;
        blk.f = [net](const Mat& S, const Vec& th) { return net.eval_rows(S, th); };
        blk.states = smoothed_states(models[t]);
        blk.Rdd = models[t][0].Rdd;
        blk.d_hat = models[t][0].d_hat;
        blocks.push_back(std::move(blk));
    }
    const Vec lambda = Vec::Constant(P, cfg.inference.prior_lambda);
    auto target = [&blocks, lambda](const Vec& th) {
        return blocks_log_posterior(th, blocks, lambda);
    };

    // Best-of-draws start over a few scales, then a gradient polish; wide draws
    // alone tend to start deep in tanh saturation.
    std::mt19937_64 rng(derive_seed(cfg.inference.mcmc_seed, "init"));
    std::normal_distribution<double> n01(0.0, 1.0);
    const double prior_sd = 1.0 / std::sqrt(cfg.inference.prior_lambda);
    const double scales[3] = {prior_sd, 1.0, 0.1};
    Vec best;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (int d = 0; d < cfg.inference.init_draws; ++d) {
        Vec th(P);
        for (int i = 0; i < P; ++i) th[i] = scales[d % 3] * n01(rng);
        const double lp = target(th);
        if (lp > best_lp) {
            best_lp = lp;
            best = th;
        }
    }
    if (!std::isfinite(best_lp)) fail(errc::non_finite_init, "no finite chain start found");
    best = maximize_target(target, best, cfg.inference.polish_iters);

    McmcOptions mo;
    mo.steps = cfg.inference.mcmc_steps;
    mo.burn_in = cfg.inference.mcmc_burn_in;
    mo.thin = cfg.inference.mcmc_thin;
    mo.seed = cfg.inference.mcmc_seed;
    mo.initial_scale = 0.05;
    out.chain = run_chain(best, target, mo);
    out.log["acceptance_rate"] = out.chain->acceptance_rate;
    for (size_t t = 0; t < trains.size(); ++t)
        out.gp_models.insert(out.gp_models.end(), models[t].begin(), models[t].end());
    return out;
}

FitResult fit_shared_param(const std::vector<Dataset>& trains, const ExperimentConfig& cfg) {
    FitResult out;
    out.system = cfg.system;
    out.scenario = cfg.scenario;
    const SystemSpec spec = system_by_name(cfg.system);
    auto models = fit_gps(trains, cfg, out.log);

    std::vector<ResidualBlock> blocks;
    for (size_t t = 0; t < trains.size(); ++t) {
        const Mat Z = smoothed_states(models[t]);
        for (int eq = 0; eq < spec.state_dim; ++eq)
            blocks.push_back(make_rhs_block(spec, eq, Z, models[t][static_cast<size_t>(eq)]));
    }
    const Vec lambda = Vec::Constant(spec.theta_dim, cfg.inference.lambda);
    auto target = [&blocks, lambda](const Vec& th) {
        return blocks_log_posterior(th, blocks, lambda);
    };

    // Orbit-parameter box for the starts: e in [0.05, 0.95], p log-uniform in [8, 300].
    std::mt19937_64 rng(derive_seed(cfg.inference.mcmc_seed, "init"));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Vec best;
    double best_lp = -std::numeric_limits<double>::infinity();
    for (int d = 0; d < cfg.inference.init_draws; ++d) {
        Vec th(2);
        th[0] = 0.05 + 0.9 * u01(rng);
        th[1] = std::exp(std::log(8.0) + u01(rng) * (std::log(300.0) - std::log(8.0)));
        const double lp = target(th);
        if (lp > best_lp) {
            best_lp = lp;
            best = th;
        }
    }
    if (!std::isfinite(best_lp)) fail(errc::non_finite_init, "no finite chain start found");
    best = maximize_target(target, best, cfg.inference.polish_iters, 1e-7);

    McmcOptions mo;
    mo.steps = cfg.inference.mcmc_steps;
    mo.burn_in = cfg.inference.mcmc_burn_in;
    mo.thin = cfg.inference.mcmc_thin;
    mo.seed = cfg.inference.mcmc_seed;
    mo.initial_scale = 1e-3;
    out.chain = run_chain(best, target, mo);
    out.log["acceptance_rate"] = out.chain->acceptance_rate;

    // Chain moments as a reporting posterior over (e, p).
    const Mat& S = out.chain->samples;
    GaussianPosterior post;
    post.term_names = {"e", "p"};
    post.mean = S.colwise().mean();
    Mat centered = S.rowwise() - post.mean.transpose();
    post.covariance = centered.transpose() * centered / std::max<double>(1.0, S.rows() - 1);
    out.posteriors.push_back(std::move(post));

    const auto truth = truth_by_scenario(cfg.system, cfg.scenario);
    auto [e1, e2] = metrics_eps(out.posteriors, truth);
    out.eps1 = e1;
    out.eps2 = e2;
    out.log["named"] = {{"e", out.posteriors[0].mean[0]}, {"p", out.posteriors[0].mean[1]}};
    for (size_t t = 0; t < trains.size(); ++t)
        out.gp_models.insert(out.gp_models.end(), models[t].begin(), models[t].end());
    return out;
}

}  // namespace

std::vector<Vec> truth_by_scenario(const std::string& system, const std::string& scenario) {
    if (system == "lotka-volterra" && scenario == "case-a") {
        Vec t1(2), t2(2);
        t1 << 1.5, -1.0;
        t2 << 1.0, -3.0;
        return {t1, t2};
    }
    if (system == "lotka-volterra" && scenario == "case-b") {
        Vec t1 = Vec::Zero(6), t2 = Vec::Zero(6);
        t1[1] = 1.5;
        t1[5] = -1.0;
        t2[2] = -3.0;
        t2[5] = 1.0;
        return {t1, t2};
    }
    if (system == "blackhole") {
        Vec t(2);
        t << 0.5, 100.0;
        return {t};
    }
    fail(errc::usage, "no ground truth for " + system + "/" + scenario);
}

FitResult run_fit(const std::vector<Dataset>& trains, const ExperimentConfig& cfg) {
    validate_combo(cfg);
    if (trains.empty()) fail(errc::empty_training_set, "no training trajectories");
    if (cfg.scenario == "case-a" || cfg.scenario == "case-b") return fit_affine(trains, cfg);
    if (cfg.scenario == "nn-mcmc") return fit_nn_mcmc(trains, cfg);
    return fit_shared_param(trains, cfg);
}

FitResult run_fit(const Dataset& train, const ExperimentConfig& cfg) {
    return run_fit(std::vector<Dataset>{train}, cfg);
}

EnsemblePrediction run_predict(const FitResult& fit, const Vec& ic, const Vec& out_times,
                               int draws, std::uint64_t seed) {
    IntegrateOptions io;
    io.method = IntegrateOptions::Method::adaptive_rk;
    io.rtol = 1e-8;
    io.atol = 1e-10;

    if (fit.scenario == "case-a" || fit.scenario == "case-b") {
        const auto dicts = scenario_dictionaries(fit.scenario);
        SystemSpec model = dictionary_system(fit.system + "-dictionary", dicts);
        std::vector<ThetaSampler> parts;
        for (const auto& p : fit.posteriors) parts.push_back(gaussian_sampler(p));
        ThetaSampler sampler = [parts, dims = [&] {
            std::vector<Index> d;
            for (const auto& p : fit.posteriors) d.push_back(p.mean.size());
            return d;
        }()](std::mt19937_64& rng) {
            Index total = 0;
            for (Index d : dims) total += d;
            Vec th(total);
            Index off = 0;
            for (size_t i = 0; i < parts.size(); ++i) {
                th.segment(off, dims[i]) = parts[i](rng);
                off += dims[i];
            }
            return th;
        };
        return ensemble_predict(model, sampler, ic, out_times, draws, seed, io);
    }
    if (fit.scenario == "nn-mcmc") {
        if (!fit.chain) fail(errc::shape_mismatch, "nn-mcmc fit has no chain");
        const ShallowNet net = fit.net;
        SystemSpec model;
        model.name = "net-surrogate";
        model.state_dim = net.input_dim;
        model.theta_dim = net.param_count();
        model.rhs = [net](const Vec& x, const Vec& th) {
            Vec dx(1);
            dx[0] = net.eval(x, th);
            return dx;
        };
        return ensemble_predict(model, chain_sampler(*fit.chain), ic, out_times, draws, seed,
                                io);
    }
    if (fit.scenario == "shared-param") {
        if (!fit.chain) fail(errc::shape_mismatch, "shared-param fit has no chain");
        return ensemble_predict(system_by_name(fit.system), chain_sampler(*fit.chain), ic,
                                out_times, draws, seed, io);
    }
    fail(errc::usage, "unknown scenario '" + fit.scenario + "'");
}

BaselineResult run_fd_baseline(const Dataset& train, const ExperimentConfig& cfg) {
    const auto view = train_view(train);
    Mat states = view.values;
    if (train.noise_level > 0.0) states = smooth_scattered(view.times, states, 11, 3);
    const Mat d_fd = finite_difference_derivatives(view.times, states);

    const auto dicts = scenario_dictionaries(cfg.scenario == "case-b" ? "case-b" : "case-a");
    const auto truth = truth_by_scenario("lotka-volterra",
                                         cfg.scenario == "case-b" ? "case-b" : "case-a");
    BaselineResult out;
    double num = 0, den = 0;
    for (size_t eq = 0; eq < dicts.size(); ++eq) {
        const Mat G = design_matrix(dicts[eq], states);
        out.theta.push_back(baseline_linreg(G, d_fd.col(static_cast<Index>(eq))));
        num += (truth[eq] - out.theta.back()).squaredNorm();
        den += truth[eq].squaredNorm();
    }
    out.eps1 = 100.0 * std::sqrt(num / den);
    return out;
}

nlohmann::json BenchmarkReport::to_json() const {
    nlohmann::json cells_json = nlohmann::json::array();
    for (const auto& c : cells)
        cells_json.push_back({{"density", c.density},
                              {"noise", c.noise},
                              {"seed", c.seed},
                              {"n_points", c.n_points},
                              {"eps1_gp", c.eps1_gp},
                              {"eps2_gp", c.eps2_gp},
                              {"eps1_fd", c.eps1_fd}});
    // aggregate mean +/- sd of eps1 per (density, noise) across seeds
    nlohmann::json agg = nlohmann::json::array();
    std::set<std::pair<double, double>> keys;
    for (const auto& c : cells) keys.insert({c.density, c.noise});
    for (const auto& [den, noi] : keys) {
        std::vector<double> e1, e2, ef;
        for (const auto& c : cells)
            if (c.density == den && c.noise == noi) {
                e1.push_back(c.eps1_gp);
                e2.push_back(c.eps2_gp);
                ef.push_back(c.eps1_fd);
            }
        auto mean_sd = [](const std::vector<double>& v) {
            double m = 0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double s2 = 0;
            for (double x : v) s2 += (x - m) * (x - m);
            const double sd = v.size() > 1 ? std::sqrt(s2 / static_cast<double>(v.size() - 1)) : 0.0;
            return std::pair<double, double>{m, sd};
        };
        const auto [m1, s1] = mean_sd(e1);
        const auto [m2, s2] = mean_sd(e2);
        const auto [mf, sf] = mean_sd(ef);
        agg.push_back({{"density", den},
                       {"noise", noi},
                       {"eps1_gp_mean", m1},
                       {"eps1_gp_sd", s1},
                       {"eps2_gp_mean", m2},
                       {"eps2_gp_sd", s2},
                       {"eps1_fd_mean", mf},
                       {"eps1_fd_sd", sf}});
    }
    return {{"cells", cells_json}, {"aggregate", agg}};
}

BenchmarkReport run_benchmark(const ExperimentConfig& cfg, const std::vector<double>& densities,
                              const std::vector<double>& noises,
                              const std::vector<std::uint64_t>& seeds) {
    struct Job {
        double density, noise;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (double d : densities)
        for (double n : noises)
            for (std::uint64_t s : seeds) jobs.push_back({d, n, s});

    BenchmarkReport report;
    report.cells.resize(jobs.size());
    std::vector<std::string> errors(jobs.size());

#pragma omp parallel for schedule(dynamic)
    for (size_t i = 0; i < jobs.size(); ++i) {
        ExperimentConfig cell_cfg = cfg;
        cell_cfg.data.density = jobs[i].density;
        cell_cfg.data.noise = jobs[i].noise;
        cell_cfg.data.seed = jobs[i].seed;
        BenchmarkCell c{};
        c.density = jobs[i].density;
        c.noise = jobs[i].noise;
        c.seed = jobs[i].seed;
        try {
            const SystemSpec spec = system_by_name(cell_cfg.system);
            const Vec ic = cell_cfg.data.ics.empty()
                               ? default_ic(cell_cfg.system)
                               : Eigen::Map<const Vec>(cell_cfg.data.ics[0].data(),
                                                       static_cast<Index>(cell_cfg.data.ics[0].size()));
            auto [train, test] = generate(spec, ic, make_generate_options(cell_cfg));
            c.n_points = static_cast<int>(train.times.size());
            const FitResult fit = run_fit(train, cell_cfg);
            c.eps1_gp = fit.eps1;
            c.eps2_gp = fit.eps2;
            c.eps1_fd = run_fd_baseline(train, cell_cfg).eps1;
        } catch (const std::exception& e) {
            c.eps1_gp = c.eps2_gp = c.eps1_fd = std::numeric_limits<double>::quiet_NaN();
            errors[i] = e.what();
        }
        report.cells[i] = std::move(c);
    }
    for (size_t i = 0; i < jobs.size(); ++i)
        if (!errors[i].empty())
            fail(errc::optimization_failed,
                 "benchmark cell (density=" + std::to_string(jobs[i].density) +
                     ", noise=" + std::to_string(jobs[i].noise) + ") failed: " + errors[i]);
    return report;
}

nlohmann::json fit_artifact(const FitResult& fit, const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["version"] = version;
    j["system"] = fit.system;
    j["scenario"] = fit.scenario;
    if (std::isfinite(fit.eps1)) j["eps1"] = fit.eps1;
    if (std::isfinite(fit.eps2)) j["eps2"] = fit.eps2;
    j["log"] = fit.log;
    nlohmann::json eqs = nlohmann::json::array();
    for (size_t i = 0; i < fit.posteriors.size(); ++i) {
        nlohmann::json e = posterior_to_json(fit.posteriors[i]);
        if (i < fit.patterns.size()) {
            e["active"] = fit.patterns[i].active;
            e["lambda_active"] = fit.patterns[i].lambda_active;
            e["lambda_sparse"] = fit.patterns[i].lambda_sparse;
        } else {
            e["lambda_active"] = cfg.inference.lambda;
            e["lambda_sparse"] = cfg.inference.lambda;
        }
        eqs.push_back(std::move(e));
    }
    j["equations"] = eqs;
    nlohmann::json gps = nlohmann::json::array();
    for (const auto& m : fit.gp_models) gps.push_back(state_model_to_json(m));
    j["gp_models"] = gps;
    if (fit.chain) {
        j["net"] = {{"input_dim", fit.net.input_dim}, {"hidden", fit.net.hidden}};
        j["chain_csv"] = "chain.csv";
    }
    return j;
}

FitResult fit_from_artifact(const nlohmann::json& artifact,
                            const std::filesystem::path& artifact_dir) {
    FitResult fit;
    fit.system = artifact.at("system").get<std::string>();
    fit.scenario = artifact.at("scenario").get<std::string>();
    if (artifact.contains("eps1") && artifact["eps1"].is_number())
        fit.eps1 = artifact["eps1"].get<double>();
    if (artifact.contains("eps2") && artifact["eps2"].is_number())
        fit.eps2 = artifact["eps2"].get<double>();
    fit.log = artifact.value("log", nlohmann::json::object());
    for (const auto& e : artifact.value("equations", nlohmann::json::array()))
        fit.posteriors.push_back(posterior_from_json(e));
    if (artifact.contains("net")) {
        fit.net.input_dim = artifact["net"].value("input_dim", 1);
        fit.net.hidden = artifact["net"].value("hidden", 8);
    }
    if (artifact.contains("chain_csv"))
        fit.chain = read_chain(artifact_dir / artifact["chain_csv"].get<std::string>());
    return fit;
}

void write_band_csv(const std::filesystem::path& path, const EnsemblePrediction& band) {
    std::ostringstream csv;
    csv << "t";
    for (Index j = 0; j < band.mean.cols(); ++j)
        csv << ",state_" << (j + 1) << "_mean,state_" << (j + 1) << "_sd";
    csv << "\n";
    char buf[32];
    for (Index k = 0; k < band.times.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", band.times[k]);
        csv << buf;
        for (Index j = 0; j < band.mean.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", band.mean(k, j));
            csv << "," << buf;
            std::snprintf(buf, sizeof buf, "%.17g", band.sd(k, j));
            csv << "," << buf;
        }
        csv << "\n";
    }
    write_text_atomic(path, csv.str());
}

void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
    nlohmann::json m;
    m["version"] = version;
    m["config"] = config_to_json(cfg);
    m["config_hash"] = config_hash(cfg);
    m["root_seed"] = cfg.data.seed;
    write_text_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace gpdyn
