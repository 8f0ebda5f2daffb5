// Command-line front end: generate / fit / predict / benchmark.

#include "gpdyn/experiments.hpp"
#include "gpdyn/errors.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace gpdyn;

std::filesystem::path output_root(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("GPDYN_OUT")) return env;
    return "gpdyn_out";
}

Vec parse_ic(const std::string& s, const std::string& system) {
    if (s.empty()) return default_ic(system);
    std::vector<double> vals;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    return Eigen::Map<const Vec>(vals.data(), static_cast<Index>(vals.size()));
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> vals;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    return vals;
}

struct CommonFlags {
    std::string config_file;
    std::string system;
    std::string scenario;
    double density = -1;
    double noise = -1;
    long long seed = -1;
    int points = -1;
    std::string out;
    std::string ic;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool need_system) {
    cmd->add_option("--config", f.config_file, "JSON config file (flags override it)");
    auto* sys = cmd->add_option("--system", f.system, "lotka-volterra | logistic | blackhole");
    if (need_system) sys->required();
    cmd->add_option("--scenario", f.scenario, "case-a | case-b | nn-mcmc | shared-param");
    cmd->add_option("--density", f.density, "fraction of the base data pool");
    cmd->add_option("--noise", f.noise, "relative noise level (e.g. 0.1)");
    cmd->add_option("--seed", f.seed, "root seed for sampling and noise");
    cmd->add_option("--points", f.points, "absolute training point count");
    cmd->add_option("--out", f.out, "output directory (default $GPDYN_OUT or ./gpdyn_out)");
    cmd->add_option("--ic", f.ic, "initial condition, comma separated");
}

ExperimentConfig build_config(const CommonFlags& f) {
    ExperimentConfig cfg;
    if (!f.config_file.empty()) {
        std::ifstream in(f.config_file);
        if (!in) fail(errc::io, "cannot open config " + f.config_file);
        nlohmann::json j = nlohmann::json::parse(in, nullptr, true, true);
        cfg = config_from_json(j);
    }
    if (!f.system.empty()) cfg.system = f.system;
    if (!f.scenario.empty()) cfg.scenario = f.scenario;
    if (f.density >= 0) cfg.data.density = f.density;
    if (f.noise >= 0) cfg.data.noise = f.noise;
    if (f.seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(f.seed);
    if (f.points > 0) cfg.data.n_points = f.points;
    if (!f.ic.empty()) {
        const Vec ic = parse_ic(f.ic, cfg.system);
        cfg.data.ics = {std::vector<double>(ic.begin(), ic.end())};
    }
    return cfg;
}

std::pair<Dataset, Dataset> generate_for(const ExperimentConfig& cfg) {
    const SystemSpec spec = system_by_name(cfg.system);
    const Vec ic = cfg.data.ics.empty()
                       ? default_ic(cfg.system)
                       : Eigen::Map<const Vec>(cfg.data.ics[0].data(),
                                               static_cast<Index>(cfg.data.ics[0].size()));
    return generate(spec, ic, make_generate_options(cfg));
}

int cmd_generate(const CommonFlags& flags) {
    const ExperimentConfig cfg = build_config(flags);
    const auto dir = output_root(flags.out);
    std::filesystem::create_directories(dir);
    auto [train, test] = generate_for(cfg);
    write_dataset(dir / "train.csv", train);
    write_dataset(dir / "test.csv", test);
    write_manifest(dir, cfg);
    std::cout << "wrote " << (dir / "train.csv").string() << " (" << train.times.size()
              << " points) and " << (dir / "test.csv").string() << "\n";
    return 0;
}

int cmd_fit(const CommonFlags& flags, const std::string& data_file) {
    ExperimentConfig cfg = build_config(flags);
    const auto dir = output_root(flags.out);
    std::filesystem::create_directories(dir);

    std::vector<Dataset> trains;
    if (!data_file.empty()) {
        trains.push_back(read_dataset(data_file));
        if (trains[0].system.empty()) trains[0].system = cfg.system;
    } else if (cfg.data.ics.size() > 1) {
        for (const auto& icv : cfg.data.ics) {
            ExperimentConfig one = cfg;
            one.data.ics = {icv};
            trains.push_back(generate_for(one).first);
        }
    } else {
        trains.push_back(generate_for(cfg).first);
    }

    const FitResult fit = run_fit(trains, cfg);
    nlohmann::json artifact = fit_artifact(fit, cfg);
    write_text_atomic(dir / "posterior.json", artifact.dump(2) + "\n");
    if (fit.chain) write_chain(dir / "chain.csv", *fit.chain, {{"scenario", fit.scenario}});
    write_manifest(dir, cfg);

    std::cout << "scenario " << fit.scenario << " on " << fit.system;
    if (std::isfinite(fit.eps1))
        std::cout << ": eps1 = " << fit.eps1 << "%, eps2 = " << fit.eps2 << "%";
    std::cout << "\n";
    if (fit.log.contains("named")) std::cout << "parameters: " << fit.log["named"].dump() << "\n";
    std::cout << "artifact: " << (dir / "posterior.json").string() << "\n";
    return 0;
}

int cmd_predict(const std::string& artifact_file, const CommonFlags& flags, double t_end,
                int out_points, int draws, long long pseed) {
    std::ifstream in(artifact_file);
    if (!in) fail(errc::io, "cannot open artifact " + artifact_file);
    nlohmann::json artifact = nlohmann::json::parse(in);
    const auto artifact_dir = std::filesystem::path(artifact_file).parent_path();
    const FitResult fit = fit_from_artifact(artifact, artifact_dir);

    ExperimentConfig cfg;
    cfg.system = fit.system;
    cfg.scenario = fit.scenario;
    const GenerateOptions defs = make_generate_options(cfg);
    if (t_end <= 0) t_end = defs.t_end;
    const Vec ic = parse_ic(flags.ic, fit.system);

    Vec times(out_points);
    for (int k = 0; k < out_points; ++k)
        times[k] = t_end * static_cast<double>(k) / (out_points - 1);

    const auto band = run_predict(fit, ic, times, draws,
                                  pseed >= 0 ? static_cast<std::uint64_t>(pseed) : 11);
    const auto dir = output_root(flags.out);
    std::filesystem::create_directories(dir);
    write_band_csv(dir / "band.csv", band);
    std::cout << "band: " << (dir / "band.csv").string() << " (" << band.draws_used
              << " draws used, " << band.divergent_draws << " divergent)\n";
    return 0;
}

int cmd_benchmark(const CommonFlags& flags, const std::string& densities,
                  const std::string& noises, const std::string& seeds) {
    ExperimentConfig cfg = build_config(flags);
    std::vector<double> dens = parse_list(densities);
    std::vector<double> nois = parse_list(noises);
    std::vector<std::uint64_t> sds;
    for (double s : parse_list(seeds)) sds.push_back(static_cast<std::uint64_t>(s));

    const BenchmarkReport report = run_benchmark(cfg, dens, nois, sds);
    const auto dir = output_root(flags.out);
    std::filesystem::create_directories(dir);
    write_text_atomic(dir / "benchmark.json", report.to_json().dump(2) + "\n");
    write_manifest(dir, cfg);

    std::cout << "density  noise  eps1_gp%   eps2_gp%   eps1_fd%\n";
    for (const auto& c : report.cells)
        std::printf("%7.3f %6.2f  %9.4f  %9.4f  %9.4f\n", c.density, c.noise, c.eps1_gp,
                    c.eps2_gp, c.eps1_fd);
    std::cout << "report: " << (dir / "benchmark.json").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GP-constrained Bayesian learning of dynamical systems"};
    app.require_subcommand(1);

    CommonFlags gen_flags, fit_flags, pred_flags, bench_flags;
    std::string data_file, artifact_file;
    std::string densities = "1.0,0.1,0.05,0.01", noises = "0,0.1,0.2", seeds = "1";
    double t_end = -1;
    int out_points = 1000, draws = 100;
    long long pseed = -1;

    auto* gen = app.add_subcommand("generate", "Generate a benchmark dataset");
    add_common(gen, gen_flags, true);

    auto* fit = app.add_subcommand("fit", "Fit a scenario and export the posterior");
    add_common(fit, fit_flags, true);
    fit->add_option("--data", data_file, "existing dataset CSV (skips generation)");

    auto* pred = app.add_subcommand("predict", "Ensemble prediction from a posterior artifact");
    pred->add_option("--artifact", artifact_file, "posterior.json from fit")->required();
    pred->add_option("--ic", pred_flags.ic, "initial condition, comma separated");
    pred->add_option("--t-end", t_end, "prediction horizon (default: system horizon)");
    pred->add_option("--points", out_points, "output grid size");
    pred->add_option("--draws", draws, "posterior draws");
    pred->add_option("--seed", pseed, "ensemble seed");
    pred->add_option("--out", pred_flags.out, "output directory");

    auto* bench = app.add_subcommand("benchmark", "Sweep the density x noise grid");
    add_common(bench, bench_flags, true);
    bench->add_option("--densities", densities, "comma list of densities");
    bench->add_option("--noises", noises, "comma list of noise levels");
    bench->add_option("--seeds", seeds, "comma list of seeds");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_generate(gen_flags);
        if (fit->parsed()) return cmd_fit(fit_flags, data_file);
        if (pred->parsed()) return cmd_predict(artifact_file, pred_flags, t_end, out_points,
                                               draws, pseed);
        if (bench->parsed()) return cmd_benchmark(bench_flags, densities, noises, seeds);
        std::cerr << app.help();
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const gpdyn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
