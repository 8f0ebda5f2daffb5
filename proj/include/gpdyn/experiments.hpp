#pragma once

#include "gpdyn/common.hpp"
#include "gpdyn/dataio.hpp"
#include "gpdyn/dynamics.hpp"
#include "gpdyn/gp.hpp"
#include "gpdyn/inference_linear.hpp"
#include "gpdyn/inference_mcmc.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace gpdyn {

// Config-driven experiment runner. Every field has a default, so a config
// naming only `system` and `scenario` is runnable; unknown keys are rejected.
struct ExperimentConfig {
    std::string system = "lotka-volterra";
    std::string scenario = "case-a";  // case-a | case-b | nn-mcmc | shared-param

    struct Data {
        double density = 1.0;
        double noise = 0.0;
        std::uint64_t seed = 1;
        int n_points = -1;                     // absolute count override
        std::vector<std::vector<double>> ics;  // empty -> system default IC
        // negative -> system defaults
        double t_end = -1.0;
        double dt = -1.0;
        double train_fraction = -1.0;
        double base_fraction = -1.0;
    } data;

    struct Gp {
        int restarts = 8;
        double chi_d_init = -1.0;  // -1 -> start at the fitted chi_u
        int coarse_cap = 400;
        std::uint64_t seed = 0x5eed;
    } gp;

    struct Inference {
        double lambda = 0.0;  // Case A ridge weight
        double stridge_threshold = 0.1;
        double lambda_active = 1e-7;
        double lambda_sparse = 1e7;
        long mcmc_steps = 50000;
        long mcmc_burn_in = 10000;
        int mcmc_thin = 10;
        int hidden = 8;
        double prior_lambda = 0.01;  // Gaussian prior precision for net weights
        int init_draws = 16;
        int polish_iters = 300;
        std::uint64_t mcmc_seed = 7;
    } inference;

    struct Prediction {
        int draws = 100;
        int output_points = 1000;
        std::uint64_t seed = 11;
    } prediction;

    std::string out_dir;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

SystemSpec system_by_name(const std::string& name);
Vec default_ic(const std::string& system);
GenerateOptions make_generate_options(const ExperimentConfig& cfg);

// Everything a fit produces; which members are populated depends on the scenario.
struct FitResult {
    std::string system;
    std::string scenario;
    std::vector<GPStateModel> gp_models;          // one per state component, per IC
    std::vector<GaussianPosterior> posteriors;    // per equation (affine scenarios)
    std::vector<SparsityPattern> patterns;        // case-b
    std::optional<SampleChain> chain;             // nn-mcmc / shared-param
    ShallowNet net;                               // nn-mcmc shape
    double eps1 = std::numeric_limits<double>::quiet_NaN();
    double eps2 = std::numeric_limits<double>::quiet_NaN();
    nlohmann::json log;  // chi_d escalations, hyperparameters, named parameters
};

// Runs the configured scenario on one or more training trajectories (multiple
// entries mean multi-initial-condition joint inference).
FitResult run_fit(const std::vector<Dataset>& trains, const ExperimentConfig& cfg);
FitResult run_fit(const Dataset& train, const ExperimentConfig& cfg);

// Ensemble prediction for a fitted model from an arbitrary initial condition.
EnsemblePrediction run_predict(const FitResult& fit, const Vec& ic, const Vec& out_times,
                               int draws, std::uint64_t seed);

// Truth vectors per equation for eps metrics, in the learned parametrization.
std::vector<Vec> truth_by_scenario(const std::string& system, const std::string& scenario);

// FD+LinReg baseline (Savitzky-Golay smoothing when noisy): point estimates per
// equation and their eps1 against the scenario truth.
struct BaselineResult {
    std::vector<Vec> theta;
    double eps1;
};
BaselineResult run_fd_baseline(const Dataset& train, const ExperimentConfig& cfg);

struct BenchmarkCell {
    double density;
    double noise;
    std::uint64_t seed;
    int n_points;
    double eps1_gp;
    double eps2_gp;
    double eps1_fd;
};

struct BenchmarkReport {
    std::vector<BenchmarkCell> cells;
    nlohmann::json to_json() const;
};

// density x noise x seed sweep of the GP fit against the FD baseline.
BenchmarkReport run_benchmark(const ExperimentConfig& cfg, const std::vector<double>& densities,
                              const std::vector<double>& noises,
                              const std::vector<std::uint64_t>& seeds);

// Artifact / output files.
nlohmann::json fit_artifact(const FitResult& fit, const ExperimentConfig& cfg);
FitResult fit_from_artifact(const nlohmann::json& artifact,
                            const std::filesystem::path& artifact_dir);
void write_band_csv(const std::filesystem::path& path, const EnsemblePrediction& band);
void write_manifest(const std::filesystem::path& dir, const ExperimentConfig& cfg);

}  // namespace gpdyn
