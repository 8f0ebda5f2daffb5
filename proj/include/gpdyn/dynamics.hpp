#pragma once

#include "gpdyn/common.hpp"
#include "gpdyn/inference_linear.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace gpdyn {

// Right-hand side registry entry: dx/dt = rhs(x, theta). theta concatenates the
// per-equation parameter vectors.
struct SystemSpec {
    std::string name;
    int state_dim = 0;
    int theta_dim = 0;
    std::function<Vec(const Vec& x, const Vec& theta)> rhs;
    std::optional<Vec> truth;
};

// Benchmark systems.
SystemSpec lotka_volterra_system();  // theta = (a11, a12 | a21, a22), truth (1.5, -1, 1, -3)
SystemSpec logistic_system();        // dx/dt = x(1-x); theta unused
SystemSpec blackhole_system();       // theta = (e, p), truth (0.5, 100)

// Model learned as per-equation dictionaries with stacked coefficients.
SystemSpec dictionary_system(std::string name, std::vector<Dictionary> dicts);

double logistic_solution(double t, double gamma);

// Black-hole test-body Cartesian trajectory from (phi, chi) angles. Validates
// e in [0,1) and p > 6+2e; throws errc::domain_violation otherwise.
Mat blackhole_observables(const Vec& phi, const Vec& chi, double e, double p);

struct IntegrateOptions {
    enum class Method { implicit_euler, adaptive_rk };
    Method method = Method::adaptive_rk;
    double dt = 1e-3;      // implicit Euler step
    double rtol = 1e-8;    // adaptive RK tolerances
    double atol = 1e-10;
    int max_newton = 50;
    double newton_tol = 1e-12;
};

// Trajectory rows at the requested output instants; row 0 is x0 at out_times[0].
Mat integrate(const SystemSpec& spec, const Vec& theta, const Vec& x0, const Vec& out_times,
              const IntegrateOptions& opts = {});

using ThetaSampler = std::function<Vec(std::mt19937_64&)>;

ThetaSampler gaussian_sampler(const GaussianPosterior& posterior);
ThetaSampler fixed_sampler(const Vec& theta);

struct EnsemblePrediction {
    Vec times;
    Mat mean;  // one column per state component
    Mat sd;
    int draws_used = 0;
    int divergent_draws = 0;
};

// Integrates `draws` posterior draws and reports pointwise moments over the
// non-divergent ones. Deterministic for a fixed seed regardless of thread count.
EnsemblePrediction ensemble_predict(const SystemSpec& spec, const ThetaSampler& sampler,
                                    const Vec& x0, const Vec& out_times, int draws,
                                    std::uint64_t seed, const IntegrateOptions& opts = {});

}  // namespace gpdyn
