#pragma once

#include "gpdyn/common.hpp"
#include "gpdyn/kernels.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <vector>

namespace gpdyn {

// Hyperparameter search settings. The restart box below is both the sampling
// range of the multi-start draws and the optimizer's box constraints, relative
// to var(u) and the grid span:
//   sigma2 in [0.1, 10] var,  lengthscale in [0.05, 2] span,  chi_u in [1e-6, 1e-1] var.
// The marginal likelihood of noise-free data is maximized at the chi_u -> 0
// boundary, so the lower bound doubles as the effective noise floor.
struct FitOptions {
    int restarts = 8;
    std::uint64_t seed = 0x5eedULL;  // fixed default: fits are deterministic
    int max_iter = 80;
    double grad_tol = 1e-6;  // relative to max(1, |objective|)
    int coarse_cap = 400;    // above this K, restarts search a strided subgrid first
};

struct HyperFit {
    SEKernel kernel{1.0, 1.0};
    double chi_u = 0.0;
    double log_marginal = 0.0;  // achieved log p(u) on the full grid
};

// log p(u) = -1/2 u^T Kuu^{-1} u - 1/2 log|Kuu| - K/2 log(2 pi)
double log_marginal_likelihood(const Vec& times, const Vec& u, const SEKernel& kernel,
                               double chi_u);

// Best-of-restarts quasi-Newton maximization of the marginal likelihood over
// (log sigma2, log lengthscale, log chi_u). Throws errc::optimization_failed
// if no restart reaches a finite objective.
HyperFit fit_hyperparameters(const Vec& times, const Vec& u, const FitOptions& opts = {});

// Per-component GP model with the cached quantities downstream inference uses.
// The data mean is subtracted before regression (the GP prior is zero-mean) and
// added back to the smoothed states; derivatives are unaffected by the shift.
struct GPStateModel {
    SEKernel kernel{1.0, 1.0};
    double chi_u = 0.0;
    double chi_d = 0.0;  // value actually used after conditioning escalation
    Vec times;
    Vec u;
    double u_mean = 0.0;
    std::vector<int> deriv_idx;  // derivative grid as subset of the observation grid

    // cached on build
    Vec alpha;  // Kuu^{-1} (u - mean)
    Vec u_hat;  // mean + kappa(T,T) Kuu^{-1} (u - mean)
    Vec d_hat;  // d/dt kappa(D,T) Kuu^{-1} (u - mean) on the derivative grid
    Mat Rdd;    // (Kdd - Kdu Kuu^{-1} Kud)^{-1} on the derivative grid
    double jitter = 0.0;
};

// Builds the model and caches u_hat, d_hat, Rdd. chi_d_init < 0 means "start at
// chi_u". An empty subset means the full grid.
GPStateModel make_state_model(const SEKernel& kernel, double chi_u, const Vec& times,
                              const Vec& u, double chi_d_init = -1.0,
                              std::vector<int> deriv_subset = {});

// fit_hyperparameters + make_state_model in one step.
GPStateModel fit_state_model(const Vec& times, const Vec& u, const FitOptions& opts = {},
                             double chi_d_init = -1.0, std::vector<int> deriv_subset = {});

Vec smooth_states(const GPStateModel& model);
Vec estimate_derivatives(const GPStateModel& model);

// Standalone precision computation: escalates chi_d x10 from chi_d_init until
// the Schur complement's condition estimate is <= 1e8; returns (Rdd, chi_d used).
// Throws errc::conditioning_failed once chi_d exceeds 1e6 * chi_u.
std::pair<Mat, double> derivative_precision(const GPStateModel& model, double chi_d_init);

// Hyperparameters and grids only; cached matrices are recomputed on load.
nlohmann::json state_model_to_json(const GPStateModel& model);
GPStateModel state_model_from_json(const nlohmann::json& j);

}  // namespace gpdyn
