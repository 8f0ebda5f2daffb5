#pragma once

#include "gpdyn/common.hpp"
#include "gpdyn/dynamics.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace gpdyn {

// Single-hidden-layer tanh network f(x; theta) = sum_l v_l tanh(w_l.x + b_l).
// The flat parameter vector packs [W row-major (L x N) | b (L) | v (L)].
struct ShallowNet {
    int input_dim = 1;
    int hidden = 8;

    int param_count() const { return hidden * (input_dim + 2); }

    struct Unpacked {
        Mat weights_in;  // L x N
        Vec biases;      // L
        Vec weights_out; // L
    };
    Unpacked unflatten(const Vec& theta) const;
    Vec flatten(const Unpacked& u) const;

    double eval(const Vec& x, const Vec& theta) const;
    // f(x_k; theta) over the rows of a K x N state matrix.
    Vec eval_rows(const Mat& states, const Vec& theta) const;
};

// -1/2 (||f(states;theta) - d_hat||^2_Rdd + lambda ||theta||^2), constants dropped.
double nn_log_posterior(const Vec& theta, const ShallowNet& net, const Mat& states,
                        const Mat& Rdd, const Vec& d_hat, double lambda);

// One equation's residual term for a general (possibly shared-theta) target:
// f maps (states, theta) to the K-vector of rhs values on the rows.
struct ResidualBlock {
    std::function<Vec(const Mat&, const Vec&)> f;
    Mat states;
    Mat Rdd;
    Vec d_hat;
};

// Sum of block residual quadratics plus the Gaussian prior term. Returns -inf
// when a block's f throws a domain error or yields non-finite values.
double blocks_log_posterior(const Vec& theta, std::span<const ResidualBlock> blocks,
                            const Vec& lambda_diag);

struct McmcOptions {
    long steps = 50000;
    long burn_in = 10000;
    int thin = 10;
    double target_accept = 0.23;
    double initial_scale = 0.1;
    bool adapt = true;  // scale (and diagonal preconditioner) adapted during burn-in only
    std::uint64_t seed = 0;
};

struct SampleChain {
    Mat samples;             // S x P post-burn-in, thinned
    double acceptance_rate;  // post-burn-in
    Vec log_posterior_trace; // per retained sample
    double proposal_scale;   // final adapted global scale
    Vec scale_diag;          // frozen diagonal preconditioner
    std::uint64_t seed;
};

// Gaussian random-walk Metropolis-Hastings. The proposal is adapted toward
// target_accept during burn-in and frozen afterwards. Throws
// errc::non_finite_init when target(init) is not finite.
SampleChain run_chain(const Vec& init, const std::function<double(const Vec&)>& target,
                      const McmcOptions& opts);

// Derivative-free-safe BFGS ascent with finite-difference gradients; used to
// warm-start chains near the posterior mode. Points where the target is -inf
// are handled by one-sided differences and step backtracking.
Vec maximize_target(const std::function<double(const Vec&)>& target, const Vec& init,
                    int max_iter = 200, double fd_eps = 1e-6);

// Pointwise mean and standard deviation of f(x; theta) over the chain samples.
std::pair<Vec, Vec> posterior_f_band(const SampleChain& chain, const ShallowNet& net,
                                     const Mat& query_states);
namespace ref {
std::pair<Vec, Vec> posterior_f_band(const SampleChain& chain, const ShallowNet& net,
                                     const Mat& query_states);
}

// Uniform resampling of chain rows for ensemble prediction.
ThetaSampler chain_sampler(const SampleChain& chain);

// CSV of retained samples plus JSON metadata (acceptance rate, scale, seed, shape).
void write_chain(const std::filesystem::path& csv_path, const SampleChain& chain,
                 const nlohmann::json& extra_meta);
SampleChain read_chain(const std::filesystem::path& csv_path);

}  // namespace gpdyn
