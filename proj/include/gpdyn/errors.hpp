#pragma once

#include <stdexcept>
#include <string>

namespace gpdyn {

enum class errc {
    usage,
    io,
    // data errors
    non_increasing_times,
    empty_training_set,
    degenerate_grid,
    non_uniform_grid,
    window_too_large,
    non_finite_term,
    index_map_mismatch,
    shape_mismatch,
    zero_truth_norm,
    // numerical errors
    optimization_failed,
    conditioning_failed,
    singular_system,
    all_terms_pruned,
    newton_divergence,
    step_size_underflow,
    all_draws_diverged,
    non_finite_init,
    domain_violation,
};

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    errc code() const { return code_; }

    // Process exit code contract: 2 usage, 3 data error, 4 numerical failure.
    static int exit_code(errc c) {
        switch (c) {
            case errc::usage: return 2;
            case errc::io:
            case errc::non_increasing_times:
            case errc::empty_training_set:
            case errc::degenerate_grid:
            case errc::non_uniform_grid:
            case errc::window_too_large:
            case errc::non_finite_term:
            case errc::index_map_mismatch:
            case errc::shape_mismatch:
            case errc::zero_truth_norm: return 3;
            default: return 4;
        }
    }
    int exit_code() const { return exit_code(code_); }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw Error(code, what); }

}  // namespace gpdyn
