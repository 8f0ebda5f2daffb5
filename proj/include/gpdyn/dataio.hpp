#pragma once

#include "gpdyn/common.hpp"
#include "gpdyn/dynamics.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

namespace gpdyn {

// One benchmark trajectory with its sampling/noise provenance. Inference code
// must go through train_view() and never touches clean_values.
struct Dataset {
    std::string system;
    Vec ic;
    Vec times;
    Mat values;        // possibly noisy, K x N
    Mat clean_values;  // retained for error reporting only
    double noise_level = 0.0;
    double density = 1.0;
    std::uint64_t seed = 0;
    double train_begin = 0.0;
    double train_end = 0.0;
};

// The slice of a dataset inference is allowed to see.
struct TrainView {
    const Vec& times;
    const Mat& values;
};
inline TrainView train_view(const Dataset& d) { return {d.times, d.values}; }

struct GenerateOptions {
    double t_end = 20.0;
    double dt = 1e-3;             // dense generation grid spacing
    double train_fraction = 0.4;  // window [0, train_fraction * t_end]
    double base_fraction = 1.0;   // pool drawn first and treated as "100% data"
    double density = 1.0;         // fraction of the base pool
    int n_points = -1;            // absolute count override when positive
    double noise_level = 0.0;
    std::uint64_t seed = 1;
    int test_stride = 10;  // thinning of the dense test trajectory
    IntegrateOptions integrator;
};

// Dense solve -> base pool -> density subsample -> additive noise with
// per-component sd = noise_level * mean(clean training component).
// Returns (train, test); the test set is the clean remainder of the window.
std::pair<Dataset, Dataset> generate(const SystemSpec& spec, const Vec& ic,
                                     const GenerateOptions& opts);

// Second-order finite differences on a non-uniform grid (central interior,
// one-sided boundaries). Throws errc::degenerate_grid on duplicate times.
Mat finite_difference_derivatives(const Vec& times, const Mat& values);

// Classic least-squares polynomial smoother; requires a uniform grid and an
// odd window wider than the polynomial order. Boundary frames use asymmetric fits.
Mat savitzky_golay(const Vec& times, const Mat& values, int window, int poly_order);

// Local polynomial smoothing on arbitrary grids (nearest-window least squares);
// coincides with savitzky_golay on uniform grids. Used by the finite-difference
// baseline when the subsampled grid is not uniform.
Mat smooth_scattered(const Vec& times, const Mat& values, int window, int poly_order);

// Ordinary least squares theta = argmin ||G theta - d||^2 for the baseline.
Vec baseline_linreg(const Mat& G, const Vec& d_fd);

// CSV (t, x1..xN, clean_x1..clean_xN) plus sidecar <path>.meta.json; writes are
// atomic (temp + rename).
void write_dataset(const std::filesystem::path& csv_path, const Dataset& d);
Dataset read_dataset(const std::filesystem::path& csv_path);

void write_text_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace gpdyn
