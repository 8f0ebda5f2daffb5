#pragma once

#include "gpdyn/common.hpp"
#include "gpdyn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace testutil {

using gpdyn::Index;
using gpdyn::Mat;
using gpdyn::Vec;

inline Vec random_sorted_times(Index K, double t0, double t1, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(t0, t1);
    std::vector<double> t(static_cast<size_t>(K));
    for (auto& v : t) v = u(rng);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return Eigen::Map<const Vec>(t.data(), static_cast<Index>(t.size()));
}

inline Vec uniform_times(Index K, double t0, double t1) {
    Vec t(K);
    for (Index k = 0; k < K; ++k)
        t[k] = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(K - 1);
    return t;
}

// Central finite difference of a scalar function of one variable.
template <typename F>
double fd_derivative(F f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Draw from a zero-mean GP with the SE kernel on the given grid.
inline Vec gp_sample(const gpdyn::SEKernel& kernel, const Vec& times, double noise_sd,
                     std::uint64_t seed) {
    const Index K = times.size();
    Mat C(K, K);
    for (Index i = 0; i < K; ++i)
        for (Index j = 0; j < K; ++j) C(i, j) = kernel.eval(times[i], times[j]);
    C.diagonal().array() += 1e-10 * kernel.variance;
    Eigen::LLT<Mat> llt(C);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    Vec z(K);
    for (Index i = 0; i < K; ++i) z[i] = n01(rng);
    Vec u = llt.matrixL() * z;
    for (Index i = 0; i < K; ++i) u[i] += noise_sd * n01(rng);
    return u;
}

// Kolmogorov-Smirnov distance of samples against the standard normal CDF.
inline double ks_distance_normal(Vec samples) {
    std::sort(samples.begin(), samples.end());
    const auto n = static_cast<double>(samples.size());
    double d = 0;
    for (Index i = 0; i < samples.size(); ++i) {
        const double cdf = 0.5 * std::erfc(-samples[i] / std::sqrt(2.0));
        d = std::max(d, std::abs(cdf - static_cast<double>(i + 1) / n));
        d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
    }
    return d;
}

}  // namespace testutil
