#include "gpdyn/kernels.hpp"
#include "gpdyn/errors.hpp"

namespace gpdyn {

SEKernel::SEKernel(double variance_, double lengthscale_)
    : variance(variance_), lengthscale(lengthscale_) {
    if (!(variance > 0.0) || !std::isfinite(variance))
        fail(errc::domain_violation, "SEKernel: variance must be positive");
    if (!(lengthscale > 0.0) || !std::isfinite(lengthscale))
        fail(errc::domain_violation, "SEKernel: lengthscale must be positive");
}

void check_strictly_increasing(const Vec& times) {
    if (times.size() < 2)
        fail(errc::non_increasing_times, "time grid needs at least 2 instants");
    for (Index k = 1; k < times.size(); ++k)
        if (!(times[k] > times[k - 1]))
            fail(errc::non_increasing_times, "time grid must be strictly increasing");
}

GramBlocks assemble(const SEKernel& kernel, const Vec& times, double chi_u, double chi_d) {
    check_strictly_increasing(times);
    const Index K = times.size();
    GramBlocks g;
    g.times = times;
    g.chi_u = chi_u;
    g.chi_d = chi_d;
    g.Kuu.resize(K, K);
    g.Kdu.resize(K, K);
    g.Kdd.resize(K, K);

    // Each entry depends only on (i,j), so the parallel fill is deterministic.
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < K; ++i) {
        for (Index j = 0; j < K; ++j) {
            g.Kuu(i, j) = kernel.eval(times[i], times[j]);
            g.Kdu(i, j) = kernel.eval_dt(times[i], times[j]);
            g.Kdd(i, j) = kernel.eval_dt_dt2(times[i], times[j]);
        }
        g.Kuu(i, i) += chi_u;
        g.Kdd(i, i) += chi_d;
    }
    return g;
}

namespace ref {

GramBlocks assemble(const SEKernel& kernel, const Vec& times, double chi_u, double chi_d) {
    check_strictly_increasing(times);
    const Index K = times.size();
    GramBlocks g;
    g.times = times;
    g.chi_u = chi_u;
    g.chi_d = chi_d;
    g.Kuu.resize(K, K);
    g.Kdu.resize(K, K);
    g.Kdd.resize(K, K);
    for (Index i = 0; i < K; ++i) {
        for (Index j = 0; j < K; ++j) {
            g.Kuu(i, j) = kernel.eval(times[i], times[j]);
            g.Kdu(i, j) = kernel.eval_dt(times[i], times[j]);
            g.Kdd(i, j) = kernel.eval_dt_dt2(times[i], times[j]);
        }
        g.Kuu(i, i) += chi_u;
        g.Kdd(i, i) += chi_d;
    }
    return g;
}

}  // namespace ref
}  // namespace gpdyn
