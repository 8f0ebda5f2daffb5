#pragma once

#include "gpdyn/common.hpp"

#include <cmath>

namespace gpdyn {

// Squared exponential covariance kappa(t,t') = variance * exp(-(t-t')^2 / (2 lengthscale^2)),
// with the analytic partial derivatives needed for the joint state/derivative Gram blocks.
struct SEKernel {
    double variance;
    double lengthscale;

    SEKernel(double variance_, double lengthscale_);

    double eval(double t, double t2) const {
        const double d = t - t2;
        return variance * std::exp(-0.5 * d * d / (lengthscale * lengthscale));
    }
    // d/dt kappa
    double eval_dt(double t, double t2) const {
        const double d = t - t2;
        return -d / (lengthscale * lengthscale) * eval(t, t2);
    }
    // d/dt' kappa
    double eval_dt2(double t, double t2) const { return -eval_dt(t, t2); }
    // d^2/(dt dt') kappa
    double eval_dt_dt2(double t, double t2) const {
        const double l2 = lengthscale * lengthscale;
        const double d = t - t2;
        return (1.0 / l2 - d * d / (l2 * l2)) * eval(t, t2);
    }
};

// Gram blocks of the joint (state, derivative) normal on a grid of K time stamps:
//   Kuu = kappa(T,T) + chi_u I      state covariance
//   Kdu = d/dt kappa(T,T)           derivative/state cross block, Kud = Kdu^T
//   Kdd = d2/(dt dt') kappa(T,T) + chi_d I
// Kud is exposed as the exact transpose of Kdu rather than re-evaluated.
struct GramBlocks {
    Mat Kuu;
    Mat Kdu;
    Mat Kdd;
    Vec times;
    double chi_u = 0.0;
    double chi_d = 0.0;

    Mat kud() const { return Kdu.transpose(); }
};

// Fills the blocks on a strictly increasing grid. Throws errc::non_increasing_times otherwise.
GramBlocks assemble(const SEKernel& kernel, const Vec& times, double chi_u, double chi_d);

// Serial reference used by tests and the kernel benchmark; must produce
// bit-identical blocks to assemble().
namespace ref {
GramBlocks assemble(const SEKernel& kernel, const Vec& times, double chi_u, double chi_d);
}

void check_strictly_increasing(const Vec& times);

}  // namespace gpdyn
