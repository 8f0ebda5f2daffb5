#pragma once

#include "gpdyn/common.hpp"

namespace gpdyn {

// Cholesky with the project-wide jitter policy: 1e-10 * max(diagonal) added
// before every attempt, escalating x10 up to 1e-6 * max(diagonal).
struct JitteredLLT {
    Eigen::LLT<Mat> llt;
    double jitter = 0.0;
};

JitteredLLT jittered_llt(const Mat& A);

double half_logdet(const Eigen::LLT<Mat>& llt);

// Condition estimate from the factor's diagonal: (max L_ii / min L_ii)^2.
double diag_condition(const Eigen::LLT<Mat>& llt);

}  // namespace gpdyn
