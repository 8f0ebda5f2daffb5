#include "gpdyn/linalg.hpp"
#include "gpdyn/errors.hpp"

#include <cmath>

namespace gpdyn {

JitteredLLT jittered_llt(const Mat& A) {
    const double base = 1e-10 * A.diagonal().maxCoeff();
    JitteredLLT out;
    double j = base;
    for (int attempt = 0; attempt < 5; ++attempt, j *= 10.0) {
        Mat Aj = A;
        Aj.diagonal().array() += j;
        out.llt.compute(Aj);
        if (out.llt.info() == Eigen::Success) {
            out.jitter = j;
            return out;
        }
    }
    fail(errc::conditioning_failed, "cholesky failed after jitter escalation to 1e-6*maxdiag");
}

double half_logdet(const Eigen::LLT<Mat>& llt) {
    return llt.matrixLLT().diagonal().array().log().sum();
}

double diag_condition(const Eigen::LLT<Mat>& llt) {
    const auto d = llt.matrixLLT().diagonal();
    const double lo = d.minCoeff();
    const double hi = d.maxCoeff();
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    const double r = hi / lo;
    return r * r;
}

}  // namespace gpdyn
