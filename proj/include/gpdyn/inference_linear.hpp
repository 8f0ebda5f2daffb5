#pragma once

#include "gpdyn/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gpdyn {

// Named candidate terms g_j : R^N -> R evaluated row-wise on a state matrix.
struct Dictionary {
    struct Term {
        std::string name;
        std::function<double(const Vec&)> fn;
    };
    std::vector<Term> terms;
    int arity = 0;

    int size() const { return static_cast<int>(terms.size()); }
    std::vector<std::string> names() const;

    // Lotka-Volterra parametrizations: the known two-term structure per
    // equation, and the six-term quadratic candidate set for identification.
    static Dictionary lv_known_eq1();  // [x1, x1*x2]
    static Dictionary lv_known_eq2();  // [x1*x2, x2]
    static Dictionary quadratic_2d();  // [1, x1, x2, x1^2, x2^2, x1*x2]
};

// G[k][j] = g_j(x(t_k)); throws errc::non_finite_term naming term and row.
Mat design_matrix(const Dictionary& dict, const Mat& states);
namespace ref {
Mat design_matrix(const Dictionary& dict, const Mat& states);
}

struct GaussianPosterior {
    Vec mean;
    Mat covariance;
    std::vector<std::string> term_names;
};

// mu = (G^T Rdd G + Lambda)^{-1} G^T Rdd d_hat, Sigma = (G^T Rdd G + Lambda)^{-1},
// solved through Cholesky of the normal matrix. Lambda = 0 with a rank-deficient
// normal matrix throws errc::singular_system.
GaussianPosterior posterior(const Mat& G, const Mat& Rdd, const Vec& d_hat,
                            const Vec& lambda_diag,
                            std::vector<std::string> term_names = {});

struct SparsityPattern {
    std::vector<int> active;      // retained term indices, ascending
    double lambda_active = 1e-7;  // small penalty on retained terms
    double lambda_sparse = 1e7;   // large penalty pinning pruned terms at zero
};

// Sequential threshold ridge regression on min ||G theta - d||^2 + ||theta||^2:
// solve restricted to active columns, prune |theta_j| < threshold, iterate to a
// fixed point. Throws errc::all_terms_pruned when nothing survives.
SparsityPattern stridge(const Mat& G, const Vec& d_hat, double threshold, int max_iter = 20,
                        double lambda_active = 1e-7, double lambda_sparse = 1e7);

// Full-size posterior with lambda_active on retained and lambda_sparse on
// pruned coordinates.
GaussianPosterior sparse_posterior(const Mat& G, const Mat& Rdd, const Vec& d_hat,
                                   const SparsityPattern& pattern,
                                   std::vector<std::string> term_names = {});

// One equation's contribution to a shared-parameter system; index_map embeds
// the equation's local parameters into the union vector.
struct EquationBlock {
    Mat G;
    Mat Rdd;
    Vec d_hat;
    std::vector<int> index_map;
};

GaussianPosterior joint_posterior(std::span<const EquationBlock> blocks, const Vec& lambda_union,
                                  std::vector<std::string> term_names = {});

// Relative error of posterior means and relative posterior deviation,
// normalized by the truth norm, as percentages.
std::pair<double, double> metrics_eps(std::span<const GaussianPosterior> posteriors,
                                      std::span<const Vec> truth);

nlohmann::json posterior_to_json(const GaussianPosterior& p);
GaussianPosterior posterior_from_json(const nlohmann::json& j);

}  // namespace gpdyn
