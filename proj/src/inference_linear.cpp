#include "gpdyn/inference_linear.hpp"
#include "gpdyn/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace gpdyn {

std::vector<std::string> Dictionary::names() const {
    std::vector<std::string> out;
    out.reserve(terms.size());
    for (const auto& t : terms) out.push_back(t.name);
    return out;
}

Dictionary Dictionary::lv_known_eq1() {
    Dictionary d;
    d.arity = 2;
    d.terms = {{"x1", [](const Vec& x) { return x[0]; }},
               {"x1x2", [](const Vec& x) { return x[0] * x[1]; }}};
    return d;
}

Dictionary Dictionary::lv_known_eq2() {
    Dictionary d;
    d.arity = 2;
    d.terms = {{"x1x2", [](const Vec& x) { return x[0] * x[1]; }},
               {"x2", [](const Vec& x) { return x[1]; }}};
    return d;
}

Dictionary Dictionary::quadratic_2d() {
    Dictionary d;
    d.arity = 2;
    d.terms = {{"1", [](const Vec&) { return 1.0; }},
               {"x1", [](const Vec& x) { return x[0]; }},
               {"x2", [](const Vec& x) { return x[1]; }},
               {"x1^2", [](const Vec& x) { return x[0] * x[0]; }},
               {"x2^2", [](const Vec& x) { return x[1] * x[1]; }},
               {"x1x2", [](const Vec& x) { return x[0] * x[1]; }}};
    return d;
}

namespace {

void check_dict(const Dictionary& dict, const Mat& states) {
    if (dict.size() == 0) fail(errc::shape_mismatch, "empty dictionary");
    if (states.cols() != dict.arity)
        fail(errc::shape_mismatch, "state dimension does not match dictionary arity");
    std::set<std::string> seen;
    for (const auto& t : dict.terms)
        if (!seen.insert(t.name).second)
            fail(errc::shape_mismatch, "duplicate term name: " + t.name);
}

void check_entry(double v, const Dictionary& dict, Index row, int j) {
    if (!std::isfinite(v))
        fail(errc::non_finite_term, "term '" + dict.terms[static_cast<size_t>(j)].name +
                                        "' is non-finite at row " + std::to_string(row));
}

}  // namespace

Mat design_matrix(const Dictionary& dict, const Mat& states) {
    check_dict(dict, states);
    const Index K = states.rows();
    const int p = dict.size();
    Mat G(K, p);
    bool bad = false;
#pragma omp parallel for schedule(static)
    for (Index k = 0; k < K; ++k) {
        const Vec x = states.row(k);
        for (int j = 0; j < p; ++j) {
            const double v = dict.terms[static_cast<size_t>(j)].fn(x);
            G(k, j) = v;
            if (!std::isfinite(v)) bad = true;
        }
    }
    if (bad) {  // re-scan serially for a precise report
        for (Index k = 0; k < K; ++k)
            for (int j = 0; j < p; ++j) check_entry(G(k, j), dict, k, j);
    }
    return G;
}

namespace ref {
Mat design_matrix(const Dictionary& dict, const Mat& states) {
    check_dict(dict, states);
    const Index K = states.rows();
    const int p = dict.size();
    Mat G(K, p);
    for (Index k = 0; k < K; ++k) {
        const Vec x = states.row(k);
        for (int j = 0; j < p; ++j) {
            G(k, j) = dict.terms[static_cast<size_t>(j)].fn(x);
            check_entry(G(k, j), dict, k, j);
        }
    }
    return G;
}
}  // namespace ref

namespace {

// Shared solve for all posterior variants: normal matrix A, right-hand side b.
GaussianPosterior solve_normal(Mat A, const Vec& b, bool unregularized,
                               std::vector<std::string> names) {
    const Index p = A.rows();
    A = 0.5 * (A + A.transpose()).eval();
    Eigen::LLT<Mat> llt(A);
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
        // Treat a numerically tiny pivot ratio as rank deficiency.
        const auto d = llt.matrixLLT().diagonal();
        ok = d.minCoeff() > 1e-14 * d.maxCoeff();
    }
    if (!ok) {
        if (unregularized)
            fail(errc::singular_system,
                 "normal matrix is rank-deficient with Lambda = 0; regularize or add data");
        fail(errc::singular_system, "normal matrix is not positive definite");
    }
    GaussianPosterior out;
    out.mean = llt.solve(b);
    // One refinement pass keeps the MAP gradient at the solver floor.
    out.mean += llt.solve(b - A * out.mean);
    out.covariance = llt.solve(Mat::Identity(p, p));
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    out.term_names = std::move(names);
    return out;
}

}  // namespace

GaussianPosterior posterior(const Mat& G, const Mat& Rdd, const Vec& d_hat,
                            const Vec& lambda_diag, std::vector<std::string> term_names) {
    const Index K = G.rows();
    const Index p = G.cols();
    if (Rdd.rows() != K || Rdd.cols() != K || d_hat.size() != K)
        fail(errc::shape_mismatch, "posterior: G/Rdd/d_hat dimensions disagree");
    if (lambda_diag.size() != p) fail(errc::shape_mismatch, "posterior: Lambda size mismatch");
    const Mat RG = Rdd * G;
    Mat A = G.transpose() * RG;
    A += lambda_diag.asDiagonal();
    const Vec b = RG.transpose() * d_hat;
    return solve_normal(std::move(A), b, lambda_diag.isZero(0.0), std::move(term_names));
}

SparsityPattern stridge(const Mat& G, const Vec& d_hat, double threshold, int max_iter,
                        double lambda_active, double lambda_sparse) {
    if (!(threshold > 0)) fail(errc::domain_violation, "stridge threshold must be positive");
    const int p = static_cast<int>(G.cols());
    std::vector<int> active(static_cast<size_t>(p));
    for (int j = 0; j < p; ++j) active[static_cast<size_t>(j)] = j;

    for (int it = 0; it < max_iter; ++it) {
        const int m = static_cast<int>(active.size());
        Mat Ga(G.rows(), m);
        for (int j = 0; j < m; ++j) Ga.col(j) = G.col(active[static_cast<size_t>(j)]);
        Mat A = Ga.transpose() * Ga + Mat::Identity(m, m);  // unit ridge weight
        const Vec theta = A.ldlt().solve(Ga.transpose() * d_hat);
        std::vector<int> kept;
        for (int j = 0; j < m; ++j)
            if (std::abs(theta[j]) >= threshold) kept.push_back(active[static_cast<size_t>(j)]);
        if (kept.empty())
            fail(errc::all_terms_pruned, "stridge pruned all terms; lower the threshold");
        if (kept == active) break;
        active = std::move(kept);
    }
    SparsityPattern out;
    out.active = std::move(active);
    out.lambda_active = lambda_active;
    out.lambda_sparse = lambda_sparse;
    return out;
}

GaussianPosterior sparse_posterior(const Mat& G, const Mat& Rdd, const Vec& d_hat,
                                   const SparsityPattern& pattern,
                                   std::vector<std::string> term_names) {
    const Index p = G.cols();
    if (!(pattern.lambda_sparse > 1.0 && pattern.lambda_active < 1.0 &&
          pattern.lambda_active > 0.0))
        fail(errc::domain_violation, "sparsity pattern requires lambda_s > 1 > lambda_a > 0");
    Vec lambda = Vec::Constant(p, pattern.lambda_sparse);
    for (int j : pattern.active) {
        if (j < 0 || j >= p) fail(errc::index_map_mismatch, "active index out of range");
        lambda[j] = pattern.lambda_active;
    }
    return posterior(G, Rdd, d_hat, lambda, std::move(term_names));
}

GaussianPosterior joint_posterior(std::span<const EquationBlock> blocks, const Vec& lambda_union,
                                  std::vector<std::string> term_names) {
    if (blocks.empty()) fail(errc::shape_mismatch, "joint_posterior needs at least one block");
    const Index P = lambda_union.size();
    Mat A = Mat::Zero(P, P);
    Vec b = Vec::Zero(P);
    for (const auto& blk : blocks) {
        const Index K = blk.G.rows();
        const Index p = blk.G.cols();
        if (static_cast<Index>(blk.index_map.size()) != p)
            fail(errc::index_map_mismatch, "index map length does not match block width");
        for (int idx : blk.index_map)
            if (idx < 0 || idx >= P)
                fail(errc::index_map_mismatch, "index map entry outside the union vector");
        if (blk.Rdd.rows() != K || blk.d_hat.size() != K)
            fail(errc::shape_mismatch, "block G/Rdd/d_hat dimensions disagree");
        const Mat RG = blk.Rdd * blk.G;
        const Mat Ab = blk.G.transpose() * RG;
        const Vec bb = RG.transpose() * blk.d_hat;
        for (Index i = 0; i < p; ++i) {
            const int gi = blk.index_map[static_cast<size_t>(i)];
            b[gi] += bb[i];
            for (Index j = 0; j < p; ++j) A(gi, blk.index_map[static_cast<size_t>(j)]) += Ab(i, j);
        }
    }
    A += lambda_union.asDiagonal();
    return solve_normal(std::move(A), b, lambda_union.isZero(0.0), std::move(term_names));
}

std::pair<double, double> metrics_eps(std::span<const GaussianPosterior> posteriors,
                                      std::span<const Vec> truth) {
    if (posteriors.size() != truth.size())
        fail(errc::shape_mismatch, "metrics_eps: posterior/truth counts differ");
    double num_mean = 0, num_var = 0, den = 0;
    for (size_t i = 0; i < truth.size(); ++i) {
        if (posteriors[i].mean.size() != truth[i].size())
            fail(errc::shape_mismatch, "metrics_eps: parameter dimension mismatch");
        num_mean += (truth[i] - posteriors[i].mean).squaredNorm();
        num_var += posteriors[i].covariance.trace();
        den += truth[i].squaredNorm();
    }
    if (!(den > 0)) fail(errc::zero_truth_norm, "truth vectors have zero norm");
    return {100.0 * std::sqrt(num_mean / den), 100.0 * std::sqrt(num_var / den)};
}

nlohmann::json posterior_to_json(const GaussianPosterior& p) {
    nlohmann::json j;
    j["term_names"] = p.term_names;
    j["mean"] = std::vector<double>(p.mean.begin(), p.mean.end());
    std::vector<std::vector<double>> cov;
    for (Index r = 0; r < p.covariance.rows(); ++r)
        cov.emplace_back(p.covariance.row(r).begin(), p.covariance.row(r).end());
    j["covariance"] = cov;
    return j;
}

GaussianPosterior posterior_from_json(const nlohmann::json& j) {
    GaussianPosterior p;
    p.term_names = j.value("term_names", std::vector<std::string>{});
    const auto mv = j.at("mean").get<std::vector<double>>();
    p.mean = Eigen::Map<const Vec>(mv.data(), static_cast<Index>(mv.size()));
    const auto cv = j.at("covariance").get<std::vector<std::vector<double>>>();
    p.covariance.resize(static_cast<Index>(cv.size()), static_cast<Index>(cv.size()));
    for (size_t r = 0; r < cv.size(); ++r)
        for (size_t c = 0; c < cv[r].size(); ++c)
            p.covariance(static_cast<Index>(r), static_cast<Index>(c)) = cv[r][c];
    return p;
}

}  // namespace gpdyn
