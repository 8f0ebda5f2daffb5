#include "gpdyn/inference_linear.hpp"
#include "gpdyn/errors.hpp"
#include "gpdyn/gp.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <random>

using namespace gpdyn;

namespace {

Mat random_matrix(Index r, Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    Mat m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = n01(rng);
    return m;
}

Mat random_spd(Index n, std::uint64_t seed) {
    const Mat a = random_matrix(n, n, seed);
    return a * a.transpose() + 0.5 * Mat::Identity(n, n);
}

}  // namespace

TEST_SUITE_BEGIN("inference_linear");

TEST_CASE("design matrix evaluates the terms row-wise") {
    Mat states(1, 2);
    states << 2.0, 3.0;
    const Mat G = design_matrix(Dictionary::lv_known_eq1(), states);
    CHECK(G(0, 0) == doctest::Approx(2.0));
    CHECK(G(0, 1) == doctest::Approx(6.0));

    Mat ones_state(1, 2);
    ones_state << 1.0, 1.0;
    const Mat Q = design_matrix(Dictionary::quadratic_2d(), ones_state);
    for (Index j = 0; j < 6; ++j) CHECK(Q(0, j) == doctest::Approx(1.0));
}

TEST_CASE("design matrix reports the offending term and row") {
    Dictionary d;
    d.arity = 1;
    d.terms = {{"x1", [](const Vec& x) { return x[0]; }},
               {"log_x1", [](const Vec& x) { return std::log(x[0]); }}};
    Mat states(3, 1);
    states << 1.0, -1.0, 2.0;
    try {
        design_matrix(d, states);
        FAIL("expected non_finite_term");
    } catch (const Error& e) {
        CHECK(e.code() == errc::non_finite_term);
        CHECK(std::string(e.what()).find("log_x1") != std::string::npos);
        CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
}

TEST_CASE("identity design gives back the derivative estimate") {
    const Index K = 6;
    const Mat G = Mat::Identity(K, K);
    const Mat Rdd = Mat::Identity(K, K);
    Vec d_hat(K);
    d_hat << 1, -2, 0.5, 3, -1, 0.25;
    const auto post = posterior(G, Rdd, d_hat, Vec::Zero(K));
    CHECK((post.mean - d_hat).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((post.covariance - Mat::Identity(K, K)).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("posterior matches an independent generalized least squares solve") {
    const Index K = 30, p = 3;
    const Mat G = random_matrix(K, p, 1);
    const Mat Rdd = random_spd(K, 2);
    const Vec d_hat = random_matrix(K, 1, 3);
    Vec lambda(p);
    lambda << 0.1, 0.2, 0.0;
    const auto post = posterior(G, Rdd, d_hat, lambda);

    const Mat A = G.transpose() * Rdd * G + Mat(lambda.asDiagonal());
    const Vec mu_oracle = A.fullPivLu().solve(G.transpose() * Rdd * d_hat);
    CHECK((post.mean - mu_oracle).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((post.covariance - A.fullPivLu().inverse()).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("rank-deficient unregularized systems are rejected") {
    Mat G(4, 2);
    G.col(0) << 1, 2, 3, 4;
    G.col(1) = 2 * G.col(0);
    const Mat Rdd = Mat::Identity(4, 4);
    const Vec d = Vec::Ones(4);
    try {
        posterior(G, Rdd, d, Vec::Zero(2));
        FAIL("expected singular_system");
    } catch (const Error& e) {
        CHECK(e.code() == errc::singular_system);
    }
    CHECK_NOTHROW(posterior(G, Rdd, d, Vec::Constant(2, 1e-3)));
}

TEST_CASE("posterior is equivariant under column permutations") {
    const Index K = 25, p = 4;
    const Mat G = random_matrix(K, p, 5);
    const Mat Rdd = random_spd(K, 6);
    const Vec d_hat = random_matrix(K, 1, 7);
    Vec lambda(p);
    lambda << 0.3, 0.01, 2.0, 0.7;

    std::vector<Index> perm{2, 0, 3, 1};
    Mat Gp(K, p);
    Vec lp(p);
    for (Index j = 0; j < p; ++j) {
        Gp.col(j) = G.col(perm[static_cast<size_t>(j)]);
        lp[j] = lambda[perm[static_cast<size_t>(j)]];
    }
    const auto a = posterior(G, Rdd, d_hat, lambda);
    const auto b = posterior(Gp, Rdd, d_hat, lp);
    for (Index j = 0; j < p; ++j)
        CHECK(b.mean[j] == doctest::Approx(a.mean[perm[static_cast<size_t>(j)]]).epsilon(1e-10));
}

TEST_CASE("square invertible system reduces to a direct solve") {
    const Index K = 5;
    const Mat G = random_matrix(K, K, 11) + 3.0 * Mat::Identity(K, K);
    const Vec d_hat = random_matrix(K, 1, 12);
    const auto post = posterior(G, Mat::Identity(K, K), d_hat, Vec::Zero(K));
    CHECK((post.mean - G.partialPivLu().solve(d_hat)).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("MAP gradient vanishes at the posterior mean") {
    const Index K = 40, p = 5;
    const Mat G = random_matrix(K, p, 21);
    const Mat Rdd = random_spd(K, 22);
    const Vec d_hat = random_matrix(K, 1, 23);
    const Vec lambda = Vec::Constant(p, 0.2);
    const auto post = posterior(G, Rdd, d_hat, lambda);
    const Vec grad = 2.0 * (G.transpose() * Rdd * (G * post.mean - d_hat) +
                            lambda.asDiagonal() * post.mean);
    CHECK(grad.lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("posterior covariance shrinks as data accumulate") {
    const Index K = 60, p = 3;
    const Mat G = random_matrix(K, p, 31);
    const Mat Rdd = random_spd(K, 32);
    const Vec d_hat = random_matrix(K, 1, 33);
    const auto small = posterior(G.topRows(20), Rdd.topLeftCorner(20, 20), d_hat.head(20),
                                 Vec::Constant(p, 1e-8));
    const auto big = posterior(G, Rdd, d_hat, Vec::Constant(p, 1e-8));
    CHECK(big.covariance.trace() <= small.covariance.trace());
}

TEST_CASE("stridge recovers a planted sparse model") {
    const Index K = 50;
    const Mat G = random_matrix(K, 3, 41);
    Vec theta(3);
    theta << 2.0, 0.0, 0.0;
    const Vec d = G * theta;
    const auto pat = stridge(G, d, 0.5);
    REQUIRE(pat.active.size() == 1);
    CHECK(pat.active[0] == 0);
}

TEST_CASE("a tiny threshold keeps every term") {
    const Mat G = random_matrix(30, 4, 42);
    const Vec d = G * Vec::Ones(4);
    const auto pat = stridge(G, d, 1e-12);
    CHECK(pat.active.size() == 4);
}

TEST_CASE("stridge is idempotent on its surviving set") {
    const Index K = 60;
    const Mat G = random_matrix(K, 5, 43);
    Vec theta(5);
    theta << 1.5, 0.0, -2.0, 0.0, 0.0;
    const Vec d = G * theta + 0.01 * random_matrix(K, 1, 44);
    const auto pat = stridge(G, d, 0.3);
    Mat Gsub(K, static_cast<Index>(pat.active.size()));
    for (size_t j = 0; j < pat.active.size(); ++j)
        Gsub.col(static_cast<Index>(j)) = G.col(pat.active[j]);
    const auto again = stridge(Gsub, d, 0.3);
    CHECK(again.active.size() == pat.active.size());
}

TEST_CASE("pruning everything is an error") {
    const Mat G = random_matrix(20, 3, 45);
    const Vec d = 0.001 * (G * Vec::Ones(3));
    try {
        stridge(G, d, 100.0);
        FAIL("expected all_terms_pruned");
    } catch (const Error& e) {
        CHECK(e.code() == errc::all_terms_pruned);
    }
}

TEST_CASE("sparse posterior with everything active reduces to the plain posterior") {
    const Index K = 40, p = 4;
    const Mat G = random_matrix(K, p, 51);
    const Mat Rdd = random_spd(K, 52);
    const Vec d_hat = random_matrix(K, 1, 53);
    SparsityPattern pat;
    pat.active = {0, 1, 2, 3};
    pat.lambda_active = 1e-12;
    pat.lambda_sparse = 1e7;
    const auto sparse = sparse_posterior(G, Rdd, d_hat, pat);
    const auto plain = posterior(G, Rdd, d_hat, Vec::Zero(p));
    CHECK((sparse.mean - plain.mean).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("sparsified means obey the ridge shrinkage bound") {
    const Index K = 40, p = 5;
    const Mat G = random_matrix(K, p, 61);
    const Mat Rdd = random_spd(K, 62);
    const Vec d_hat = random_matrix(K, 1, 63);
    SparsityPattern pat;
    pat.active = {1, 3};
    pat.lambda_active = 1e-7;
    pat.lambda_sparse = 1e7;
    const auto post = sparse_posterior(G, Rdd, d_hat, pat);
    const double bound =
        (G.transpose() * Rdd * d_hat).lpNorm<Eigen::Infinity>() / pat.lambda_sparse;
    for (int j : {0, 2, 4}) CHECK(std::abs(post.mean[j]) <= bound * (1.0 + 1e-9));
}

TEST_CASE("joint posterior with one identity block equals the plain posterior") {
    const Index K = 30, p = 3;
    EquationBlock blk;
    blk.G = random_matrix(K, p, 71);
    blk.Rdd = random_spd(K, 72);
    blk.d_hat = random_matrix(K, 1, 73);
    blk.index_map = {0, 1, 2};
    const Vec lambda = Vec::Constant(p, 0.05);
    const auto joint = joint_posterior(std::span(&blk, 1), lambda);
    const auto plain = posterior(blk.G, blk.Rdd, blk.d_hat, lambda);
    CHECK((joint.mean - plain.mean).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((joint.covariance - plain.covariance).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("duplicated blocks keep the mean and halve the covariance") {
    const Index K = 30, p = 3;
    EquationBlock blk;
    blk.G = random_matrix(K, p, 81);
    blk.Rdd = random_spd(K, 82);
    blk.d_hat = random_matrix(K, 1, 83);
    blk.index_map = {0, 1, 2};
    std::vector<EquationBlock> twice{blk, blk};
    const auto one = joint_posterior(std::span(&blk, 1), Vec::Zero(p));
    const auto two = joint_posterior(twice, Vec::Zero(p));
    CHECK((two.mean - one.mean).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((2.0 * two.covariance - one.covariance).lpNorm<Eigen::Infinity>() <
          1e-9 * one.covariance.lpNorm<Eigen::Infinity>());
}

TEST_CASE("index maps are validated") {
    EquationBlock blk;
    blk.G = random_matrix(10, 2, 91);
    blk.Rdd = random_spd(10, 92);
    blk.d_hat = random_matrix(10, 1, 93);
    blk.index_map = {0, 5};
    try {
        joint_posterior(std::span(&blk, 1), Vec::Zero(3));
        FAIL("expected index_map_mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == errc::index_map_mismatch);
    }
}

TEST_CASE("eps metrics") {
    GaussianPosterior exact;
    exact.mean = Vec(2);
    exact.mean << 3.0, 4.0;
    exact.covariance = Mat::Zero(2, 2);
    Vec truth(2);
    truth << 3.0, 4.0;
    auto [e1a, e2a] = metrics_eps(std::span(&exact, 1), std::span(&truth, 1));
    CHECK(e1a == doctest::Approx(0.0));
    CHECK(e2a == doctest::Approx(0.0));

    GaussianPosterior off = exact;
    off.mean << 3.3, 4.4;
    auto [e1b, e2b] = metrics_eps(std::span(&off, 1), std::span(&truth, 1));
    CHECK(e1b == doctest::Approx(10.0));
    CHECK(e2b == doctest::Approx(0.0));

    Vec zero = Vec::Zero(2);
    CHECK_THROWS_AS(metrics_eps(std::span(&exact, 1), std::span(&zero, 1)), Error);
}

TEST_CASE("posterior JSON round trip") {
    GaussianPosterior p;
    p.mean = Vec(2);
    p.mean << 1.25, -0.5;
    p.covariance = Mat(2, 2);
    p.covariance << 2.0, 0.25, 0.25, 1.0;
    p.term_names = {"x1", "x1x2"};
    const auto q = posterior_from_json(posterior_to_json(p));
    CHECK(q.term_names == p.term_names);
    CHECK((q.mean - p.mean).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((q.covariance - p.covariance).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_SUITE_END();
