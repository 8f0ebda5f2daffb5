#include "gpdyn/gp.hpp"
#include "gpdyn/errors.hpp"
#include "gpdyn/linalg.hpp"
#include "test_util.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>

using namespace gpdyn;

namespace {

// Independent dense evaluation of the marginal likelihood through an LU path,
// including the documented jitter so values are comparable to the library's.
double dense_logml_oracle(const Vec& times, const Vec& u, const SEKernel& k, double chi_u) {
    const Index K = times.size();
    Mat Kuu(K, K);
    for (Index i = 0; i < K; ++i)
        for (Index j = 0; j < K; ++j) Kuu(i, j) = k.eval(times[i], times[j]);
    Kuu.diagonal().array() += chi_u;
    Kuu.diagonal().array() += 1e-10 * Kuu.diagonal().maxCoeff();
    Eigen::PartialPivLU<Mat> lu(Kuu);
    const double logdet = lu.matrixLU().diagonal().array().abs().log().sum();
    return -0.5 * u.dot(lu.solve(u)) - 0.5 * logdet -
           0.5 * static_cast<double>(K) * std::log(2.0 * M_PI);
}

}  // namespace

TEST_SUITE_BEGIN("gp");

TEST_CASE("log marginal likelihood matches a dense oracle") {
    const Vec times = testutil::uniform_times(60, 0.0, 6.0);
    const SEKernel k(1.3, 0.8);
    const Vec u = testutil::gp_sample(k, times, 0.1, 3);
    for (double chi : {1e-2, 0.5}) {
        const double lib = log_marginal_likelihood(times, u, k, chi);
        const double oracle = dense_logml_oracle(times, u, k, chi);
        CHECK(std::abs(lib - oracle) < 1e-8);
    }
}

TEST_CASE("sample-and-refit recovers the lengthscale within a factor of two") {
    const Vec times = testutil::uniform_times(200, 0.0, 10.0);
    const SEKernel truth(1.0, 1.0);
    const Vec u = testutil::gp_sample(truth, times, 0.01, 42);
    const HyperFit fit = fit_hyperparameters(times, u);
    CHECK(fit.kernel.lengthscale > 0.5);
    CHECK(fit.kernel.lengthscale < 2.0);
}

TEST_CASE("zero data drives the signal variance to its lower bound") {
    const Vec times = testutil::uniform_times(40, 0.0, 4.0);
    const Vec u = Vec::Zero(40);
    const HyperFit fit = fit_hyperparameters(times, u);
    // var floor is 1e-12; the optimizer box bottoms out at 1e-4 * var.
    CHECK(fit.kernel.variance <= 1.1e-16);
}

TEST_CASE("fit never returns an objective below the best restart's initial value") {
    for (std::uint64_t seed : {1u, 9u, 23u}) {
        const Vec times = testutil::random_sorted_times(80, 0.0, 8.0, seed);
        const Vec u = testutil::gp_sample(SEKernel(2.0, 0.7), times, 0.05, seed + 1);
        const HyperFit fit = fit_hyperparameters(times, u);
        FitOptions opts;
        std::mt19937_64 rng(opts.seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const Vec uc = u.array() - u.mean();  // the fit centers the data
        const double var = std::max(uc.array().square().mean(), 1e-12);
        const double span = times[times.size() - 1] - times[0];
        for (int r = 0; r < opts.restarts; ++r) {
            const double s2 = std::exp(std::log(0.1 * var) + unit(rng) * std::log(10.0 / 0.1));
            const double ell =
                std::exp(std::log(0.05 * span) + unit(rng) * std::log(2.0 / 0.05));
            const double chi =
                std::exp(std::log(1e-6 * var) + unit(rng) * std::log(0.1 / 1e-6));
            const double init_val = log_marginal_likelihood(times, uc, SEKernel(s2, ell), chi);
            CHECK(fit.log_marginal >= init_val - 1e-9);
        }
    }
}

TEST_CASE("fit rejects bad inputs") {
    Vec t2(2), u2(2);
    t2 << 0.0, 1.0;
    u2 << 0.0, 1.0;
    CHECK_THROWS_AS(fit_hyperparameters(t2, u2), Error);

    const Vec times = testutil::uniform_times(10, 0.0, 1.0);
    Vec bad = Vec::Ones(10);
    bad[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(fit_hyperparameters(times, bad), Error);
}

TEST_CASE("fit reports optimization failure when no restart is finite") {
    const Vec times = testutil::uniform_times(10, 0.0, 1.0);
    Vec u(10);
    for (Index i = 0; i < 10; ++i) u[i] = (i % 2 ? 1.0 : -1.0) * 1e300;
    try {
        fit_hyperparameters(times, u);
        FAIL("expected optimization_failed");
    } catch (const Error& e) {
        CHECK(e.code() == errc::optimization_failed);
    }
}

TEST_CASE("smoothing is the identity in the chi_u -> 0 limit") {
    const Vec times = testutil::uniform_times(50, 0.0, 5.0);
    Vec u(50);
    for (Index i = 0; i < 50; ++i) u[i] = std::sin(times[i]);
    const auto model = make_state_model(SEKernel(1.0, 1.0), 1e-12, times, u);
    CHECK((smooth_states(model) - u).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("smoothing reduces noise on a known signal") {
    const Vec times = testutil::uniform_times(100, 0.0, 6.28);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01(0.0, 1.0);
    Vec clean(100), noisy(100);
    for (Index i = 0; i < 100; ++i) {
        clean[i] = std::sin(times[i]);
        noisy[i] = clean[i] + 0.1 * n01(rng);
    }
    const auto model = fit_state_model(times, noisy);
    const Vec u_hat = smooth_states(model);
    CHECK((u_hat - clean).norm() < (noisy - clean).norm());
}

TEST_CASE("smoothing and derivative estimation are linear in the data") {
    const Vec times = testutil::uniform_times(40, 0.0, 4.0);
    const Vec u1 = testutil::gp_sample(SEKernel(1.0, 0.8), times, 0.0, 1);
    const Vec u2 = testutil::gp_sample(SEKernel(1.0, 0.8), times, 0.0, 2);
    const SEKernel k(1.2, 0.9);
    const auto m1 = make_state_model(k, 1e-4, times, u1);
    const auto m2 = make_state_model(k, 1e-4, times, u2);
    const auto msum = make_state_model(k, 1e-4, times, u1 + u2);
    const auto mscaled = make_state_model(k, 1e-4, times, 3.0 * u1);
    CHECK((smooth_states(msum) - smooth_states(m1) - smooth_states(m2))
              .lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((smooth_states(mscaled) - 3.0 * smooth_states(m1)).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((estimate_derivatives(msum) - estimate_derivatives(m1) - estimate_derivatives(m2))
              .lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("derivative estimate tracks the analytic derivative of sin") {
    const Index K = 200;
    const Vec times = testutil::uniform_times(K, 0.0, 2.0 * M_PI);
    Vec u(K);
    for (Index i = 0; i < K; ++i) u[i] = std::sin(times[i]);
    const HyperFit fit = fit_hyperparameters(times, u);
    const auto model = make_state_model(fit.kernel, 1e-8, times, u);
    const Vec d_hat = estimate_derivatives(model);
    double max_err = 0;
    for (Index i = K / 10; i < K - K / 10; ++i)
        max_err = std::max(max_err, std::abs(d_hat[i] - std::cos(times[i])));
    CHECK(max_err < 1e-2);
}

TEST_CASE("derivative of constant data is zero") {
    const Vec times = testutil::uniform_times(50, 0.0, 5.0);
    const Vec u = Vec::Constant(50, 3.7);
    const auto model = make_state_model(SEKernel(1.0, 1.0), 1e-8, times, u);
    CHECK(estimate_derivatives(model).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("derivative estimate equals the grid derivative of the posterior mean") {
    const Vec times = testutil::random_sorted_times(30, 0.0, 4.0, 17);
    const Vec u = testutil::gp_sample(SEKernel(1.0, 0.6), times, 0.01, 4);
    const SEKernel k(0.9, 0.55);
    const auto model = make_state_model(k, 1e-3, times, u);
    const Vec d_hat = estimate_derivatives(model);
    const auto mean_at = [&](double t) {
        double v = 0;
        for (Index j = 0; j < times.size(); ++j) v += k.eval(t, times[j]) * model.alpha[j];
        return v;
    };
    for (Index i = 0; i < times.size(); ++i) {
        const double fd = testutil::fd_derivative(mean_at, times[i], 1e-5);
        CHECK(std::abs(d_hat[i] - fd) < 1e-4);
    }
}

TEST_CASE("K=2 precision matches the closed-form small-matrix inverse") {
    Vec times(2), u(2);
    times << 0.0, 0.7;
    u << 0.3, -0.1;
    const SEKernel k(1.1, 0.9);
    const double chi_u = 0.05;
    const auto model = make_state_model(k, chi_u, times, u, 0.01);
    const auto [Rdd, chi_d] = derivative_precision(model, 0.01);

    const auto g = assemble(k, times, chi_u, chi_d);
    Mat Kuu_j = g.Kuu;
    Kuu_j.diagonal().array() += 1e-10 * g.Kuu.diagonal().maxCoeff();
    const Mat S = g.Kdd - g.Kdu * Kuu_j.inverse() * g.kud();
    const Mat Rdd_direct = S.inverse();
    CHECK((Rdd - Rdd_direct).lpNorm<Eigen::Infinity>() <
          1e-8 * Rdd_direct.lpNorm<Eigen::Infinity>());
}

TEST_CASE("Rdd is symmetric") {
    const Vec times = testutil::random_sorted_times(40, 0.0, 5.0, 21);
    const Vec u = testutil::gp_sample(SEKernel(1.0, 0.5), times, 0.05, 8);
    const auto model = fit_state_model(times, u);
    CHECK((model.Rdd - model.Rdd.transpose()).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("posterior rearrangement identity Rdd d_hat = -Rdu u") {
    const Vec times = testutil::random_sorted_times(35, 0.0, 5.0, 13);
    const Vec u = testutil::gp_sample(SEKernel(1.4, 0.7), times, 0.02, 9);
    const auto model = fit_state_model(times, u);
    const auto g = assemble(model.kernel, times, model.chi_u, model.chi_d);
    const auto f = jittered_llt(g.Kuu);
    const Mat Rdu =
        -model.Rdd * g.Kdu * f.llt.solve(Mat::Identity(times.size(), times.size()));
    const Vec lhs = model.Rdd * model.d_hat;
    const Vec rhs = -Rdu * Vec(u.array() - model.u_mean);  // the regression sees centered data
    CHECK((lhs - rhs).norm() < 1e-8 * rhs.norm());
}

TEST_CASE("block inverse identity against a dense 2K x 2K inversion") {
    for (Index K : {5, 12, 20}) {
        const Vec times =
            testutil::random_sorted_times(K, 0.0, 3.0, 31 + static_cast<unsigned>(K));
        const SEKernel k(1.0, 0.6);
        const auto g = assemble(k, times, 0.05, 0.02);
        const Index m = g.Kuu.rows();

        Mat joint(2 * m, 2 * m);
        joint.topLeftCorner(m, m) = g.Kdd;
        joint.topRightCorner(m, m) = g.Kdu;
        joint.bottomLeftCorner(m, m) = g.kud();
        joint.bottomRightCorner(m, m) = g.Kuu;
        const Mat joint_inv = joint.inverse();

        const Mat Kuu_inv = g.Kuu.inverse();
        const Mat Rdd = (g.Kdd - g.Kdu * Kuu_inv * g.kud()).inverse();
        const Mat Rdu = -Rdd * g.Kdu * Kuu_inv;
        const Mat Ruu = (g.Kuu - g.kud() * g.Kdd.inverse() * g.Kdu).inverse();

        const double scale = joint_inv.lpNorm<Eigen::Infinity>();
        CHECK((joint_inv.topLeftCorner(m, m) - Rdd).lpNorm<Eigen::Infinity>() < 1e-6 * scale);
        CHECK((joint_inv.topRightCorner(m, m) - Rdu).lpNorm<Eigen::Infinity>() < 1e-6 * scale);
        CHECK((joint_inv.bottomLeftCorner(m, m) - Rdu.transpose()).lpNorm<Eigen::Infinity>() <
              1e-6 * scale);
        CHECK((joint_inv.bottomRightCorner(m, m) - Ruu).lpNorm<Eigen::Infinity>() <
              1e-6 * scale);
    }
}

TEST_CASE("condition estimate is monotone non-increasing in chi_d") {
    const Vec times = testutil::random_sorted_times(30, 0.0, 4.0, 3);
    const auto g = assemble(SEKernel(1.0, 0.5), times, 1e-4, 0.0);
    const auto f = jittered_llt(g.Kuu);
    Mat S0 = g.Kdd - g.Kdu * f.llt.solve(Mat(g.kud()));
    S0 = 0.5 * (S0 + S0.transpose()).eval();
    double prev = std::numeric_limits<double>::infinity();
    for (double chi = 1e-8; chi < 1e2; chi *= 10) {
        Mat S = S0;
        S.diagonal().array() += chi;
        Eigen::LLT<Mat> llt(S);
        if (llt.info() != Eigen::Success) continue;
        const double cond = diag_condition(llt);
        CHECK(cond <= prev * (1.0 + 1e-12));
        prev = cond;
    }
}

TEST_CASE("conditioning failure is reported once chi_d exceeds 1e6 chi_u") {
    const Vec times = testutil::random_sorted_times(25, 0.0, 3.0, 77);
    const Vec u = testutil::gp_sample(SEKernel(1.0, 0.5), times, 0.0, 6);
    // a tiny chi_u caps the escalation far below any workable chi_d
    try {
        make_state_model(SEKernel(1.0, 0.5), 1e-18, times, u, 1e-18);
        FAIL("expected conditioning_failed");
    } catch (const Error& e) {
        CHECK(e.code() == errc::conditioning_failed);
    }
}

TEST_CASE("derivative grid subsets are honored") {
    const Vec times = testutil::uniform_times(30, 0.0, 3.0);
    const Vec u = testutil::gp_sample(SEKernel(1.0, 0.7), times, 0.01, 12);
    const SEKernel k(1.0, 0.7);
    std::vector<int> subset{0, 3, 6, 9, 12, 15, 18, 21, 24, 27};
    const auto sub = make_state_model(k, 1e-3, times, u, -1.0, subset);
    CHECK(sub.d_hat.size() == 10);
    CHECK(sub.Rdd.rows() == 10);
    const auto full = make_state_model(k, 1e-3, times, u);
    for (size_t i = 0; i < subset.size(); ++i)
        CHECK(sub.d_hat[static_cast<Index>(i)] ==
              doctest::Approx(full.d_hat[subset[i]]).epsilon(1e-12));
}

TEST_CASE("state model JSON round-trip rebuilds the caches") {
    const Vec times = testutil::random_sorted_times(25, 0.0, 4.0, 19);
    const Vec u = testutil::gp_sample(SEKernel(1.0, 0.6), times, 0.05, 3);
    const auto model = fit_state_model(times, u);
    const auto j = state_model_to_json(model);
    const auto restored = state_model_from_json(j);
    CHECK(restored.kernel.variance == doctest::Approx(model.kernel.variance));
    CHECK(restored.chi_d == doctest::Approx(model.chi_d));
    CHECK((restored.d_hat - model.d_hat).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((restored.Rdd - model.Rdd).lpNorm<Eigen::Infinity>() <
          1e-10 * model.Rdd.lpNorm<Eigen::Infinity>());
}

TEST_SUITE_END();
