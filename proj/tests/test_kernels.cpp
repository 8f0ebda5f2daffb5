#include "gpdyn/kernels.hpp"
#include "gpdyn/errors.hpp"
#include "gpdyn/linalg.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace gpdyn;

TEST_SUITE_BEGIN("kernels");

TEST_CASE("eval matches the closed form") {
    CHECK(SEKernel(1.0, 1.0).eval(0.0, 0.0) == doctest::Approx(1.0));
    CHECK(SEKernel(2.0, 1.0).eval(0.0, 1.0) == doctest::Approx(2.0 * std::exp(-0.5)));
    CHECK(SEKernel(1.0, 0.5).eval(1.0, 1.0) == doctest::Approx(1.0));
    // symmetry
    const SEKernel k(0.7, 0.3);
    CHECK(k.eval(0.2, 1.7) == doctest::Approx(k.eval(1.7, 0.2)));
}

TEST_CASE("constructor rejects non-positive hyperparameters") {
    CHECK_THROWS_AS(SEKernel(0.0, 1.0), Error);
    CHECK_THROWS_AS(SEKernel(1.0, -2.0), Error);
}

TEST_CASE("derivative values") {
    CHECK(SEKernel(1.0, 1.0).eval_dt(0.0, 0.0) == doctest::Approx(0.0));
    CHECK(SEKernel(1.0, 2.0).eval_dt_dt2(3.0, 3.0) == doctest::Approx(0.25));
    CHECK(SEKernel(1.0, 1.0).eval_dt(1.0, 0.0) == doctest::Approx(-std::exp(-0.5)));
}

TEST_CASE("analytic derivatives match finite differences") {
    const SEKernel k(1.7, 0.6);
    const double h = 1e-5;
    const double pts[] = {-1.2, 0.0, 0.4, 2.3};
    for (double t : pts)
        for (double s : pts) {
            const double fd_t =
                testutil::fd_derivative([&](double x) { return k.eval(x, s); }, t, h);
            const double fd_s =
                testutil::fd_derivative([&](double x) { return k.eval(t, x); }, s, h);
            CHECK(k.eval_dt(t, s) == doctest::Approx(fd_t).epsilon(1e-6));
            CHECK(k.eval_dt2(t, s) == doctest::Approx(fd_s).epsilon(1e-6));
            // mixed derivative via nested differencing
            const double fd_mixed = testutil::fd_derivative(
                [&](double x) {
                    return testutil::fd_derivative([&](double y) { return k.eval(y, x); }, t, h);
                },
                s, h);
            CHECK(k.eval_dt_dt2(t, s) == doctest::Approx(fd_mixed).epsilon(1e-4));
            CHECK(k.eval_dt(t, s) == doctest::Approx(-k.eval_dt2(t, s)));
        }
}

TEST_CASE("dt_dt2 diagonal equals variance/lengthscale^2") {
    for (double s2 : {0.3, 1.0, 4.2})
        for (double ell : {0.2, 1.0, 3.0})
            CHECK(SEKernel(s2, ell).eval_dt_dt2(1.1, 1.1) ==
                  doctest::Approx(s2 / (ell * ell)));
}

TEST_CASE("assemble fills blocks and validates the grid") {
    Vec times(2);
    times << 0.0, 1.0;
    const auto g = assemble(SEKernel(1.0, 1.0), times, 0.1, 0.1);
    CHECK(g.Kuu(0, 0) == doctest::Approx(1.1));
    CHECK(g.Kuu(1, 1) == doctest::Approx(1.1));
    CHECK(g.Kuu(0, 1) == doctest::Approx(std::exp(-0.5)));
    CHECK(g.kud() == g.Kdu.transpose());

    Vec bad(3);
    bad << 0.0, 1.0, 1.0;
    CHECK_THROWS_AS(assemble(SEKernel(1.0, 1.0), bad, 0.1, 0.1), Error);
}

TEST_CASE("assembled blocks are symmetric") {
    const Vec times = testutil::random_sorted_times(24, 0.0, 5.0, 11);
    const auto g = assemble(SEKernel(2.0, 0.7), times, 0.05, 0.02);
    CHECK((g.Kuu - g.Kuu.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((g.Kdd - g.Kdd.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("Kdu matches a finite-difference oracle of eval in the first argument") {
    const Vec times = testutil::random_sorted_times(5, 0.0, 3.0, 77);
    const SEKernel k(1.3, 0.8);
    const auto g = assemble(k, times, 0.0, 0.0);
    for (Index i = 0; i < times.size(); ++i)
        for (Index j = 0; j < times.size(); ++j) {
            const double fd = testutil::fd_derivative(
                [&](double x) { return k.eval(x, times[j]); }, times[i], 1e-5);
            CHECK(std::abs(g.Kdu(i, j) - fd) < 1e-6);
        }
}

TEST_CASE("assemble is deterministic") {
    const Vec times = testutil::random_sorted_times(64, 0.0, 8.0, 5);
    const SEKernel k(1.1, 0.5);
    const auto a = assemble(k, times, 1e-3, 1e-4);
    const auto b = assemble(k, times, 1e-3, 1e-4);
    CHECK(a.Kuu == b.Kuu);
    CHECK(a.Kdu == b.Kdu);
    CHECK(a.Kdd == b.Kdd);
}

TEST_CASE("Kuu admits a Cholesky factorization for chi_u > 0") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const Vec times = testutil::random_sorted_times(40, 0.0, 6.0, seed);
        const auto g = assemble(SEKernel(1.0, 0.4), times, 1e-6, 0.0);
        CHECK_NOTHROW(jittered_llt(g.Kuu));
    }
}

TEST_CASE("Schur complement is SPD after chi_d adjustment") {
    const Vec times = testutil::random_sorted_times(30, 0.0, 4.0, 9);
    const auto g = assemble(SEKernel(1.0, 0.5), times, 1e-4, 1e-4);
    const auto f = jittered_llt(g.Kuu);
    Mat S = g.Kdd - g.Kdu * f.llt.solve(Mat(g.kud()));
    S = 0.5 * (S + S.transpose()).eval();
    Eigen::LLT<Mat> llt(S);
    CHECK(llt.info() == Eigen::Success);
    CHECK((S - S.transpose()).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_SUITE_END();
