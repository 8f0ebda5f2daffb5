#include "gpdyn/dynamics.hpp"
#include "gpdyn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gpdyn {

SystemSpec lotka_volterra_system() {
    SystemSpec s;
    s.name = "lotka-volterra";
    s.state_dim = 2;
    s.theta_dim = 4;
    s.rhs = [](const Vec& x, const Vec& th) {
        Vec dx(2);
        dx[0] = th[0] * x[0] + th[1] * x[0] * x[1];
        dx[1] = th[2] * x[0] * x[1] + th[3] * x[1];
        return dx;
    };
    Vec truth(4);
    truth << 1.5, -1.0, 1.0, -3.0;
    s.truth = truth;
    return s;
}

SystemSpec logistic_system() {
    SystemSpec s;
    s.name = "logistic";
    s.state_dim = 1;
    s.theta_dim = 0;
    s.rhs = [](const Vec& x, const Vec&) {
        Vec dx(1);
        dx[0] = x[0] * (1.0 - x[0]);
        return dx;
    };
    return s;
}

double logistic_solution(double t, double gamma) {
    return gamma / (gamma + (1.0 - gamma) * std::exp(-t));
}

namespace {

// Shared factor of both angle rates; the sqrt arguments guard the orbit domain.
inline double bh_common(double e, double p, double cos_chi) {
    const double disc = (p - 2.0) * (p - 2.0) - 4.0 * e * e;
    if (!(disc > 0.0) || !(p > 0.0))
        fail(errc::domain_violation, "blackhole rhs: (p-2)^2 - 4e^2 must be positive");
    return (p - 2.0 - 2.0 * e * cos_chi) * (1.0 + e * cos_chi) * (1.0 + e * cos_chi) /
           std::sqrt(disc);
}

}  // namespace

SystemSpec blackhole_system() {
    SystemSpec s;
    s.name = "blackhole";
    s.state_dim = 2;
    s.theta_dim = 2;
    s.rhs = [](const Vec& x, const Vec& th) {
        const double e = th[0], p = th[1];
        const double c = std::cos(x[1]);
        const double radial = p - 6.0 - 2.0 * e * c;
        if (radial < 0.0)
            fail(errc::domain_violation, "blackhole rhs: p - 6 - 2e cos(chi) went negative");
        const double common = bh_common(e, p, c);
        Vec dx(2);
        dx[0] = common / (p * std::sqrt(p));
        dx[1] = common * std::sqrt(radial) / (p * p);
        return dx;
    };
    Vec truth(2);
    truth << 0.5, 100.0;
    s.truth = truth;
    return s;
}

SystemSpec dictionary_system(std::string name, std::vector<Dictionary> dicts) {
    SystemSpec s;
    s.name = std::move(name);
    s.state_dim = static_cast<int>(dicts.size());
    int total = 0;
    for (const auto& d : dicts) {
        if (d.arity != static_cast<int>(dicts.size()))
            fail(errc::shape_mismatch, "dictionary arity must equal the state dimension");
        total += d.size();
    }
    s.theta_dim = total;
    s.rhs = [dicts = std::move(dicts)](const Vec& x, const Vec& th) {
        Vec dx(static_cast<Index>(dicts.size()));
        Index off = 0;
        for (size_t i = 0; i < dicts.size(); ++i) {
            double v = 0;
            for (const auto& term : dicts[i].terms) v += th[off++] * term.fn(x);
            dx[static_cast<Index>(i)] = v;
        }
        return dx;
    };
    return s;
}

Mat blackhole_observables(const Vec& phi, const Vec& chi, double e, double p) {
    if (!(e >= 0.0 && e < 1.0)) fail(errc::domain_violation, "eccentricity must be in [0,1)");
    if (!(p > 6.0 + 2.0 * e)) fail(errc::domain_violation, "semilatus rectum must exceed 6+2e");
    if (phi.size() != chi.size()) fail(errc::shape_mismatch, "phi/chi length mismatch");
    Mat out(phi.size(), 2);
    for (Index k = 0; k < phi.size(); ++k) {
        const double r = p / (1.0 + e * std::cos(chi[k]));
        out(k, 0) = -r * std::cos(phi[k]);
        out(k, 1) = -r * std::sin(phi[k]);
    }
    return out;
}

namespace {

// Numerical state Jacobian of the rhs, central differences.
Mat rhs_jacobian(const SystemSpec& spec, const Vec& x, const Vec& theta) {
    const int n = spec.state_dim;
    Mat J(n, n);
    for (int j = 0; j < n; ++j) {
        const double h = 1e-7 * std::max(1.0, std::abs(x[j]));
        Vec xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        J.col(j) = (spec.rhs(xp, theta) - spec.rhs(xm, theta)) / (2.0 * h);
    }
    return J;
}

// One implicit Euler step of size h from x, solved by damped Newton.
Vec implicit_euler_step(const SystemSpec& spec, const Vec& theta, const Vec& x, double t_next,
                        double h, const IntegrateOptions& opts) {
    Vec y = x + h * spec.rhs(x, theta);  // explicit predictor
    const Mat I = Mat::Identity(spec.state_dim, spec.state_dim);
    double rnorm = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts.max_newton; ++it) {
        const Vec r = y - x - h * spec.rhs(y, theta);
        rnorm = r.lpNorm<Eigen::Infinity>();
        if (rnorm < opts.newton_tol) return y;
        const Mat J = I - h * rhs_jacobian(spec, y, theta);
        Vec step = J.partialPivLu().solve(r);
        double damp = 1.0;
        Vec yn = y - step;
        for (int d = 0; d < 12; ++d) {
            const Vec rn = yn - x - h * spec.rhs(yn, theta);
            if (rn.allFinite() && rn.lpNorm<Eigen::Infinity>() < rnorm) break;
            damp *= 0.5;
            yn = y - damp * step;
        }
        y = yn;
    }
    fail(errc::newton_divergence,
         "implicit Euler Newton iteration stalled at t = " + std::to_string(t_next) +
             " (residual " + std::to_string(rnorm) + ")");
}

Mat integrate_implicit_euler(const SystemSpec& spec, const Vec& theta, const Vec& x0,
                             const Vec& out_times, const IntegrateOptions& opts) {
    Mat out(out_times.size(), spec.state_dim);
    out.row(0) = x0;
    Vec x = x0;
    for (Index k = 1; k < out_times.size(); ++k) {
        const double gap = out_times[k] - out_times[k - 1];
        const int nsub = std::max(1, static_cast<int>(std::ceil(gap / opts.dt - 1e-12)));
        const double h = gap / nsub;
        double t = out_times[k - 1];
        for (int s = 0; s < nsub; ++s) {
            t += h;
            x = implicit_euler_step(spec, theta, x, t, h, opts);
        }
        out.row(k) = x;
    }
    return out;
}

// Dormand-Prince 5(4) pair.
struct Dopri5 {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

Mat integrate_adaptive_rk(const SystemSpec& spec, const Vec& theta, const Vec& x0,
                          const Vec& out_times, const IntegrateOptions& opts) {
    using D = Dopri5;
    Mat out(out_times.size(), spec.state_dim);
    out.row(0) = x0;
    Vec x = x0;
    double t = out_times[0];
    Vec k1 = spec.rhs(x, theta);
    double h = std::min(1e-2 * std::max(std::abs(out_times[out_times.size() - 1] - t), 1e-12),
                        std::max(1e-6, out_times[1] - out_times[0]));
    for (Index k = 1; k < out_times.size(); ++k) {
        const double t_target = out_times[k];
        while (t < t_target) {
            h = std::min(h, t_target - t);
            if (h < 1e-14 * std::max(1.0, std::abs(t)))
                fail(errc::step_size_underflow,
                     "adaptive step collapsed at t = " + std::to_string(t));
            const Vec k2 = spec.rhs(x + h * (D::a21 * k1), theta);
            const Vec k3 = spec.rhs(x + h * (D::a31 * k1 + D::a32 * k2), theta);
            const Vec k4 = spec.rhs(x + h * (D::a41 * k1 + D::a42 * k2 + D::a43 * k3), theta);
            const Vec k5 =
                spec.rhs(x + h * (D::a51 * k1 + D::a52 * k2 + D::a53 * k3 + D::a54 * k4), theta);
            const Vec k6 = spec.rhs(
                x + h * (D::a61 * k1 + D::a62 * k2 + D::a63 * k3 + D::a64 * k4 + D::a65 * k5),
                theta);
            const Vec x5 =
                x + h * (D::b1 * k1 + D::b3 * k3 + D::b4 * k4 + D::b5 * k5 + D::b6 * k6);
            const Vec k7 = spec.rhs(x5, theta);
            const Vec err_vec = h * (D::e1 * k1 + D::e3 * k3 + D::e4 * k4 + D::e5 * k5 +
                                     D::e6 * k6 + D::e7 * k7);
            double err = 0;
            for (Index i = 0; i < x.size(); ++i) {
                const double sc =
                    opts.atol + opts.rtol * std::max(std::abs(x[i]), std::abs(x5[i]));
                err = std::max(err, std::abs(err_vec[i]) / sc);
            }
            if (err <= 1.0 || h <= 1e-13 * std::max(1.0, std::abs(t))) {
                t += h;
                x = x5;
                k1 = k7;  // FSAL
            }
            const double factor =
                std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 0.2, 5.0);
            h *= factor;
        }
        out.row(k) = x;
    }
    return out;
}

}  // namespace

Mat integrate(const SystemSpec& spec, const Vec& theta, const Vec& x0, const Vec& out_times,
              const IntegrateOptions& opts) {
    if (out_times.size() < 1) fail(errc::shape_mismatch, "integrate: empty output grid");
    for (Index k = 1; k < out_times.size(); ++k)
        if (!(out_times[k] > out_times[k - 1]))
            fail(errc::non_increasing_times, "integrate: output times must increase");
    if (x0.size() != spec.state_dim) fail(errc::shape_mismatch, "integrate: x0 dimension");
    Mat traj = opts.method == IntegrateOptions::Method::implicit_euler
                   ? integrate_implicit_euler(spec, theta, x0, out_times, opts)
                   : integrate_adaptive_rk(spec, theta, x0, out_times, opts);
    if (!all_finite(traj)) fail(errc::domain_violation, "integrate: non-finite trajectory");
    return traj;
}

ThetaSampler gaussian_sampler(const GaussianPosterior& posterior) {
    const Vec mean = posterior.mean;
    Mat cov = posterior.covariance;
    cov = 0.5 * (cov + cov.transpose()).eval();
    // Allow semi-definite covariances (degenerate posteriors) via LDLT.
    Eigen::SelfAdjointEigenSolver<Mat> es(cov);
    Mat root = es.eigenvectors() *
               es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    return [mean, root](std::mt19937_64& rng) {
        std::normal_distribution<double> n01(0.0, 1.0);
        Vec z(mean.size());
        for (Index i = 0; i < z.size(); ++i) z[i] = n01(rng);
        return Vec(mean + root * z);
    };
}

ThetaSampler fixed_sampler(const Vec& theta) {
    return [theta](std::mt19937_64&) { return theta; };
}

EnsemblePrediction ensemble_predict(const SystemSpec& spec, const ThetaSampler& sampler,
                                    const Vec& x0, const Vec& out_times, int draws,
                                    std::uint64_t seed, const IntegrateOptions& opts) {
    if (draws < 2) fail(errc::shape_mismatch, "ensemble_predict needs draws >= 2");
    // Draws are generated sequentially so the ensemble is seed-reproducible;
    // the integrations then run in parallel into per-draw slots.
    std::mt19937_64 rng(seed);
    std::vector<Vec> thetas;
    thetas.reserve(static_cast<size_t>(draws));
    for (int d = 0; d < draws; ++d) thetas.push_back(sampler(rng));

    const Index T = out_times.size();
    std::vector<Mat> trajs(static_cast<size_t>(draws));
    std::vector<char> ok(static_cast<size_t>(draws), 0);
#pragma omp parallel for schedule(dynamic)
    for (int d = 0; d < draws; ++d) {
        try {
            trajs[static_cast<size_t>(d)] = integrate(spec, thetas[static_cast<size_t>(d)], x0,
                                                      out_times, opts);
            ok[static_cast<size_t>(d)] = 1;
        } catch (const Error&) {
            ok[static_cast<size_t>(d)] = 0;
        }
    }

    EnsemblePrediction out;
    out.times = out_times;
    out.mean = Mat::Zero(T, spec.state_dim);
    out.sd = Mat::Zero(T, spec.state_dim);
    Mat m2 = Mat::Zero(T, spec.state_dim);
    int used = 0;
    for (int d = 0; d < draws; ++d) {  // fixed reduction order
        if (!ok[static_cast<size_t>(d)]) continue;
        ++used;
        const Mat& tr = trajs[static_cast<size_t>(d)];
        const Mat delta = tr - out.mean;
        out.mean += delta / used;
        m2.array() += delta.array() * (tr - out.mean).array();
    }
    out.draws_used = used;
    out.divergent_draws = draws - used;
    if (used == 0) fail(errc::all_draws_diverged, "every ensemble draw diverged");
    if (used > 1) out.sd = (m2 / (used - 1)).cwiseSqrt();
    return out;
}

}  // namespace gpdyn
