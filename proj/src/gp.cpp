#include "gpdyn/gp.hpp"
#include "gpdyn/errors.hpp"
#include "gpdyn/linalg.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace gpdyn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kCondTarget = 1e8;

using Vec3 = Eigen::Vector3d;

// Workspace for the marginal likelihood in log-parameters (log s2, log ell, log chi_u).
struct MarginalWorkspace {
    Vec times;
    Vec u;
    Mat D2;  // pairwise squared time differences
    Vec3 lo, hi;

    MarginalWorkspace(const Vec& t, const Vec& y, const Vec3& lo_, const Vec3& hi_)
        : times(t), u(y), lo(lo_), hi(hi_) {
        const Index K = t.size();
        D2.resize(K, K);
#pragma omp parallel for schedule(static)
        for (Index i = 0; i < K; ++i)
            for (Index j = 0; j < K; ++j) {
                const double d = t[i] - t[j];
                D2(i, j) = d * d;
            }
    }

    Vec3 clamp(const Vec3& x) const { return x.cwiseMax(lo).cwiseMin(hi); }
};

struct MarginalEval {
    double neg = kInf;  // negative log marginal (minimized)
    Vec3 grad = Vec3::Zero();
};

// Negative log marginal and, optionally, its gradient in log-parameters.
MarginalEval eval_neg_logml(const MarginalWorkspace& ws, const Vec3& logp, bool want_grad) {
    MarginalEval out;
    const Vec3 p = ws.clamp(logp);
    const double s2 = std::exp(p[0]), ell = std::exp(p[1]), chi = std::exp(p[2]);
    const Index K = ws.times.size();

    Mat E = (-0.5 * ws.D2.array() / (ell * ell)).exp();
    Mat Kuu = s2 * E;
    Kuu.diagonal().array() += chi;

    JitteredLLT f;
    try {
        f = jittered_llt(Kuu);
    } catch (const Error&) {
        return out;
    }
    const Vec alpha = f.llt.solve(ws.u);
    const double val = -0.5 * ws.u.dot(alpha) - half_logdet(f.llt) -
                       0.5 * static_cast<double>(K) * std::log(2.0 * M_PI);
    if (!std::isfinite(val)) return out;
    out.neg = -val;

    if (want_grad) {
        const Mat Kinv = f.llt.solve(Mat::Identity(K, K));
        // W = alpha alpha^T - Kinv; d(logml)/dtheta = 1/2 sum(W .* dK/dtheta)
        const Mat W = alpha * alpha.transpose() - Kinv;
        const double g_s2 = 0.5 * (W.array() * (s2 * E.array())).sum();
        const double g_ell = 0.5 * (W.array() * (s2 * E.array() * ws.D2.array() / (ell * ell))).sum();
        const double g_chi = 0.5 * W.trace() * chi;
        out.grad = -Vec3(g_s2, g_ell, g_chi);  // gradient of the negative
        // At an active bound, only descent directions into the box count.
        for (int i = 0; i < 3; ++i) {
            if (logp[i] <= ws.lo[i] && out.grad[i] > 0) out.grad[i] = 0;
            if (logp[i] >= ws.hi[i] && out.grad[i] < 0) out.grad[i] = 0;
        }
    }
    return out;
}

// Box-projected BFGS with backtracking; small and sufficient for 3 parameters.
struct BfgsResult {
    Vec3 x;
    double neg = kInf;
};

BfgsResult bfgs_minimize(const MarginalWorkspace& ws, const Vec3& x0, int max_iter,
                         double grad_tol) {
    BfgsResult res;
    Vec3 x = ws.clamp(x0);
    MarginalEval cur = eval_neg_logml(ws, x, true);
    if (!std::isfinite(cur.neg)) {
        res.x = x;
        return res;
    }
    Eigen::Matrix3d H = Eigen::Matrix3d::Identity();
    for (int it = 0; it < max_iter; ++it) {
        if (cur.grad.lpNorm<Eigen::Infinity>() <= grad_tol * std::max(1.0, std::abs(cur.neg)))
            break;
        Vec3 dir = -H * cur.grad;
        if (dir.dot(cur.grad) >= 0) {
            H.setIdentity();
            dir = -cur.grad;
        }
        double step = 1.0;
        const double slope = dir.dot(cur.grad);
        Vec3 xn = x;
        MarginalEval next;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
            xn = ws.clamp(x + step * dir);
            next = eval_neg_logml(ws, xn, false);
            if (std::isfinite(next.neg) && next.neg <= cur.neg + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted || (xn - x).norm() == 0.0) break;
        next = eval_neg_logml(ws, xn, true);
        const Vec3 s = xn - x;
        const Vec3 y = next.grad - cur.grad;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const Vec3 Hy = H * y;
            const double yHy = y.dot(Hy);
            H += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
                 (Hy * s.transpose() + s * Hy.transpose()) / sy;
        } else {
            H.setIdentity();
        }
        x = xn;
        cur = next;
    }
    res.x = x;
    res.neg = cur.neg;
    return res;
}

std::vector<int> full_subset(Index K) {
    std::vector<int> idx(static_cast<size_t>(K));
    for (Index i = 0; i < K; ++i) idx[static_cast<size_t>(i)] = static_cast<int>(i);
    return idx;
}

// Schur complement precision with chi_d escalation. Expects Kdd assembled with
// chi_d = 0 and Kdu restricted to the derivative grid rows.
std::pair<Mat, double> schur_precision(const Mat& Kdd0, const Mat& KuuInvKud, const Mat& Kdu,
                                       double chi_u, double chi_d_init) {
    Mat S0 = Kdd0 - Kdu * KuuInvKud;
    S0 = 0.5 * (S0 + S0.transpose()).eval();
    const Index m = S0.rows();
    const double cap = 1e6 * chi_u;
    double chi_d = chi_d_init;
    Eigen::LLT<Mat> llt;
    while (true) {
        Mat S = S0;
        S.diagonal().array() += chi_d;
        llt.compute(S);
        if (llt.info() == Eigen::Success && diag_condition(llt) <= kCondTarget) break;
        chi_d *= 10.0;
        if (chi_d > cap)
            fail(errc::conditioning_failed,
                 "chi_d exceeded 1e6*chi_u without meeting the condition bound");
    }
    Mat Rdd = llt.solve(Mat::Identity(m, m));
    Rdd = 0.5 * (Rdd + Rdd.transpose()).eval();
    return {std::move(Rdd), chi_d};
}

}  // namespace

double log_marginal_likelihood(const Vec& times, const Vec& u, const SEKernel& kernel,
                               double chi_u) {
    const Vec3 wide_lo = Vec3::Constant(-745.0), wide_hi = Vec3::Constant(709.0);
    MarginalWorkspace ws(times, u, wide_lo, wide_hi);
    const Vec3 p(std::log(kernel.variance), std::log(kernel.lengthscale),
                 std::log(std::max(chi_u, 1e-300)));
    const MarginalEval e = eval_neg_logml(ws, p, false);
    return std::isfinite(e.neg) ? -e.neg : -kInf;
}

HyperFit fit_hyperparameters(const Vec& times, const Vec& u, const FitOptions& opts) {
    check_strictly_increasing(times);
    const Index K = times.size();
    if (K < 3) fail(errc::shape_mismatch, "fit_hyperparameters needs K >= 3");
    if (u.size() != K) fail(errc::shape_mismatch, "times/u size mismatch");
    if (!all_finite(u)) fail(errc::non_finite_term, "u contains non-finite values");

    const Vec uc = u.array() - u.mean();  // the GP prior is zero-mean
    const double var = std::max(uc.array().square().mean(), 1e-12);
    const double span = times[K - 1] - times[0];
    // Restart draws come from the narrow box; the optimizer may roam a wider
    // one, with the chi_u floor keeping noise-free fits off the jitter scale.
    const Vec3 draw_lo(std::log(0.1 * var), std::log(0.05 * span), std::log(1e-6 * var));
    const Vec3 draw_hi(std::log(10.0 * var), std::log(2.0 * span), std::log(0.1 * var));
    const Vec3 lo(std::log(1e-4 * var), std::log(5e-3 * span), std::log(1e-9 * var));
    const Vec3 hi(std::log(1e3 * var), std::log(10.0 * span), std::log(var));

    MarginalWorkspace full(times, uc, lo, hi);
    std::optional<MarginalWorkspace> coarse;
    if (K > opts.coarse_cap) {
        const Index stride = (K + opts.coarse_cap - 1) / opts.coarse_cap;
        const Index m = (K + stride - 1) / stride;
        Vec ts(m), us(m);
        for (Index i = 0; i < m; ++i) {
            ts[i] = times[i * stride];
            us[i] = uc[i * stride];
        }
        coarse.emplace(ts, us, lo, hi);
    }
    const MarginalWorkspace& search = coarse ? *coarse : full;

    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    struct Candidate {
        Vec3 x;
        double neg;
    };
    std::vector<Candidate> inits, searched;
    for (int r = 0; r < opts.restarts; ++r) {
        Vec3 x0;
        for (int i = 0; i < 3; ++i) x0[i] = draw_lo[i] + unit(rng) * (draw_hi[i] - draw_lo[i]);
        inits.push_back({x0, eval_neg_logml(full, x0, false).neg});
        BfgsResult br = bfgs_minimize(search, x0, opts.max_iter, opts.grad_tol);
        const double neg_full = coarse ? eval_neg_logml(full, br.x, false).neg : br.neg;
        searched.push_back({br.x, neg_full});
    }

    std::vector<Candidate> finals = inits;
    if (coarse) {
        // Polish the two best coarse endpoints on the full grid.
        std::sort(searched.begin(), searched.end(),
                  [](const Candidate& a, const Candidate& b) { return a.neg < b.neg; });
        const int n_polish = std::min<int>(2, static_cast<int>(searched.size()));
        for (int i = 0; i < n_polish; ++i) {
            BfgsResult br = bfgs_minimize(full, searched[i].x, opts.max_iter, opts.grad_tol);
            finals.push_back({br.x, br.neg});
        }
        finals.insert(finals.end(), searched.begin(), searched.end());
    } else {
        finals.insert(finals.end(), searched.begin(), searched.end());
    }

    const auto best = std::min_element(finals.begin(), finals.end(),
                                       [](const Candidate& a, const Candidate& b) {
                                           return a.neg < b.neg;
                                       });
    if (best == finals.end() || !std::isfinite(best->neg))
        fail(errc::optimization_failed, "no restart reached a finite marginal likelihood");

    const Vec3 p = full.clamp(best->x);
    HyperFit fit;
    fit.kernel = SEKernel(std::exp(p[0]), std::exp(p[1]));
    fit.chi_u = std::exp(p[2]);
    fit.log_marginal = -best->neg;
    return fit;
}

GPStateModel make_state_model(const SEKernel& kernel, double chi_u, const Vec& times,
                              const Vec& u, double chi_d_init, std::vector<int> deriv_subset) {
    check_strictly_increasing(times);
    if (u.size() != times.size()) fail(errc::shape_mismatch, "times/u size mismatch");
    const Index K = times.size();
    if (deriv_subset.empty()) deriv_subset = full_subset(K);
    for (int i : deriv_subset)
        if (i < 0 || i >= K) fail(errc::index_map_mismatch, "derivative subset out of range");

    GPStateModel m;
    m.kernel = kernel;
    m.chi_u = chi_u;
    m.times = times;
    m.u = u;
    m.u_mean = u.mean();
    m.deriv_idx = std::move(deriv_subset);

    GramBlocks blocks = assemble(kernel, times, chi_u, 0.0);
    JitteredLLT f = jittered_llt(blocks.Kuu);
    m.jitter = f.jitter;
    const Vec centered = u.array() - m.u_mean;
    m.alpha = f.llt.solve(centered);
    m.u_hat = (blocks.Kuu * m.alpha - chi_u * m.alpha).array() + m.u_mean;

    const Index md = static_cast<Index>(m.deriv_idx.size());
    Mat Kdu(md, K), Kdd0(md, md);
    for (Index a = 0; a < md; ++a) {
        const int ia = m.deriv_idx[static_cast<size_t>(a)];
        Kdu.row(a) = blocks.Kdu.row(ia);
        for (Index b = 0; b < md; ++b) Kdd0(a, b) = blocks.Kdd(ia, m.deriv_idx[static_cast<size_t>(b)]);
    }
    m.d_hat = Kdu * m.alpha;

    const Mat KuuInvKud = f.llt.solve(Kdu.transpose());
    const double init = chi_d_init > 0 ? chi_d_init : std::max(chi_u, 1e-300);
    auto [Rdd, chi_d] = schur_precision(Kdd0, KuuInvKud, Kdu, chi_u, init);
    m.Rdd = std::move(Rdd);
    m.chi_d = chi_d;
    return m;
}

GPStateModel fit_state_model(const Vec& times, const Vec& u, const FitOptions& opts,
                             double chi_d_init, std::vector<int> deriv_subset) {
    const HyperFit fit = fit_hyperparameters(times, u, opts);
    return make_state_model(fit.kernel, fit.chi_u, times, u, chi_d_init,
                            std::move(deriv_subset));
}

Vec smooth_states(const GPStateModel& model) { return model.u_hat; }

Vec estimate_derivatives(const GPStateModel& model) { return model.d_hat; }

std::pair<Mat, double> derivative_precision(const GPStateModel& model, double chi_d_init) {
    if (!(chi_d_init > 0)) fail(errc::domain_violation, "chi_d_init must be positive");
    GramBlocks blocks = assemble(model.kernel, model.times, model.chi_u, 0.0);
    JitteredLLT f = jittered_llt(blocks.Kuu);
    const Index K = model.times.size();
    const auto& idx = model.deriv_idx;
    const Index md = idx.empty() ? K : static_cast<Index>(idx.size());
    Mat Kdu(md, K), Kdd0(md, md);
    for (Index a = 0; a < md; ++a) {
        const int ia = idx.empty() ? static_cast<int>(a) : idx[static_cast<size_t>(a)];
        Kdu.row(a) = blocks.Kdu.row(ia);
        for (Index b = 0; b < md; ++b) {
            const int ib = idx.empty() ? static_cast<int>(b) : idx[static_cast<size_t>(b)];
            Kdd0(a, b) = blocks.Kdd(ia, ib);
        }
    }
    return schur_precision(Kdd0, f.llt.solve(Kdu.transpose()), Kdu, model.chi_u, chi_d_init);
}

nlohmann::json state_model_to_json(const GPStateModel& model) {
    nlohmann::json j;
    j["kernel"] = {{"variance", model.kernel.variance},
                   {"lengthscale", model.kernel.lengthscale}};
    j["chi_u"] = model.chi_u;
    j["chi_d"] = model.chi_d;
    j["times"] = std::vector<double>(model.times.begin(), model.times.end());
    j["u"] = std::vector<double>(model.u.begin(), model.u.end());
    j["deriv_idx"] = model.deriv_idx;
    return j;
}

GPStateModel state_model_from_json(const nlohmann::json& j) {
    const auto& jk = j.at("kernel");
    SEKernel kernel(jk.at("variance").get<double>(), jk.at("lengthscale").get<double>());
    const auto tv = j.at("times").get<std::vector<double>>();
    const auto uv = j.at("u").get<std::vector<double>>();
    Vec times = Eigen::Map<const Vec>(tv.data(), static_cast<Index>(tv.size()));
    Vec u = Eigen::Map<const Vec>(uv.data(), static_cast<Index>(uv.size()));
    return make_state_model(kernel, j.at("chi_u").get<double>(), times, u,
                            j.at("chi_d").get<double>(),
                            j.value("deriv_idx", std::vector<int>{}));
}

}  // namespace gpdyn
