#include "gpdyn/inference_mcmc.hpp"
#include "gpdyn/dataio.hpp"
#include "gpdyn/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace gpdyn {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

ShallowNet::Unpacked ShallowNet::unflatten(const Vec& theta) const {
    if (theta.size() != param_count())
        fail(errc::shape_mismatch, "parameter vector does not match the net shape");
    Unpacked u;
    u.weights_in.resize(hidden, input_dim);
    for (int l = 0; l < hidden; ++l)
        for (int j = 0; j < input_dim; ++j) u.weights_in(l, j) = theta[l * input_dim + j];
    u.biases = theta.segment(hidden * input_dim, hidden);
    u.weights_out = theta.segment(hidden * (input_dim + 1), hidden);
    return u;
}

Vec ShallowNet::flatten(const Unpacked& u) const {
    Vec theta(param_count());
    for (int l = 0; l < hidden; ++l)
        for (int j = 0; j < input_dim; ++j) theta[l * input_dim + j] = u.weights_in(l, j);
    theta.segment(hidden * input_dim, hidden) = u.biases;
    theta.segment(hidden * (input_dim + 1), hidden) = u.weights_out;
    return theta;
}

double ShallowNet::eval(const Vec& x, const Vec& theta) const {
    if (theta.size() != param_count())
        fail(errc::shape_mismatch, "parameter vector does not match the net shape");
    double out = 0;
    for (int l = 0; l < hidden; ++l) {
        double z = theta[hidden * input_dim + l];  // bias
        for (int j = 0; j < input_dim; ++j) z += theta[l * input_dim + j] * x[j];
        out += theta[hidden * (input_dim + 1) + l] * std::tanh(z);
    }
    return out;
}

Vec ShallowNet::eval_rows(const Mat& states, const Vec& theta) const {
    if (states.cols() != input_dim) fail(errc::shape_mismatch, "state dimension mismatch");
    if (theta.size() != param_count())
        fail(errc::shape_mismatch, "parameter vector does not match the net shape");
    const auto u = unflatten(theta);
    // K x L pre-activations, then tanh and the output contraction.
    Mat Z = states * u.weights_in.transpose();
    Z.rowwise() += u.biases.transpose();
    return Z.array().tanh().matrix() * u.weights_out;
}

double nn_log_posterior(const Vec& theta, const ShallowNet& net, const Mat& states,
                        const Mat& Rdd, const Vec& d_hat, double lambda) {
    const Vec r = net.eval_rows(states, theta) - d_hat;
    return -0.5 * (r.dot(Rdd * r) + lambda * theta.squaredNorm());
}

double blocks_log_posterior(const Vec& theta, std::span<const ResidualBlock> blocks,
                            const Vec& lambda_diag) {
    if (lambda_diag.size() != theta.size())
        fail(errc::shape_mismatch, "lambda size does not match theta");
    double quad = theta.dot(lambda_diag.asDiagonal() * theta);
    for (const auto& blk : blocks) {
        Vec f;
        try {
            f = blk.f(blk.states, theta);
        } catch (const Error&) {
            return kNegInf;
        }
        if (!all_finite(f)) return kNegInf;
        const Vec r = f - blk.d_hat;
        quad += r.dot(blk.Rdd * r);
    }
    return -0.5 * quad;
}

SampleChain run_chain(const Vec& init, const std::function<double(const Vec&)>& target,
                      const McmcOptions& opts) {
    if (opts.steps <= opts.burn_in || opts.burn_in < 0)
        fail(errc::domain_violation, "need steps > burn_in >= 0");
    const Index P = init.size();
    double lp = target(init);
    if (!std::isfinite(lp)) fail(errc::non_finite_init, "target(init) is not finite");

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    Vec theta = init;
    double scale = opts.initial_scale;
    Vec diag = Vec::Ones(P);

    // Burn-in statistics for the diagonal preconditioner.
    Vec run_mean = Vec::Zero(P), run_m2 = Vec::Zero(P);
    long run_n = 0;

    const long n_keep = (opts.steps - opts.burn_in + opts.thin - 1) / opts.thin;
    SampleChain chain;
    chain.samples.resize(n_keep, P);
    chain.log_posterior_trace.resize(n_keep);
    chain.seed = opts.seed;

    long accepted_window = 0, window_n = 0;
    long accepted_post = 0, post_n = 0;
    long kept = 0;
    Vec prop(P);
    for (long k = 0; k < opts.steps; ++k) {
        for (Index i = 0; i < P; ++i) prop[i] = theta[i] + scale * diag[i] * n01(rng);
        const double lpp = target(prop);
        const bool take = std::isfinite(lpp) && std::log(u01(rng)) < lpp - lp;
        if (take) {
            theta = prop;
            lp = lpp;
        }
        if (k < opts.burn_in) {
            accepted_window += take;
            ++window_n;
            ++run_n;
            const Vec d = theta - run_mean;
            run_mean += d / static_cast<double>(run_n);
            run_m2.array() += d.array() * (theta - run_mean).array();
            if (opts.adapt && window_n >= 100) {
                const double rate = static_cast<double>(accepted_window) / window_n;
                scale *= std::exp(0.5 * (rate - opts.target_accept));
                accepted_window = 0;
                window_n = 0;
            }
            if (opts.adapt && run_n > 500 && (k + 1) % 1000 == 0) {
                Vec sd = (run_m2 / static_cast<double>(run_n - 1)).cwiseMax(1e-12).cwiseSqrt();
                // normalize so the global scale keeps its meaning
                const double gm = std::exp(sd.array().log().mean());
                diag = sd / gm;
            }
        } else {
            accepted_post += take;
            ++post_n;
            if ((k - opts.burn_in) % opts.thin == 0 && kept < n_keep) {
                chain.samples.row(kept) = theta;
                chain.log_posterior_trace[kept] = lp;
                ++kept;
            }
        }
    }
    chain.samples.conservativeResize(kept, P);
    chain.log_posterior_trace.conservativeResize(kept);
    chain.acceptance_rate = post_n > 0 ? static_cast<double>(accepted_post) / post_n : 0.0;
    chain.proposal_scale = scale;
    chain.scale_diag = diag;
    return chain;
}

Vec maximize_target(const std::function<double(const Vec&)>& target, const Vec& init,
                    int max_iter, double fd_eps) {
    const Index P = init.size();
    const auto neg = [&](const Vec& x) {
        const double v = target(x);
        return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
    };
    const auto grad = [&](const Vec& x, double fx) {
        Vec g(P);
        for (Index i = 0; i < P; ++i) {
            const double h = fd_eps * std::max(1.0, std::abs(x[i]));
            Vec xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double fp = neg(xp), fm = neg(xm);
            if (std::isfinite(fp) && std::isfinite(fm))
                g[i] = (fp - fm) / (2 * h);
            else if (std::isfinite(fp))
                g[i] = (fp - fx) / h;
            else if (std::isfinite(fm))
                g[i] = (fx - fm) / h;
            else
                g[i] = 0;
        }
        return g;
    };

    Vec x = init;
    double fx = neg(x);
    if (!std::isfinite(fx)) fail(errc::non_finite_init, "maximize_target: init not finite");
    Mat H = Mat::Identity(P, P);
    Vec g = grad(x, fx);
    for (int it = 0; it < max_iter; ++it) {
        if (g.lpNorm<Eigen::Infinity>() < 1e-9 * std::max(1.0, std::abs(fx))) break;
        Vec dir = -H * g;
        if (dir.dot(g) >= 0) {
            H.setIdentity();
            dir = -g;
        }
        double step = 1.0;
        const double slope = dir.dot(g);
        Vec xn;
        double fn = std::numeric_limits<double>::infinity();
        bool ok = false;
        for (int ls = 0; ls < 50; ++ls, step *= 0.5) {
            xn = x + step * dir;
            fn = neg(xn);
            if (std::isfinite(fn) && fn <= fx + 1e-4 * step * slope) {
                ok = true;
                break;
            }
        }
        if (!ok) break;
        const Vec gn = grad(xn, fn);
        const Vec s = xn - x, y = gn - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            const Vec Hy = H * y;
            H += ((sy + y.dot(Hy)) / (sy * sy)) * (s * s.transpose()) -
                 (Hy * s.transpose() + s * Hy.transpose()) / sy;
        } else {
            H.setIdentity();
        }
        x = xn;
        fx = fn;
        g = gn;
    }
    return x;
}

namespace {

std::pair<Vec, Vec> band_impl(const SampleChain& chain, const ShallowNet& net,
                              const Mat& query_states, bool parallel) {
    const Index S = chain.samples.rows();
    if (S == 0) fail(errc::shape_mismatch, "posterior_f_band: empty chain");
    const Index M = query_states.rows();
    Vec mean = Vec::Zero(M), m2 = Vec::Zero(M);

#pragma omp parallel for schedule(static) if (parallel)
    for (Index q = 0; q < M; ++q) {
        const Vec x = query_states.row(q);
        double mu = 0, acc2 = 0;
        for (Index s = 0; s < S; ++s) {
            const double v = net.eval(x, chain.samples.row(s));
            const double d = v - mu;
            mu += d / static_cast<double>(s + 1);
            acc2 += d * (v - mu);
        }
        mean[q] = mu;
        m2[q] = acc2;
    }
    Vec sd = S > 1 ? Vec((m2 / static_cast<double>(S - 1)).cwiseSqrt()) : Vec(Vec::Zero(M));
    return {std::move(mean), std::move(sd)};
}

}  // namespace

std::pair<Vec, Vec> posterior_f_band(const SampleChain& chain, const ShallowNet& net,
                                     const Mat& query_states) {
    return band_impl(chain, net, query_states, true);
}

namespace ref {
std::pair<Vec, Vec> posterior_f_band(const SampleChain& chain, const ShallowNet& net,
                                     const Mat& query_states) {
    return band_impl(chain, net, query_states, false);
}
}  // namespace ref

ThetaSampler chain_sampler(const SampleChain& chain) {
    if (chain.samples.rows() == 0) fail(errc::shape_mismatch, "chain_sampler: empty chain");
    const Mat samples = chain.samples;
    return [samples](std::mt19937_64& rng) {
        std::uniform_int_distribution<Index> pick(0, samples.rows() - 1);
        return Vec(samples.row(pick(rng)));
    };
}

void write_chain(const std::filesystem::path& csv_path, const SampleChain& chain,
                 const nlohmann::json& extra_meta) {
    std::ostringstream csv;
    for (Index j = 0; j < chain.samples.cols(); ++j) csv << (j ? "," : "") << "theta" << j;
    csv << ",log_posterior\n";
    char buf[32];
    for (Index s = 0; s < chain.samples.rows(); ++s) {
        for (Index j = 0; j < chain.samples.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", chain.samples(s, j));
            csv << (j ? "," : "") << buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g", chain.log_posterior_trace[s]);
        csv << "," << buf << "\n";
    }
    write_text_atomic(csv_path, csv.str());

    nlohmann::json meta = extra_meta;
    meta["acceptance_rate"] = chain.acceptance_rate;
    meta["proposal_scale"] = chain.proposal_scale;
    meta["scale_diag"] = std::vector<double>(chain.scale_diag.begin(), chain.scale_diag.end());
    meta["seed"] = chain.seed;
    meta["samples"] = chain.samples.rows();
    write_text_atomic(csv_path.string() + ".meta.json", meta.dump(2) + "\n");
}

SampleChain read_chain(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) fail(errc::io, "cannot open " + csv_path.string());
    std::string line;
    if (!std::getline(in, line)) fail(errc::io, "empty chain file");
    const Index ncols = static_cast<Index>(std::count(line.begin(), line.end(), ',')) + 1;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    SampleChain chain;
    chain.samples.resize(static_cast<Index>(rows.size()), ncols - 1);
    chain.log_posterior_trace.resize(static_cast<Index>(rows.size()));
    for (size_t s = 0; s < rows.size(); ++s) {
        for (Index j = 0; j < ncols - 1; ++j)
            chain.samples(static_cast<Index>(s), j) = rows[s][static_cast<size_t>(j)];
        chain.log_posterior_trace[static_cast<Index>(s)] = rows[s].back();
    }
    const auto meta_path = csv_path.string() + ".meta.json";
    std::ifstream mf(meta_path);
    if (mf) {
        nlohmann::json meta = nlohmann::json::parse(mf);
        chain.acceptance_rate = meta.value("acceptance_rate", 0.0);
        chain.proposal_scale = meta.value("proposal_scale", 0.0);
        chain.seed = meta.value("seed", std::uint64_t{0});
        const auto sd = meta.value("scale_diag", std::vector<double>{});
        chain.scale_diag = Eigen::Map<const Vec>(sd.data(), static_cast<Index>(sd.size()));
    }
    return chain;
}

}  // namespace gpdyn
