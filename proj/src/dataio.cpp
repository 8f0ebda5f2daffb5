#include "gpdyn/dataio.hpp"
#include "gpdyn/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

namespace gpdyn {

namespace {

std::vector<Index> sample_without_replacement(Index pool, Index k, std::mt19937_64& rng) {
    std::vector<Index> all(static_cast<size_t>(pool));
    std::iota(all.begin(), all.end(), Index{0});
    std::vector<Index> out;
    out.reserve(static_cast<size_t>(k));
    std::sample(all.begin(), all.end(), std::back_inserter(out), k, rng);
    return out;  // std::sample preserves ascending order
}

}  // namespace

std::pair<Dataset, Dataset> generate(const SystemSpec& spec, const Vec& ic,
                                     const GenerateOptions& opts) {
    if (!(opts.density > 0.0 && opts.density <= 1.0))
        fail(errc::domain_violation, "density must be in (0, 1]");
    if (opts.noise_level < 0.0) fail(errc::domain_violation, "noise_level must be >= 0");

    const Index n_dense = static_cast<Index>(std::llround(opts.t_end / opts.dt));
    Vec dense_times(n_dense + 1);
    for (Index k = 0; k <= n_dense; ++k) dense_times[k] = static_cast<double>(k) * opts.dt;

    const Vec theta = spec.truth ? *spec.truth : Vec::Zero(spec.theta_dim);
    const Mat dense = integrate(spec, theta, ic, dense_times, opts.integrator);

    const double train_end = opts.train_fraction * opts.t_end;
    Index n_window = 0;
    while (n_window <= n_dense && dense_times[n_window] <= train_end + 1e-12 * opts.t_end)
        ++n_window;

    // The base pool is drawn first with its own stream and then treated as the
    // entire dataset that density fractions refer to.
    std::vector<Index> pool;
    if (opts.base_fraction < 1.0) {
        std::mt19937_64 rng_base(derive_seed(opts.seed, "base-pool"));
        const Index n_pool =
            static_cast<Index>(std::floor(static_cast<double>(n_window) * opts.base_fraction));
        pool = sample_without_replacement(n_window, n_pool, rng_base);
    } else {
        pool.resize(static_cast<size_t>(n_window));
        std::iota(pool.begin(), pool.end(), Index{0});
    }

    Index K = opts.n_points > 0
                  ? static_cast<Index>(opts.n_points)
                  : static_cast<Index>(std::llround(static_cast<double>(pool.size()) * opts.density));
    if (K < 2) fail(errc::empty_training_set, "density/point count leaves fewer than 2 samples");
    if (K > static_cast<Index>(pool.size()))
        fail(errc::empty_training_set, "requested more points than the pool holds");

    std::mt19937_64 rng_sub(derive_seed(opts.seed, "subsample"));
    std::vector<Index> picks_local = sample_without_replacement(static_cast<Index>(pool.size()), K, rng_sub);

    Dataset train;
    train.system = spec.name;
    train.ic = ic;
    train.noise_level = opts.noise_level;
    train.density = opts.density;
    train.seed = opts.seed;
    train.train_begin = 0.0;
    train.train_end = train_end;
    train.times.resize(K);
    train.clean_values.resize(K, spec.state_dim);
    for (Index i = 0; i < K; ++i) {
        const Index gi = pool[static_cast<size_t>(picks_local[static_cast<size_t>(i)])];
        train.times[i] = dense_times[gi];
        train.clean_values.row(i) = dense.row(gi);
    }
    train.values = train.clean_values;
    if (opts.noise_level > 0.0) {
        std::mt19937_64 rng_noise(derive_seed(opts.seed, "noise"));
        std::normal_distribution<double> n01(0.0, 1.0);
        for (Index j = 0; j < spec.state_dim; ++j) {
            const double sd = opts.noise_level * train.clean_values.col(j).mean();
            for (Index i = 0; i < K; ++i) train.values(i, j) += sd * n01(rng_noise);
        }
    }

    Dataset test;
    test.system = spec.name;
    test.ic = ic;
    test.noise_level = 0.0;
    test.density = opts.density;
    test.seed = opts.seed;
    test.train_begin = 0.0;
    test.train_end = train_end;
    std::vector<Index> rows;
    for (Index k = n_window; k <= n_dense; k += opts.test_stride) rows.push_back(k);
    test.times.resize(static_cast<Index>(rows.size()));
    test.clean_values.resize(static_cast<Index>(rows.size()), spec.state_dim);
    for (size_t i = 0; i < rows.size(); ++i) {
        test.times[static_cast<Index>(i)] = dense_times[rows[i]];
        test.clean_values.row(static_cast<Index>(i)) = dense.row(rows[i]);
    }
    test.values = test.clean_values;
    return {std::move(train), std::move(test)};
}

Mat finite_difference_derivatives(const Vec& times, const Mat& values) {
    const Index K = times.size();
    if (K < 3) fail(errc::shape_mismatch, "finite differences need K >= 3");
    if (values.rows() != K) fail(errc::shape_mismatch, "times/values size mismatch");
    for (Index k = 1; k < K; ++k)
        if (times[k] == times[k - 1]) fail(errc::degenerate_grid, "duplicate time stamps");

    Mat out(K, values.cols());
    for (Index k = 0; k < K; ++k) {
        // Three-point Lagrange derivative at t_k; interior stencils are centered.
        Index i0 = k == 0 ? 0 : (k == K - 1 ? K - 3 : k - 1);
        const double t0 = times[i0], t1 = times[i0 + 1], t2 = times[i0 + 2];
        const double tk = times[k];
        const double w0 = (2 * tk - t1 - t2) / ((t0 - t1) * (t0 - t2));
        const double w1 = (2 * tk - t0 - t2) / ((t1 - t0) * (t1 - t2));
        const double w2 = (2 * tk - t0 - t1) / ((t2 - t0) * (t2 - t1));
        out.row(k) = w0 * values.row(i0) + w1 * values.row(i0 + 1) + w2 * values.row(i0 + 2);
    }
    return out;
}

namespace {

// Least-squares polynomial fit over (dt, y) pairs, evaluated at dt = 0.
double local_poly_at_zero(const Vec& dt, const Vec& y, int order) {
    Mat V(dt.size(), order + 1);
    for (Index i = 0; i < dt.size(); ++i) {
        double p = 1.0;
        for (int c = 0; c <= order; ++c) {
            V(i, c) = p;
            p *= dt[i];
        }
    }
    const Vec coef = V.colPivHouseholderQr().solve(y);
    return coef[0];
}

void check_window(Index K, int window, int poly_order) {
    if (window % 2 == 0 || window < 3)
        fail(errc::domain_violation, "window must be odd and >= 3");
    if (poly_order >= window)
        fail(errc::domain_violation, "polynomial order must be below the window size");
    if (static_cast<Index>(window) > K)
        fail(errc::window_too_large, "window exceeds the sample count");
}

}  // namespace

Mat savitzky_golay(const Vec& times, const Mat& values, int window, int poly_order) {
    const Index K = times.size();
    check_window(K, window, poly_order);
    const double h0 = times[1] - times[0];
    for (Index k = 1; k < K; ++k) {
        const double h = times[k] - times[k - 1];
        if (std::abs(h - h0) > 1e-8 * std::max(std::abs(h0), 1e-300))
            fail(errc::non_uniform_grid, "savitzky_golay requires a uniform grid");
    }
    return smooth_scattered(times, values, window, poly_order);
}

Mat smooth_scattered(const Vec& times, const Mat& values, int window, int poly_order) {
    const Index K = times.size();
    check_window(K, window, poly_order);
    const int m = window / 2;
    Mat out(K, values.cols());
    for (Index k = 0; k < K; ++k) {
        Index lo = std::clamp(k - m, Index{0}, K - window);
        Vec dt(window);
        for (int i = 0; i < window; ++i) dt[i] = times[lo + i] - times[k];
        for (Index j = 0; j < values.cols(); ++j) {
            Vec y(window);
            for (int i = 0; i < window; ++i) y[i] = values(lo + i, j);
            out(k, j) = local_poly_at_zero(dt, y, poly_order);
        }
    }
    return out;
}

Vec baseline_linreg(const Mat& G, const Vec& d_fd) {
    if (G.rows() != d_fd.size()) fail(errc::shape_mismatch, "baseline_linreg size mismatch");
    Eigen::ColPivHouseholderQR<Mat> qr(G);
    if (qr.rank() < G.cols())
        fail(errc::singular_system, "baseline design matrix is rank-deficient");
    return qr.solve(d_fd);
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) fail(errc::io, "cannot open " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

namespace {

std::string format_full(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_dataset(const std::filesystem::path& csv_path, const Dataset& d) {
    std::ostringstream csv;
    const Index N = d.values.cols();
    csv << "t";
    for (Index j = 0; j < N; ++j) csv << ",x" << (j + 1);
    for (Index j = 0; j < N; ++j) csv << ",clean_x" << (j + 1);
    csv << "\n";
    for (Index k = 0; k < d.times.size(); ++k) {
        csv << format_full(d.times[k]);
        for (Index j = 0; j < N; ++j) csv << "," << format_full(d.values(k, j));
        for (Index j = 0; j < N; ++j) csv << "," << format_full(d.clean_values(k, j));
        csv << "\n";
    }
    write_text_atomic(csv_path, csv.str());

    nlohmann::json meta;
    meta["system"] = d.system;
    meta["ic"] = std::vector<double>(d.ic.begin(), d.ic.end());
    meta["seed"] = d.seed;
    meta["noise_level"] = d.noise_level;
    meta["density"] = d.density;
    meta["train_window"] = {d.train_begin, d.train_end};
    write_text_atomic(csv_path.string() + ".meta.json", meta.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) fail(errc::io, "cannot open " + csv_path.string());
    std::string line;
    if (!std::getline(in, line)) fail(errc::io, "empty dataset file");
    Index ncols = static_cast<Index>(std::count(line.begin(), line.end(), ',')) + 1;
    const Index N = (ncols - 1) / 2;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (static_cast<Index>(row.size()) != ncols)
            fail(errc::io, "ragged row in " + csv_path.string());
        rows.push_back(std::move(row));
    }
    Dataset d;
    const Index K = static_cast<Index>(rows.size());
    d.times.resize(K);
    d.values.resize(K, N);
    d.clean_values.resize(K, N);
    for (Index k = 0; k < K; ++k) {
        d.times[k] = rows[static_cast<size_t>(k)][0];
        for (Index j = 0; j < N; ++j) {
            d.values(k, j) = rows[static_cast<size_t>(k)][static_cast<size_t>(1 + j)];
            d.clean_values(k, j) = rows[static_cast<size_t>(k)][static_cast<size_t>(1 + N + j)];
        }
    }
    const auto meta_path = csv_path.string() + ".meta.json";
    std::ifstream mf(meta_path);
    if (mf) {
        nlohmann::json meta = nlohmann::json::parse(mf);
        d.system = meta.value("system", "");
        const auto icv = meta.value("ic", std::vector<double>{});
        d.ic = Eigen::Map<const Vec>(icv.data(), static_cast<Index>(icv.size()));
        d.seed = meta.value("seed", std::uint64_t{0});
        d.noise_level = meta.value("noise_level", 0.0);
        d.density = meta.value("density", 1.0);
        if (meta.contains("train_window")) {
            d.train_begin = meta["train_window"][0].get<double>();
            d.train_end = meta["train_window"][1].get<double>();
        }
    }
    return d;
}

}  // namespace gpdyn
