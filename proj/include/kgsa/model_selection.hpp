#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "kgsa/dataset.hpp"
#include "kgsa/embedding.hpp"
#include "kgsa/kernels.hpp"

namespace kgsa {

/// Cross-validation protocol and hyperparameter search space. Positive
/// parameters are searched in log scale.
struct CvConfig {
    int folds = 5;
    std::uint64_t seed = 0;
    double lambda_min = 1e-8;
    double lambda_max = 1e2;
    double initial_lambda = 1e-3;
    /// Bandwidth bounds as multiples of the median heuristic.
    double bandwidth_min_factor = 1e-2;
    double bandwidth_max_factor = 1e2;
    /// Jointly tune the input bandwidth; when false only lambda is searched.
    bool tune_bandwidth = true;
    int max_evaluations = 60;
    /// Termination threshold on the simplex diameter in log-parameter space.
    double log_tolerance = 1e-2;

    void validate(Eigen::Index n) const {
        if (folds < 2 || folds > n) throw ConfigError("fold count must lie in 2..N");
        if (!(lambda_min > 0.0) || !(lambda_min < lambda_max) || !std::isfinite(lambda_max)) {
            throw ConfigError("lambda bounds must satisfy 0 < min < max < inf");
        }
        if (!(bandwidth_min_factor > 0.0) || !(bandwidth_min_factor < bandwidth_max_factor) ||
            !std::isfinite(bandwidth_max_factor)) {
            throw ConfigError("bandwidth bounds must satisfy 0 < min < max < inf");
        }
        if (max_evaluations < 1) throw ConfigError("optimizer budget must be positive");
    }
};

using Folds = std::vector<std::vector<Eigen::Index>>;

/// Shuffled partition of {0..n-1} into `folds` disjoint parts whose sizes
/// differ by at most one.
inline Folds fold_partition(Eigen::Index n, int folds, std::uint64_t seed) {
    if (folds < 2 || folds > n) throw ConfigError("fold count must lie in 2..N");
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    Folds out(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < perm.size(); ++i) out[i % out.size()].push_back(perm[i]);
    for (auto& f : out) std::sort(f.begin(), f.end());
    return out;
}

namespace detail {

inline Matrix take_rows(const Matrix& m, const std::vector<Eigen::Index>& ids) {
    Matrix out(static_cast<Eigen::Index>(ids.size()), m.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(ids[r]);
    return out;
}

}  // namespace detail

/// Mean held-out RKHS prediction error over the given folds:
/// k(y_j,y_j) - 2 Gamma_j^T W K_{.,j} + Gamma_j^T W K W Gamma_j per held-out j,
/// averaged within each fold and then across folds.
inline double cv_loss(const Matrix& x_subset, const Matrix& outputs, const KernelSpec& input_kernel,
                      const KernelSpec& output_kernel, double lambda, const Folds& folds) {
    const Eigen::Index n = x_subset.rows();
    if (outputs.rows() != n) throw DataError("input and output row counts differ");
    std::vector<char> held(static_cast<std::size_t>(n));
    double total = 0.0;
    for (const auto& test : folds) {
        if (test.empty()) throw ConfigError("cross-validation fold is empty");
        std::fill(held.begin(), held.end(), 0);
        for (auto j : test) held[static_cast<std::size_t>(j)] = 1;
        std::vector<Eigen::Index> train;
        train.reserve(static_cast<std::size_t>(n) - test.size());
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!held[static_cast<std::size_t>(i)]) train.push_back(i);
        }
        if (train.size() < 1) throw ConfigError("cross-validation training fold is empty");
        const Matrix xt = detail::take_rows(x_subset, train);
        const Matrix yt = detail::take_rows(outputs, train);
        const Matrix xv = detail::take_rows(x_subset, test);
        const Matrix yv = detail::take_rows(outputs, test);

        const Matrix l = gram_matrix(input_kernel, xt);
        const Matrix k = gram_matrix(output_kernel, yt);
        auto [llt, jitter] = detail::regularized_cholesky(l, lambda);
        (void)jitter;
        const Matrix a = llt.solve(cross_gram(input_kernel, xt, xv));  // W Gamma
        const Matrix kc = cross_gram(output_kernel, yt, yv);
        const Matrix ka = k * a;
        double fold = 0.0;
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            const double self = output_kernel.raw(yv.row(j).eval().data(), yv.row(j).eval().data(), yv.cols());
            fold += self - 2.0 * a.col(j).dot(kc.col(j)) + a.col(j).dot(ka.col(j));
        }
        total += fold / static_cast<double>(a.cols());
    }
    return total / static_cast<double>(folds.size());
}

inline double cv_loss(const DataSet& data, InputSubset subset, const KernelSpec& input_kernel,
                      const KernelSpec& output_kernel, double lambda, const CvConfig& cfg) {
    cfg.validate(data.size());
    return cv_loss(data.select(subset), data.outputs(), input_kernel, output_kernel, lambda,
                   fold_partition(data.size(), cfg.folds, cfg.seed));
}

struct NelderMeadOptions {
    int max_evaluations = 500;
    /// Stop once every vertex lies within this distance of the best one.
    double x_tolerance = 1e-8;
    /// Initial simplex edge along each coordinate.
    double initial_step = 0.5;
};

struct NelderMeadResult {
    Vector argmin;
    double value = 0.0;
    int evaluations = 0;
    bool converged = false;
};

/// Derivative-free simplex minimization with the standard coefficients
/// (reflect 1, expand 2, contract 1/2, shrink 1/2). Non-finite objective
/// values are treated as +inf.
inline NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& objective, const Vector& init,
                                    const NelderMeadOptions& opts = {}) {
    const Eigen::Index p = init.size();
    if (p < 1) throw ConfigError("Nelder-Mead needs at least one parameter");
    const double inf = std::numeric_limits<double>::infinity();
    int evals = 0;
    auto f = [&](const Vector& x) {
        ++evals;
        const double v = objective(x);
        return std::isfinite(v) ? v : inf;
    };

    std::vector<Vector> x(static_cast<std::size_t>(p + 1), init);
    std::vector<double> fx(static_cast<std::size_t>(p + 1));
    fx[0] = f(init);
    if (!std::isfinite(fx[0])) throw NumericalError("Nelder-Mead objective is not finite at the initial point");
    for (Eigen::Index i = 0; i < p; ++i) {
        auto& v = x[static_cast<std::size_t>(i + 1)];
        v(i) += opts.initial_step;
        fx[static_cast<std::size_t>(i + 1)] = f(v);
    }

    std::vector<std::size_t> order(x.size());
    auto sort_simplex = [&] {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fx[a] < fx[b]; });
        std::vector<Vector> xs;
        std::vector<double> fs;
        for (auto o : order) {
            xs.push_back(x[o]);
            fs.push_back(fx[o]);
        }
        x.swap(xs);
        fx.swap(fs);
    };

    bool converged = false;
    const auto worst = static_cast<std::size_t>(p);
    while (true) {
        sort_simplex();
        double diameter = 0.0;
        for (std::size_t i = 1; i < x.size(); ++i) diameter = std::max(diameter, (x[i] - x[0]).norm());
        if (diameter < opts.x_tolerance) {
            converged = true;
            break;
        }
        if (evals >= opts.max_evaluations) break;

        Vector centroid = Vector::Zero(p);
        for (std::size_t i = 0; i < worst; ++i) centroid += x[i];
        centroid /= static_cast<double>(p);

        const Vector xr = centroid + (centroid - x[worst]);
        const double fr = f(xr);
        if (fr < fx[0]) {
            const Vector xe = centroid + 2.0 * (xr - centroid);
            const double fe = f(xe);
            if (fe < fr) {
                x[worst] = xe;
                fx[worst] = fe;
            } else {
                x[worst] = xr;
                fx[worst] = fr;
            }
            continue;
        }
        if (fr < fx[worst - 1]) {
            x[worst] = xr;
            fx[worst] = fr;
            continue;
        }
        const bool outside = fr < fx[worst];
        const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid))
                                  : Vector(centroid + 0.5 * (x[worst] - centroid));
        const double fc = f(xc);
        if (fc < (outside ? fr : fx[worst])) {
            x[worst] = xc;
            fx[worst] = fc;
            continue;
        }
        for (std::size_t i = 1; i < x.size(); ++i) {
            x[i] = x[0] + 0.5 * (x[i] - x[0]);
            fx[i] = f(x[i]);
        }
    }
    return {x[0], fx[0], evals, converged};
}

/// Outcome of hyperparameter tuning for one subset.
struct TunedCme {
    KernelSpec input_kernel;
    double lambda = 0.0;
    double loss = 0.0;          ///< cv_loss at the tuned parameters
    double initial_loss = 0.0;  ///< cv_loss at the heuristic starting point
    int evaluations = 0;
};

/// Minimizes cv_loss over log(bandwidth) and log(lambda) with Nelder-Mead,
/// starting from the median heuristic and `cfg.initial_lambda`. Parameters are
/// projected onto the configured bounds; failed factorizations score +inf.
inline TunedCme tune_cme(const Matrix& x_subset, const Matrix& outputs, KernelFamily input_family,
                         const KernelSpec& output_kernel, const CvConfig& cfg) {
    cfg.validate(x_subset.rows());
    const Folds folds = fold_partition(x_subset.rows(), cfg.folds, cfg.seed);
    const bool has_bandwidth = input_family != KernelFamily::Linear;
    const bool tune_bw = has_bandwidth && cfg.tune_bandwidth;

    KernelSpec base = KernelSpec::linear();
    double bw0 = 1.0;
    if (has_bandwidth) {
        std::optional<MahalanobisMetric> metric;
        if (input_family == KernelFamily::Mahalanobis) metric = mahalanobis_metric(x_subset);
        bw0 = default_bandwidth(input_family, x_subset, metric ? &*metric : nullptr, cfg.seed);
        base = input_family == KernelFamily::Mahalanobis ? KernelSpec::mahalanobis(bw0, *metric)
                                                         : KernelSpec::gaussian(bw0);
    }
    const double log_bw_lo = std::log(bw0 * cfg.bandwidth_min_factor);
    const double log_bw_hi = std::log(bw0 * cfg.bandwidth_max_factor);
    const double log_lam_lo = std::log(cfg.lambda_min);
    const double log_lam_hi = std::log(cfg.lambda_max);

    auto unpack = [&](const Vector& v) {
        const double lam = std::clamp(std::exp(std::clamp(v(v.size() - 1), log_lam_lo, log_lam_hi)), cfg.lambda_min,
                                      cfg.lambda_max);
        const double bw = tune_bw ? std::exp(std::clamp(v(0), log_bw_lo, log_bw_hi)) : bw0;
        return std::pair{bw, lam};
    };
    auto objective = [&](const Vector& v) {
        auto [bw, lam] = unpack(v);
        try {
            return cv_loss(x_subset, outputs, base.with_bandwidth(bw), output_kernel, lam, folds);
        } catch (const NumericalError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    const double lam0 = std::clamp(cfg.initial_lambda, cfg.lambda_min, cfg.lambda_max);
    Vector init = tune_bw ? Vector(Vector::Zero(2)) : Vector(Vector::Zero(1));
    if (tune_bw) init(0) = std::log(bw0);
    init(init.size() - 1) = std::log(lam0);

    NelderMeadOptions opts;
    opts.max_evaluations = cfg.max_evaluations;
    opts.x_tolerance = cfg.log_tolerance;
    opts.initial_step = 1.0;
    const NelderMeadResult r = nelder_mead(objective, init, opts);
    auto [bw, lam] = unpack(r.argmin);

    TunedCme out{base.with_bandwidth(bw), lam, r.value, 0.0, r.evaluations};
    out.initial_loss = objective(init);
    return out;
}

inline TunedCme tune_cme(const DataSet& data, InputSubset subset, KernelFamily input_family,
                         const KernelSpec& output_kernel, const CvConfig& cfg) {
    return tune_cme(data.select(subset), data.outputs(), input_family, output_kernel, cfg);
}

}  // namespace kgsa
