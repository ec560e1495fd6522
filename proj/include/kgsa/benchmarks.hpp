#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/erf.hpp>

#include "kgsa/dataset.hpp"
#include "kgsa/decomposition.hpp"
#include "kgsa/error.hpp"
#include "kgsa/kernels.hpp"
#include "kgsa/subset.hpp"

namespace kgsa {

namespace detail {

inline void require_symmetric(const Matrix& m, const char* what, double tol = 1e-10) {
    if (m.rows() != m.cols()) throw ConfigError(std::string(what) + " must be square");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
        throw ConfigError(std::string(what) + " must be symmetric");
    }
}

}  // namespace detail

/// Linear map Y = c^T X of jointly normal inputs X ~ N(mean, covariance).
struct AffineSystem {
    Vector coefficients;
    Vector mean;
    Matrix covariance;

    AffineSystem(Vector c, Vector mu, Matrix cov)
        : coefficients(std::move(c)), mean(std::move(mu)), covariance(std::move(cov)) {
        if (mean.size() != coefficients.size() || covariance.rows() != coefficients.size()) {
            throw ConfigError("affine system dimensions disagree");
        }
        detail::require_symmetric(covariance, "input covariance");
        Eigen::SelfAdjointEigenSolver<Matrix> es(covariance);
        if (es.eigenvalues().minCoeff() < -1e-10) throw ConfigError("input covariance is not PSD");
    }

    [[nodiscard]] int input_count() const { return static_cast<int>(coefficients.size()); }

    /// Y = 3 X1 + 2.1 X2 + 1.9 X3 with corr(X2, X3) = 0.8.
    static AffineSystem example1() {
        Matrix cov(3, 3);
        cov << 1, 0, 0,
               0, 1, 0.8,
               0, 0.8, 1;
        return {Vector{{3.0, 2.1, 1.9}}, Vector::Zero(3), cov};
    }

    /// Y = X1 + X2 + 2 X3; X4 enters only through its correlation with X3.
    static AffineSystem example2() {
        Matrix cov(4, 4);
        cov << 1, 0.1, 0, 0,
               0.1, 1, 0.3, 0,
               0, 0.3, 1, 0.9,
               0, 0, 0.9, 1;
        return {Vector{{1.0, 1.0, 2.0, 0.0}}, Vector::Zero(4), cov};
    }
};

/// Output kernel bandwidth for Example 2 (standard deviation of the output).
inline constexpr double kExample2Bandwidth = 2.7203;

/// n draws from N(mean, cov) through the eigendecomposition of cov, with
/// eigenvalues below 1e-12 of the largest set to zero so rank-deficient
/// directions are reproduced exactly.
inline Matrix sample_mvn(const Vector& mean, const Matrix& cov, Eigen::Index n, std::uint64_t seed) {
    if (cov.rows() != mean.size()) throw ConfigError("mean and covariance dimensions disagree");
    detail::require_symmetric(cov, "covariance");
    if (n < 0) throw ConfigError("sample count must be non-negative");
    const Eigen::Index d = mean.size();
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    Vector w = es.eigenvalues();
    const double top = std::max(0.0, w.maxCoeff());
    for (Eigen::Index i = 0; i < d; ++i) w(i) = w(i) <= 1e-12 * top ? 0.0 : std::sqrt(w(i));
    const Matrix root = es.eigenvectors() * w.asDiagonal();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Matrix z(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) z(i, j) = normal(rng);
    }
    Matrix x = z * root.transpose();
    x.rowwise() += mean.transpose();
    return x;
}

/// Marginal distribution of one copula coordinate.
struct Marginal {
    enum class Kind { Normal, Uniform };
    Kind kind = Kind::Normal;
    double a = 0.0;  ///< mean, or lower bound
    double b = 1.0;  ///< standard deviation, or upper bound

    static Marginal normal(double mean, double sd) {
        if (!(sd > 0.0) || !std::isfinite(mean) || !std::isfinite(sd)) {
            throw ConfigError("normal marginal needs finite mean and positive sd");
        }
        return {Kind::Normal, mean, sd};
    }
    static Marginal uniform(double lo, double hi) {
        if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
            throw ConfigError("uniform marginal needs finite lo < hi");
        }
        return {Kind::Uniform, lo, hi};
    }

    [[nodiscard]] double cdf(double x) const {
        if (kind == Kind::Normal) return 0.5 * std::erfc(-(x - a) / (b * std::sqrt(2.0)));
        return std::clamp((x - a) / (b - a), 0.0, 1.0);
    }
    [[nodiscard]] double quantile(double u) const {
        if (kind == Kind::Normal) {
            return a - b * std::sqrt(2.0) * boost::math::erfc_inv(2.0 * u);
        }
        return a + u * (b - a);
    }
};

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Marginals coupled through a Gaussian copula with the given correlation.
struct CopulaSpec {
    std::vector<Marginal> marginals;
    Matrix correlation;

    void validate() const {
        const auto d = static_cast<Eigen::Index>(marginals.size());
        if (d == 0) throw ConfigError("copula needs at least one marginal");
        if (correlation.rows() != d || correlation.cols() != d) {
            throw ConfigError("copula correlation size does not match the marginal count");
        }
        detail::require_symmetric(correlation, "copula correlation");
        for (Eigen::Index i = 0; i < d; ++i) {
            if (std::abs(correlation(i, i) - 1.0) > 1e-12) throw ConfigError("copula correlation needs a unit diagonal");
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(correlation);
        if (es.eigenvalues().minCoeff() < -1e-8) {
            throw ConfigError("copula correlation is indefinite; repair it with nearest_psd first");
        }
    }
};

/// Clips negative eigenvalues to zero and rescales to a unit diagonal;
/// rounding is kept inside [-1, 1].
/// Matrices whose smallest eigenvalue is at least -tol are returned unchanged.
inline Matrix nearest_psd(const Matrix& m, double tol = 0.0) {
    detail::require_symmetric(m, "matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.eigenvalues().minCoeff() >= -tol) return m;
    const Vector w = es.eigenvalues().cwiseMax(0.0);
    Matrix c = es.eigenvectors() * w.asDiagonal() * es.eigenvectors().transpose();
    const Vector s = c.diagonal().cwiseSqrt().cwiseInverse();
    c = s.asDiagonal() * c * s.asDiagonal();
    c = (0.5 * (c + c.transpose())).cwiseMax(-1.0).cwiseMin(1.0);
    c.diagonal().setOnes();
    return c;
}

/// Latent MVN draws mapped through the standard normal CDF and then each
/// marginal's quantile function.
inline Matrix sample_gaussian_copula(const CopulaSpec& spec, Eigen::Index n, std::uint64_t seed) {
    spec.validate();
    const auto d = static_cast<Eigen::Index>(spec.marginals.size());
    const Matrix z = sample_mvn(Vector::Zero(d), spec.correlation, n, seed);
    Matrix x(n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const Marginal& m = spec.marginals[static_cast<std::size_t>(j)];
        for (Eigen::Index i = 0; i < n; ++i) {
            const double u = std::clamp(standard_normal_cdf(z(i, j)), 1e-300, 1.0 - 1e-16);
            x(i, j) = m.quantile(u);
        }
    }
    return x;
}

inline Vector eval_affine(const AffineSystem& system, const Matrix& x) {
    if (x.cols() != system.coefficients.size()) throw ConfigError("input dimension does not match the affine system");
    return x * system.coefficients;
}

inline double eval_affine(const AffineSystem& system, const Vector& x) {
    if (x.size() != system.coefficients.size()) throw ConfigError("input dimension does not match the affine system");
    return system.coefficients.dot(x);
}

namespace detail {

/// Variance of Y left after conditioning on the inputs in `subset`.
inline double affine_residual_variance(const AffineSystem& system, InputSubset subset) {
    const Matrix& s = system.covariance;
    const Vector& c = system.coefficients;
    const double total = c.dot(s * c);
    if (subset.empty()) return total;
    const auto idx = subset.indices();
    if (idx.back() >= system.input_count()) throw ConfigError("subset exceeds the affine system's inputs");
    const auto r = static_cast<Eigen::Index>(idx.size());
    Matrix srr(r, r);
    Vector cross(r);  // Sigma_{R,.} c
    const Vector sc = s * c;
    for (Eigen::Index p = 0; p < r; ++p) {
        cross(p) = sc(idx[static_cast<std::size_t>(p)]);
        for (Eigen::Index q = 0; q < r; ++q) srr(p, q) = s(idx[static_cast<std::size_t>(p)], idx[static_cast<std::size_t>(q)]);
    }
    const double explained = cross.dot(psd_pseudo_inverse(srr) * cross);
    return std::max(0.0, total - explained);
}

inline double rbf_self_similarity(double sigma, double variance) {
    return sigma / std::sqrt(sigma * sigma + 2.0 * variance);
}

}  // namespace detail

/// Var[E[Y | X_R]] / Var[Y], the exact beta under a linear output kernel.
inline double analytic_variance_beta(const AffineSystem& system, InputSubset subset) {
    const double total = detail::affine_residual_variance(system, InputSubset{});
    if (!(total > 0.0)) throw NumericalError("affine output has zero variance");
    return 1.0 - detail::affine_residual_variance(system, subset) / total;
}

/// Exact beta under a Gaussian RBF output kernel of bandwidth sigma. For a
/// Gaussian output with variance s2 and conditional variance v_R,
/// E k(Y, Y') = sigma / sqrt(sigma^2 + 2 v), so
/// beta_R = (h(v_R) - h(s2)) / (1 - h(s2)).
inline double analytic_rbf_beta(const AffineSystem& system, InputSubset subset, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("bandwidth must be positive");
    const double s2 = detail::affine_residual_variance(system, InputSubset{});
    if (!(s2 > 0.0)) throw NumericalError("affine output has zero variance");
    const double base = detail::rbf_self_similarity(sigma, s2);
    const double v = detail::affine_residual_variance(system, subset);
    return (detail::rbf_self_similarity(sigma, v) - base) / (1.0 - base);
}

/// Exact inner statistical functions (gamma^N, gamma^D) of a subset at x_R
/// under a Gaussian RBF output kernel.
struct AnalyticIsf {
    double norm = 0.0;
    double dist = 0.0;
};

inline AnalyticIsf analytic_rbf_isf(const AffineSystem& system, InputSubset subset, const Vector& x_subset,
                                    double sigma) {
    const auto idx = subset.indices();
    if (static_cast<Eigen::Index>(idx.size()) != x_subset.size()) throw ConfigError("point dimension does not match subset");
    const double s2 = detail::affine_residual_variance(system, InputSubset{});
    const double v = detail::affine_residual_variance(system, subset);
    const double base = detail::rbf_self_similarity(sigma, s2);
    const double den = 1.0 - base;

    const Matrix& s = system.covariance;
    const Vector sc = s * system.coefficients;
    const auto r = static_cast<Eigen::Index>(idx.size());
    Matrix srr(r, r);
    Vector cross(r);
    Vector dx(r);
    for (Eigen::Index p = 0; p < r; ++p) {
        const int ip = idx[static_cast<std::size_t>(p)];
        cross(p) = sc(ip);
        dx(p) = x_subset(p) - system.mean(ip);
        for (Eigen::Index q = 0; q < r; ++q) srr(p, q) = s(ip, idx[static_cast<std::size_t>(q)]);
    }
    const double shift = cross.dot(psd_pseudo_inverse(srr) * dx);  // E[Y|x] - E[Y]
    const double self = detail::rbf_self_similarity(sigma, v);
    const double spread = sigma * sigma + v + s2;
    const double inner = sigma / std::sqrt(spread) * std::exp(-shift * shift / (2.0 * spread));
    return {(self - base) / den, (self - 2.0 * inner + base) / den};
}

/// Table of analytic betas for every non-empty subset of the system's inputs.
/// A positive sigma selects the RBF output kernel, otherwise the linear kernel.
inline IndexTable analytic_table(const AffineSystem& system, double sigma = 0.0) {
    IndexTable t(system.input_count(), sigma > 0.0 ? "analytic-rbf" : "analytic-linear");
    for (auto s : subsets_of(InputSubset::full(system.input_count()))) {
        if (s.empty()) continue;
        t.set(s, sigma > 0.0 ? analytic_rbf_beta(system, s, sigma) : analytic_variance_beta(system, s));
    }
    return t;
}

// ---------------------------------------------------------------------------
// Continuous-flow reactor: A+B->C (k1), A+B->D (k2), C+B->E (k3), D+B->E (k4).

/// k = 10^log10_a * exp(-E_a / (R T)).
inline double arrhenius_rate(double log10_a, double activation_energy, double temperature, double gas_constant) {
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    return std::pow(10.0, log10_a) * std::exp(-activation_energy / (gas_constant * temperature));
}

using Concentrations = std::array<double, 5>;  // A, B, C, D, E
using RateConstants = std::array<double, 4>;

struct ReactorConfig {
    Concentrations initial{0.150, 0.375, 0.0, 0.0, 0.0};
    double temperature = 373.15;
    double residence_time = 1200.0;
    double gas_constant = 0.008314;
    int steps = 2400;
    /// Reject results whose [D] changes by more than this when the step
    /// count is doubled. Non-positive disables the check.
    double convergence_tolerance = 1e-8;

    void validate() const {
        for (double c : initial) {
            if (!(c >= 0.0) || !std::isfinite(c)) throw ConfigError("initial concentrations must be finite and >= 0");
        }
        if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
        if (!(residence_time > 0.0)) throw ConfigError("residence time must be positive");
        if (!(gas_constant > 0.0)) throw ConfigError("gas constant must be positive");
        if (steps < 1) throw ConfigError("integrator step count must be positive");
    }
};

inline Concentrations reactor_rhs(const Concentrations& y, const RateConstants& k) {
    const double r1 = k[0] * y[0] * y[1];
    const double r2 = k[1] * y[0] * y[1];
    const double r3 = k[2] * y[2] * y[1];
    const double r4 = k[3] * y[3] * y[1];
    return {-r1 - r2, -r1 - r2 - r3 - r4, r1 - r3, r2 - r4, r3 + r4};
}

/// Classical fixed-step RK4 from 0 to t_end.
inline Concentrations integrate_reactor(const Concentrations& y0, const RateConstants& k, double t_end, int steps) {
    if (steps < 1) throw ConfigError("integrator step count must be positive");
    const double h = t_end / steps;
    Concentrations y = y0;
    auto axpy = [](const Concentrations& a, double s, const Concentrations& b) {
        Concentrations o;
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + s * b[i];
        return o;
    };
    for (int n = 0; n < steps; ++n) {
        const auto k1 = reactor_rhs(y, k);
        const auto k2 = reactor_rhs(axpy(y, 0.5 * h, k1), k);
        const auto k3 = reactor_rhs(axpy(y, 0.5 * h, k2), k);
        const auto k4 = reactor_rhs(axpy(y, h, k3), k);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    return y;
}

/// Rate constants from (log10 A_i, E_A_i) pairs ordered per reaction.
inline RateConstants reactor_rates(const ReactorConfig& cfg, const std::array<double, 8>& params) {
    RateConstants k;
    for (std::size_t i = 0; i < 4; ++i) {
        k[i] = arrhenius_rate(params[2 * i], params[2 * i + 1], cfg.temperature, cfg.gas_constant);
    }
    return k;
}

/// Concentrations (A, B, C, D, E) at the residence time.
inline Concentrations simulate_reactor(const ReactorConfig& cfg, const std::array<double, 8>& params) {
    cfg.validate();
    for (double p : params) {
        if (!std::isfinite(p)) throw DataError("reactor rate parameters must be finite");
    }
    const RateConstants k = reactor_rates(cfg, params);
    const Concentrations y = integrate_reactor(cfg.initial, k, cfg.residence_time, cfg.steps);
    if (cfg.convergence_tolerance > 0.0) {
        const Concentrations fine = integrate_reactor(cfg.initial, k, cfg.residence_time, 2 * cfg.steps);
        const double change = std::abs(fine[3] - y[3]);
        if (!(change <= cfg.convergence_tolerance)) {
            throw NumericalError("reactor integration not converged: doubling " + std::to_string(cfg.steps) +
                                 " steps changes [D] by " + std::to_string(change));
        }
    }
    return y;
}

/// Nominal rate parameters and their standard deviations, ordered
/// (log10 A1, EA1, log10 A2, EA2, log10 A3, EA3, log10 A4, EA4).
inline constexpr std::array<double, 8> kReactorMeans{3.4, 27.0, 3.5, 32.1, 4.9, 60.0, 3.0, 45.0};
inline constexpr std::array<double, 8> kReactorStdDevs{0.1, 0.6, 0.1, 0.6, 0.2, 1.6, 0.2, 1.7};

/// Reported correlation of the reactor rate parameters (before repair).
inline Matrix reactor_correlation() {
    Matrix c(8, 8);
    c << 1.000, 0.997, 0.976, 0.968, -0.002, -0.003, 0.000, 0.000,
         0.997, 1.000, 0.976, 0.973, -0.003, -0.003, 0.000, 0.000,
         0.976, 0.976, 1.000, 0.997, -0.006, -0.006, 0.000, 0.000,
         0.968, 0.973, 0.997, 1.000, -0.007, -0.007, 0.000, 0.000,
        -0.002, -0.003, -0.006, -0.007, 1.000, 1.000, -0.008, -0.008,
        -0.003, -0.003, -0.006, -0.007, 1.000, 1.000, -0.008, -0.008,
         0.000, 0.000, 0.000, 0.000, -0.008, -0.008, 1.000, 1.000,
         0.000, 0.000, 0.000, 0.000, -0.008, -0.008, 1.000, 1.000;
    return c;
}

inline CopulaSpec reactor_copula(bool correlated) {
    CopulaSpec spec;
    for (std::size_t i = 0; i < 8; ++i) spec.marginals.push_back(Marginal::normal(kReactorMeans[i], kReactorStdDevs[i]));
    spec.correlation = correlated ? nearest_psd(reactor_correlation(), 1e-10) : Matrix(Matrix::Identity(8, 8));
    return spec;
}

/// Copula-sampled rate parameters and the resulting [D] at the residence time.
inline DataSet reactor_dataset(bool correlated, Eigen::Index n, std::uint64_t seed, const ReactorConfig& cfg = {}) {
    const Matrix x = sample_gaussian_copula(reactor_copula(correlated), n, seed);
    Matrix y(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::array<double, 8> p;
        for (Eigen::Index j = 0; j < 8; ++j) p[static_cast<std::size_t>(j)] = x(i, j);
        y(i, 0) = simulate_reactor(cfg, p)[3];
    }
    return DataSet(x, y);
}

inline DataSet affine_dataset(const AffineSystem& system, Eigen::Index n, std::uint64_t seed) {
    const Matrix x = sample_mvn(system.mean, system.covariance, n, seed);
    return DataSet(x, Matrix(eval_affine(system, x)));
}

enum class Benchmark { Example1, Example2, ReactorIndependent, ReactorCorrelated };

inline std::string to_string(Benchmark b) {
    switch (b) {
        case Benchmark::Example1: return "example1";
        case Benchmark::Example2: return "example2";
        case Benchmark::ReactorIndependent: return "reactor-indep";
        case Benchmark::ReactorCorrelated: return "reactor-corr";
    }
    return "?";
}

inline Benchmark parse_benchmark(const std::string& s) {
    for (auto b : {Benchmark::Example1, Benchmark::Example2, Benchmark::ReactorIndependent,
                   Benchmark::ReactorCorrelated}) {
        if (to_string(b) == s) return b;
    }
    throw ConfigError("unknown benchmark '" + s + "' (expected example1, example2, reactor-indep or reactor-corr)");
}

inline DataSet generate_benchmark(Benchmark b, Eigen::Index n, std::uint64_t seed) {
    if (n < 2) throw ConfigError("benchmark sample size must be at least 2");
    switch (b) {
        case Benchmark::Example1: return affine_dataset(AffineSystem::example1(), n, seed);
        case Benchmark::Example2: return affine_dataset(AffineSystem::example2(), n, seed);
        case Benchmark::ReactorIndependent: return reactor_dataset(false, n, seed);
        case Benchmark::ReactorCorrelated: return reactor_dataset(true, n, seed);
    }
    throw ConfigError("unknown benchmark");
}

}  // namespace kgsa
