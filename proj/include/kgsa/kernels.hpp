#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kgsa/dataset.hpp"
#include "kgsa/error.hpp"

namespace kgsa {

enum class KernelFamily { GaussianRBF, Linear, Mahalanobis };

inline std::string to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::GaussianRBF: return "rbf";
        case KernelFamily::Linear: return "linear";
        case KernelFamily::Mahalanobis: return "mahalanobis";
    }
    return "?";
}

/// Covariance matrix M of an input subset and its Moore-Penrose pseudo-inverse.
struct MahalanobisMetric {
    Matrix metric;
    Matrix pinv;
};

/// A symmetric positive-definite kernel on real vectors. Immutable once built;
/// copies share the metric.
class KernelSpec {
public:
    static KernelSpec gaussian(double sigma) {
        check_bandwidth(sigma);
        KernelSpec k;
        k.family_ = KernelFamily::GaussianRBF;
        k.bandwidth_ = sigma;
        return k;
    }

    static KernelSpec linear() {
        KernelSpec k;
        k.family_ = KernelFamily::Linear;
        k.bandwidth_ = 1.0;
        return k;
    }

    /// exp(-(a-b)^T M^+ (a-b) / (2 lambda^2)).
    static KernelSpec mahalanobis(double lambda, MahalanobisMetric metric) {
        check_bandwidth(lambda);
        const Matrix& m = metric.metric;
        if (m.rows() != m.cols() || m.rows() == 0 || metric.pinv.rows() != m.rows() ||
            metric.pinv.cols() != m.cols()) {
            throw ConfigError("Mahalanobis metric must be a non-empty square matrix with a matching pseudo-inverse");
        }
        if (!m.allFinite() || !metric.pinv.allFinite()) throw DataError("non-finite Mahalanobis metric");
        if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
            throw ConfigError("Mahalanobis metric is not symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
        const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
        if (es.eigenvalues().minCoeff() < -1e-10 * scale) {
            throw ConfigError("Mahalanobis metric is not positive semi-definite");
        }
        KernelSpec k;
        k.family_ = KernelFamily::Mahalanobis;
        k.bandwidth_ = lambda;
        k.metric_ = std::make_shared<const MahalanobisMetric>(std::move(metric));
        return k;
    }

    [[nodiscard]] KernelFamily family() const { return family_; }
    [[nodiscard]] double bandwidth() const { return bandwidth_; }
    [[nodiscard]] const MahalanobisMetric* metric() const { return metric_.get(); }

    /// Same family and metric, new bandwidth.
    [[nodiscard]] KernelSpec with_bandwidth(double b) const {
        if (family_ == KernelFamily::Linear) return *this;
        check_bandwidth(b);
        KernelSpec k = *this;
        k.bandwidth_ = b;
        return k;
    }

    /// Input dimension required by the metric, or -1 when unconstrained.
    [[nodiscard]] Eigen::Index dimension() const { return metric_ ? metric_->metric.rows() : -1; }

    /// Kernel value on two contiguous length-`d` arrays. Every public entry
    /// point funnels through here so Gram entries equal pointwise evaluations.
    [[nodiscard]] double raw(const double* a, const double* b, Eigen::Index d) const {
        switch (family_) {
            case KernelFamily::Linear: {
                double s = 0.0;
                for (Eigen::Index k = 0; k < d; ++k) s += a[k] * b[k];
                return s;
            }
            case KernelFamily::GaussianRBF: {
                double s = 0.0;
                for (Eigen::Index k = 0; k < d; ++k) {
                    const double t = a[k] - b[k];
                    s += t * t;
                }
                return std::exp(-s / (2.0 * bandwidth_ * bandwidth_));
            }
            case KernelFamily::Mahalanobis: {
                const Matrix& p = metric_->pinv;
                double q = 0.0;
                for (Eigen::Index i = 0; i < d; ++i) {
                    const double di = a[i] - b[i];
                    double row = 0.0;
                    for (Eigen::Index j = 0; j < d; ++j) row += p(i, j) * (a[j] - b[j]);
                    q += di * row;
                }
                return std::exp(-std::max(q, 0.0) / (2.0 * bandwidth_ * bandwidth_));
            }
        }
        return 0.0;
    }

private:
    static void check_bandwidth(double b) {
        if (!(b > 0.0) || !std::isfinite(b)) {
            throw ConfigError("kernel bandwidth must be positive and finite, got " + std::to_string(b));
        }
    }

    KernelFamily family_ = KernelFamily::GaussianRBF;
    double bandwidth_ = 1.0;
    std::shared_ptr<const MahalanobisMetric> metric_;
};

namespace detail {

// Row-major copy so each sample is contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void check_samples(const KernelSpec& spec, const Matrix& samples, const char* what) {
    if (!samples.allFinite()) throw DataError(std::string("non-finite entries in ") + what);
    if (spec.dimension() >= 0 && samples.cols() != spec.dimension()) {
        throw ConfigError(std::string("dimension mismatch between ") + what + " and Mahalanobis metric");
    }
}

}  // namespace detail

/// k(a, b) for two sample vectors of equal length.
template <class A, class B>
double eval_kernel(const KernelSpec& spec, const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    if (a.size() != b.size()) throw ConfigError("kernel arguments differ in dimension");
    if (spec.dimension() >= 0 && a.size() != spec.dimension()) {
        throw ConfigError("kernel argument dimension does not match Mahalanobis metric");
    }
    const Vector va = a.derived().reshaped();
    const Vector vb = b.derived().reshaped();
    if (!va.allFinite() || !vb.allFinite()) throw DataError("non-finite kernel argument");
    return spec.raw(va.data(), vb.data(), va.size());
}

/// N x N Gram matrix of the rows of `samples`; exactly symmetric.
inline Matrix gram_matrix(const KernelSpec& spec, const Matrix& samples) {
    if (samples.rows() < 1) throw ConfigError("Gram matrix needs at least one sample");
    detail::check_samples(spec, samples, "samples");
    const detail::RowMatrix s = samples;
    const Eigen::Index n = s.rows();
    const Eigen::Index d = s.cols();
    Matrix g(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double* xj = s.row(j).data();
        for (Eigen::Index i = j; i < n; ++i) {
            const double v = spec.raw(s.row(i).data(), xj, d);
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

/// N x M matrix of k(rows_i, cols_j).
inline Matrix cross_gram(const KernelSpec& spec, const Matrix& rows, const Matrix& cols) {
    if (rows.cols() != cols.cols()) throw ConfigError("cross Gram dimension mismatch");
    detail::check_samples(spec, rows, "rows");
    detail::check_samples(spec, cols, "columns");
    const detail::RowMatrix r = rows;
    const detail::RowMatrix c = cols;
    const Eigen::Index d = r.cols();
    Matrix g(r.rows(), c.rows());
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
        for (Eigen::Index i = 0; i < r.rows(); ++i) g(i, j) = spec.raw(r.row(i).data(), c.row(j).data(), d);
    }
    return g;
}

/// Median of pairwise Euclidean distances. Exact when the number of pairs is
/// at most `max_pairs`; otherwise `max_pairs` random pairs drawn with `seed`.
inline double median_heuristic(const Matrix& samples, std::size_t max_pairs = 1'000'000,
                               std::uint64_t seed = 0) {
    const Eigen::Index n = samples.rows();
    if (n < 2) throw ConfigError("median heuristic needs at least 2 samples");
    if (!samples.allFinite()) throw DataError("non-finite entries in samples");
    const detail::RowMatrix s = samples;
    auto dist = [&](Eigen::Index i, Eigen::Index j) {
        return (s.row(i) - s.row(j)).norm();
    };
    std::vector<double> d;
    const auto total = static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2;
    if (total <= max_pairs) {
        d.reserve(total);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) d.push_back(dist(i, j));
        }
    } else {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
        d.reserve(max_pairs);
        while (d.size() < max_pairs) {
            const Eigen::Index i = pick(rng);
            const Eigen::Index j = pick(rng);
            if (i != j) d.push_back(dist(i, j));
        }
    }
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
    double med = d[mid];
    if (d.size() % 2 == 0) {
        const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
        med = 0.5 * (med + lower);
    }
    if (!(med > 0.0)) throw NumericalError("degenerate sample, zero median distance");
    return med;
}

/// Sample covariance (N - 1 denominator) of the rows of `samples`.
inline Matrix sample_covariance(const Matrix& samples) {
    if (samples.rows() < 2) throw ConfigError("covariance needs at least 2 samples");
    const Matrix centered = samples.rowwise() - samples.colwise().mean();
    Matrix cov = (centered.adjoint() * centered) / static_cast<double>(samples.rows() - 1);
    return 0.5 * (cov + cov.transpose());
}

/// sqrt(trace(sample covariance)); the sample standard deviation for scalar data.
inline double spread_heuristic(const Matrix& samples) {
    if (samples.rows() < 2) throw ConfigError("spread heuristic needs at least 2 samples");
    if (!samples.allFinite()) throw DataError("non-finite entries in samples");
    const double tr = sample_covariance(samples).trace();
    if (!(tr > 0.0)) throw NumericalError("degenerate sample, zero spread");
    return std::sqrt(tr);
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix; eigenvalues below
/// `tol` times the largest are treated as zero.
inline Matrix psd_pseudo_inverse(const Matrix& m, double tol = 1e-10) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    const Vector& ev = es.eigenvalues();
    const double cutoff = tol * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    Vector inv(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i) inv(i) = ev(i) > cutoff ? 1.0 / ev(i) : 0.0;
    Matrix p = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
    return 0.5 * (p + p.transpose());
}

/// Covariance metric of the inputs with its truncated pseudo-inverse.
inline MahalanobisMetric mahalanobis_metric(const Matrix& samples, double tol = 1e-10) {
    if (!samples.allFinite()) throw DataError("non-finite entries in samples");
    Matrix cov = sample_covariance(samples);
    Matrix pinv = psd_pseudo_inverse(cov, tol);
    return {std::move(cov), std::move(pinv)};
}

/// Linear map under which Euclidean distance equals the Mahalanobis distance
/// of `metric`: rows are multiplied by V D^{+1/2}.
inline Matrix whiten(const Matrix& samples, const MahalanobisMetric& metric) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(metric.pinv);
    const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return samples * es.eigenvectors() * root.asDiagonal();
}

/// Median-heuristic bandwidth for the given family; for Mahalanobis kernels
/// distances are measured in the whitened coordinates.
inline double default_bandwidth(KernelFamily family, const Matrix& samples, const MahalanobisMetric* metric,
                                std::uint64_t seed = 0) {
    if (family == KernelFamily::Mahalanobis) {
        if (!metric) throw ConfigError("Mahalanobis bandwidth needs a metric");
        return median_heuristic(whiten(samples, *metric), 1'000'000, seed);
    }
    return median_heuristic(samples, 1'000'000, seed);
}

/// Builds an input kernel of `family` for the given subset samples. Mahalanobis
/// kernels take their metric from the samples.
inline KernelSpec make_input_kernel(KernelFamily family, const Matrix& samples, double bandwidth) {
    switch (family) {
        case KernelFamily::GaussianRBF: return KernelSpec::gaussian(bandwidth);
        case KernelFamily::Linear: return KernelSpec::linear();
        case KernelFamily::Mahalanobis: return KernelSpec::mahalanobis(bandwidth, mahalanobis_metric(samples));
    }
    throw ConfigError("unknown kernel family");
}

}  // namespace kgsa
