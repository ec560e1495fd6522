#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "kgsa/dataset.hpp"
#include "kgsa/error.hpp"
#include "kgsa/kernels.hpp"
#include "kgsa/subset.hpp"

namespace kgsa {

/// U-statistic estimates of E[k(y,y)] (c_y) and E[k(y,y')] (c_yy).
struct NormalizationStats {
    double c_y = 0.0;
    double c_yy = 0.0;

    [[nodiscard]] double denominator() const { return c_y - c_yy; }
};

/// c_y is the mean of the diagonal of K, c_yy the mean of its strictly
/// off-diagonal entries.
inline NormalizationStats normalization_stats(const Matrix& gram) {
    if (gram.rows() != gram.cols()) throw ConfigError("normalization needs a square Gram matrix");
    const auto n = static_cast<double>(gram.rows());
    if (gram.rows() < 2) throw ConfigError("normalization needs at least 2 samples");
    const double trace = gram.trace();
    const double total = gram.sum();
    return {trace / n, (total - trace) / (n * (n - 1.0))};
}

/// Unbiased estimate of MMD^2 between the row distributions of `a` and `b`.
inline double mmd2_unbiased(const Matrix& a, const Matrix& b, const KernelSpec& kernel) {
    if (a.rows() < 2 || b.rows() < 2) throw ConfigError("MMD needs at least 2 samples per set");
    if (a.cols() != b.cols()) throw ConfigError("MMD sample sets differ in dimension");
    const Matrix kaa = gram_matrix(kernel, a);
    const Matrix kbb = gram_matrix(kernel, b);
    const Matrix kab = cross_gram(kernel, a, b);
    const auto m = static_cast<double>(a.rows());
    const auto n = static_cast<double>(b.rows());
    const double within_a = (kaa.sum() - kaa.trace()) / (m * (m - 1.0));
    const double within_b = (kbb.sum() - kbb.trace()) / (n * (n - 1.0));
    return within_a + within_b - 2.0 * kab.sum() / (m * n);
}

enum class Estimator { CmeNorm, CmeDist, NnFull, NnSubsample, Analytic };

inline std::string to_string(Estimator e) {
    switch (e) {
        case Estimator::CmeNorm: return "CME-N";
        case Estimator::CmeDist: return "CME-D";
        case Estimator::NnFull: return "NN-F";
        case Estimator::NnSubsample: return "NN-S";
        case Estimator::Analytic: return "analytic";
    }
    return "?";
}

inline Estimator parse_estimator(const std::string& s) {
    for (auto e : {Estimator::CmeNorm, Estimator::CmeDist, Estimator::NnFull, Estimator::NnSubsample,
                   Estimator::Analytic}) {
        if (s == to_string(e)) return e;
    }
    throw ConfigError("unknown estimator '" + s + "' (expected CME-N, CME-D, NN-F, NN-S or analytic)");
}

/// One estimated index. Raw values are never clamped here.
struct IndexEstimate {
    InputSubset subset;
    double value = 0.0;
    Estimator estimator = Estimator::CmeNorm;
    Eigen::Index sample_size = 0;
    std::uint64_t seed = 0;
};

/// Fitted conditional mean embedding x_R -> Gamma(x_R)^T W Phi with
/// W = (L + lambda I)^{-1}, kept as a Cholesky factor.
class CmeModel {
public:
    [[nodiscard]] InputSubset subset() const { return subset_; }
    [[nodiscard]] const KernelSpec& input_kernel() const { return input_kernel_; }
    [[nodiscard]] const KernelSpec& output_kernel() const { return output_kernel_; }
    [[nodiscard]] double lambda() const { return lambda_; }
    /// Extra diagonal shift that was needed for a successful factorization.
    [[nodiscard]] double jitter() const { return jitter_; }
    [[nodiscard]] const Matrix& training_inputs() const { return x_; }
    [[nodiscard]] const Matrix& input_gram() const { return l_; }
    [[nodiscard]] const Matrix& output_gram() const { return k_; }
    [[nodiscard]] const NormalizationStats& stats() const { return stats_; }
    [[nodiscard]] Eigen::Index size() const { return x_.rows(); }

    /// W * rhs.
    [[nodiscard]] Matrix solve(const Matrix& rhs) const { return llt_.solve(rhs); }

    /// Explicit W; O(N^3), meant for diagnostics and tests.
    [[nodiscard]] Matrix weights() const { return llt_.solve(Matrix::Identity(size(), size())); }

    /// Column sums of K, i.e. 1^T K.
    [[nodiscard]] const Vector& output_gram_colsum() const { return k_colsum_; }
    [[nodiscard]] double output_gram_total() const { return k_total_; }

    /// Per-coordinate training range, used to flag extrapolated ISF queries.
    [[nodiscard]] bool inside_training_box(const Vector& point) const {
        for (Eigen::Index k = 0; k < point.size(); ++k) {
            if (point(k) < lo_(k) || point(k) > hi_(k)) return false;
        }
        return true;
    }

    friend CmeModel fit_cme(const Matrix& x_subset, const Matrix& outputs, InputSubset subset,
                            const KernelSpec& input_kernel, const KernelSpec& output_kernel, double lambda);

private:
    CmeModel(const KernelSpec& in, const KernelSpec& out) : input_kernel_(in), output_kernel_(out) {}

    InputSubset subset_;
    KernelSpec input_kernel_;
    KernelSpec output_kernel_;
    double lambda_ = 0.0;
    double jitter_ = 0.0;
    Matrix x_;
    Matrix l_;
    Matrix k_;
    Vector k_colsum_;
    double k_total_ = 0.0;
    Vector lo_;
    Vector hi_;
    NormalizationStats stats_;
    Eigen::LLT<Matrix> llt_;
};

namespace detail {

/// Cholesky of (l + lambda I), escalating an extra diagonal jitter from 1e-10
/// to 1e-6 (relative to the mean diagonal of l) before giving up.
inline std::pair<Eigen::LLT<Matrix>, double> regularized_cholesky(const Matrix& l, double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("regularizer lambda must be positive and finite");
    }
    const double scale = std::max(1.0, l.diagonal().cwiseAbs().mean());
    Matrix a = l;
    a.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success) return {std::move(llt), 0.0};
    for (double j = 1e-10; j <= 1e-6 * (1.0 + 1e-9); j *= 10.0) {
        Matrix b = a;
        b.diagonal().array() += j * scale;
        llt.compute(b);
        if (llt.info() == Eigen::Success) return {std::move(llt), j * scale};
    }
    throw NumericalError("Cholesky factorization of (L + lambda I) failed after jitter escalation");
}

}  // namespace detail

/// Fits the embedding on pre-selected subset columns. `outputs` are the
/// training outputs Y.
inline CmeModel fit_cme(const Matrix& x_subset, const Matrix& outputs, InputSubset subset,
                        const KernelSpec& input_kernel, const KernelSpec& output_kernel, double lambda) {
    if (subset.empty()) throw ConfigError("CME needs a non-empty input subset");
    if (x_subset.rows() != outputs.rows()) throw DataError("input and output row counts differ");
    if (x_subset.rows() < 2) throw DataError("CME needs at least 2 samples");
    CmeModel m(input_kernel, output_kernel);
    m.subset_ = subset;
    m.lambda_ = lambda;
    m.x_ = x_subset;
    m.l_ = gram_matrix(input_kernel, x_subset);
    m.k_ = gram_matrix(output_kernel, outputs);
    m.stats_ = normalization_stats(m.k_);
    if (!(m.stats_.denominator() > 1e-12)) {
        throw NumericalError("degenerate output normalization (c_y - c_yy = " +
                             std::to_string(m.stats_.denominator()) + ")");
    }
    auto [llt, jitter] = detail::regularized_cholesky(m.l_, lambda);
    m.llt_ = std::move(llt);
    m.jitter_ = jitter;
    m.k_colsum_ = m.k_.colwise().sum().transpose();
    m.k_total_ = m.k_colsum_.sum();
    m.lo_ = x_subset.colwise().minCoeff().transpose();
    m.hi_ = x_subset.colwise().maxCoeff().transpose();
    return m;
}

/// Fits mu_{Y|X_R} on a data set.
inline CmeModel fit_cme(const DataSet& data, InputSubset subset, const KernelSpec& input_kernel,
                        const KernelSpec& output_kernel, double lambda) {
    return fit_cme(data.select(subset), data.outputs(), subset, input_kernel, output_kernel, lambda);
}

/// Both inner statistical functions evaluated at a batch of query points.
struct IsfValues {
    Vector norm;  ///< gamma^N
    Vector dist;  ///< gamma^D
};

/// ISFs from the input feature columns Gamma (N x Q), one column per query.
/// Numerators: a^T K a - c_yy and 1^T K 1 / N^2 + a^T K a - (2/N) 1^T K a,
/// with a = W Gamma.
inline IsfValues isf_from_features(const CmeModel& model, const Matrix& gamma) {
    if (gamma.rows() != model.size()) throw ConfigError("feature rows do not match training size");
    const Matrix a = model.solve(gamma);
    const Matrix ka = model.output_gram() * a;
    const Vector quad = a.cwiseProduct(ka).colwise().sum().transpose();
    const Vector cross = (model.output_gram_colsum().transpose() * a).transpose();
    const auto n = static_cast<double>(model.size());
    const auto& st = model.stats();
    const double den = st.denominator();
    IsfValues out;
    out.norm = (quad.array() - st.c_yy) / den;
    out.dist = ((model.output_gram_total() / (n * n)) + quad.array() - (2.0 / n) * cross.array()) / den;
    return out;
}

/// ISFs at arbitrary query points (rows of `queries`, |R| columns each).
inline IsfValues isf_values(const CmeModel& model, const Matrix& queries) {
    if (queries.cols() != model.training_inputs().cols()) {
        throw ConfigError("query dimension " + std::to_string(queries.cols()) + " does not match subset size " +
                          std::to_string(model.training_inputs().cols()));
    }
    return isf_from_features(model, cross_gram(model.input_kernel(), model.training_inputs(), queries));
}

/// gamma^N at a single query point.
inline double isf_norm(const CmeModel& model, const Vector& x) {
    return isf_values(model, x.transpose()).norm(0);
}

/// gamma^D at a single query point.
inline double isf_dist(const CmeModel& model, const Vector& x) {
    return isf_values(model, x.transpose()).dist(0);
}

struct IsfPoint {
    Vector point;
    double norm = 0.0;
    double dist = 0.0;
    bool extrapolated = false;  ///< outside the per-coordinate training range
};

/// Both ISFs along a grid, in grid order.
inline std::vector<IsfPoint> isf_profile(const CmeModel& model, const Matrix& grid) {
    if (grid.rows() == 0) throw ConfigError("ISF grid is empty");
    const IsfValues v = isf_values(model, grid);
    std::vector<IsfPoint> out;
    out.reserve(static_cast<std::size_t>(grid.rows()));
    for (Eigen::Index i = 0; i < grid.rows(); ++i) {
        Vector p = grid.row(i).transpose();
        const bool outside = !model.inside_training_box(p);
        out.push_back({std::move(p), v.norm(i), v.dist(i), outside});
    }
    return out;
}

/// Training-point ISFs; Gamma(x^(i)) is column i of L.
inline IsfValues training_isf(const CmeModel& model) { return isf_from_features(model, model.input_gram()); }

/// Norm- and distance-based estimates from one pass over the training inputs.
struct CmeBetas {
    double norm = 0.0;
    double dist = 0.0;
};

inline CmeBetas beta_cme_pair(const CmeModel& model) {
    const IsfValues v = training_isf(model);
    return {v.norm.mean(), v.dist.mean()};
}

/// Average of the chosen ISF over the training inputs.
inline IndexEstimate beta_cme(const CmeModel& model, Estimator variant) {
    if (variant != Estimator::CmeNorm && variant != Estimator::CmeDist) {
        throw ConfigError("beta_cme variant must be CME-N or CME-D");
    }
    const IsfValues v = training_isf(model);
    const double value = variant == Estimator::CmeNorm ? v.norm.mean() : v.dist.mean();
    return {model.subset(), value, variant, model.size(), 0};
}

}  // namespace kgsa
