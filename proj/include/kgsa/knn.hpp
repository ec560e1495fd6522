#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "kgsa/dataset.hpp"
#include "kgsa/embedding.hpp"
#include "kgsa/kernels.hpp"

namespace kgsa {

/// Exact Euclidean neighbor structure over subset-projected input rows.
/// Row ids are 0-based. Rank 1 is always the query row itself; the remaining
/// rows are ordered by (distance, row id).
class NeighborIndex {
public:
    explicit NeighborIndex(Matrix points) : pts_(std::move(points)) {
        if (pts_.rows() < 2) throw ConfigError("neighbor index needs at least 2 rows");
        if (!pts_.allFinite()) throw DataError("non-finite entries in neighbor index");
        const Eigen::Index n = pts_.rows();
        second_.resize(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            Eigen::Index arg = -1;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                const double d = dist2(i, j);
                if (d < best) {  // strict: keeps the smallest id among ties
                    best = d;
                    arg = j;
                }
            }
            second_[static_cast<std::size_t>(i)] = arg;
        }
    }

    NeighborIndex(const DataSet& data, InputSubset subset) : NeighborIndex(data.select(subset)) {}

    [[nodiscard]] Eigen::Index size() const { return pts_.rows(); }

    /// Squared Euclidean distance between rows i and j.
    [[nodiscard]] double dist2(Eigen::Index i, Eigen::Index j) const {
        return (pts_.row(i) - pts_.row(j)).squaredNorm();
    }

    /// Nearest row other than `i` (rank 2).
    [[nodiscard]] Eigen::Index second(Eigen::Index i) const { return second_.at(static_cast<std::size_t>(i)); }

    /// The row of rank `m` (1-based) for query row `i`.
    [[nodiscard]] Eigen::Index nearest(Eigen::Index i, Eigen::Index m) const {
        const Eigen::Index n = size();
        if (i < 0 || i >= n) throw ConfigError("row id out of range");
        if (m < 1 || m > n) throw ConfigError("neighbor rank out of range");
        if (m == 1) return i;
        if (m == 2) return second(i);
        std::vector<Eigen::Index> order;
        order.reserve(static_cast<std::size_t>(n - 1));
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) order.push_back(j);
        }
        std::vector<double> d(static_cast<std::size_t>(n));
        for (Eigen::Index j = 0; j < n; ++j) d[static_cast<std::size_t>(j)] = dist2(i, j);
        const auto k = static_cast<std::ptrdiff_t>(m - 2);
        std::nth_element(order.begin(), order.begin() + k, order.end(), [&](Eigen::Index a, Eigen::Index b) {
            const double da = d[static_cast<std::size_t>(a)];
            const double db = d[static_cast<std::size_t>(b)];
            return da < db || (da == db && a < b);
        });
        return order[static_cast<std::size_t>(k)];
    }

private:
    Matrix pts_;
    std::vector<Eigen::Index> second_;
};

inline Eigen::Index nearest_neighbor(const NeighborIndex& index, Eigen::Index i, Eigen::Index m) {
    return index.nearest(i, m);
}

namespace detail {

inline double nn_normalize(double c, const NormalizationStats& st) {
    if (!(st.denominator() > 1e-12)) {
        throw NumericalError("degenerate output normalization (c_y - c_yy = " + std::to_string(st.denominator()) + ")");
    }
    return (c - st.c_yy) / st.denominator();
}

}  // namespace detail

/// Full-sample nearest-neighbor estimate: average of k(y_i, y_{nn(i)}).
inline IndexEstimate beta_nn_full(const DataSet& data, InputSubset subset, const KernelSpec& output_kernel) {
    const NeighborIndex index(data, subset);
    const Matrix k = gram_matrix(output_kernel, data.outputs());
    const NormalizationStats st = normalization_stats(k);
    double c = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i) c += k(i, index.second(i));
    c /= static_cast<double>(data.size());
    return {subset, detail::nn_normalize(c, st), Estimator::NnFull, data.size(), 0};
}

/// Sub-sampled nearest-neighbor estimate over `n_a` rows drawn uniformly with
/// replacement.
inline IndexEstimate beta_nn_subsample(const DataSet& data, InputSubset subset, const KernelSpec& output_kernel,
                                       Eigen::Index n_a, std::uint64_t seed) {
    if (n_a < 1 || n_a > data.size()) throw ConfigError("sub-sample size must lie in 1..N");
    const NeighborIndex index(data, subset);
    const Matrix k = gram_matrix(output_kernel, data.outputs());
    const NormalizationStats st = normalization_stats(k);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, data.size() - 1);
    double c = 0.0;
    for (Eigen::Index r = 0; r < n_a; ++r) {
        const Eigen::Index s = pick(rng);
        c += k(s, index.second(s));
    }
    c /= static_cast<double>(n_a);
    return {subset, detail::nn_normalize(c, st), Estimator::NnSubsample, data.size(), seed};
}

}  // namespace kgsa
