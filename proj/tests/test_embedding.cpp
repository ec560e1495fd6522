#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "kgsa/embedding.hpp"

using namespace kgsa;
using Catch::Matchers::WithinAbs;

namespace {

Matrix normals(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = g(rng);
    return m;
}

Matrix column(std::initializer_list<double> v) {
    Matrix m(static_cast<Eigen::Index>(v.size()), 1);
    Eigen::Index i = 0;
    for (double x : v) m(i++, 0) = x;
    return m;
}

}  // namespace

TEST_CASE("normalization statistics", "[embedding]") {
    const auto a = normalization_stats(gram_matrix(KernelSpec::gaussian(1.0), column({0.4, 0.4})));
    CHECK(a.c_y == 1.0);
    CHECK(a.c_yy == 1.0);
    const auto b = normalization_stats(gram_matrix(KernelSpec::linear(), column({1.0, -1.0})));
    CHECK(b.c_y == 1.0);
    CHECK(b.c_yy == -1.0);

    const Matrix y = normals(2000, 1, 3);
    const auto c = normalization_stats(gram_matrix(KernelSpec::linear(), y));
    double diag = 0.0;
    double off = 0.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        for (Eigen::Index j = 0; j < y.rows(); ++j) (i == j ? diag : off) += y(i, 0) * y(j, 0);
    }
    CHECK_THAT(c.c_y, WithinAbs(diag / 2000.0, 1e-12));
    CHECK_THAT(c.c_yy, WithinAbs(off / (2000.0 * 1999.0), 1e-12));
    CHECK_THAT(c.c_y, WithinAbs(1.0, 0.1));
    CHECK_THAT(c.c_yy, WithinAbs(0.0, 0.01));

    const auto rbf = normalization_stats(gram_matrix(KernelSpec::gaussian(0.7), y.topRows(50)));
    CHECK(rbf.c_y == 1.0);
    CHECK_THROWS_AS(normalization_stats(Matrix::Ones(1, 1)), ConfigError);
}

TEST_CASE("unbiased MMD", "[embedding]") {
    CHECK_THAT(mmd2_unbiased(column({0, 0}), column({1, 1}), KernelSpec::linear()), WithinAbs(1.0, 1e-15));
    const double c = 1.5;
    const double sigma = 0.8;
    CHECK_THAT(mmd2_unbiased(column({0, 0, 0}), column({c, c}), KernelSpec::gaussian(sigma)),
               WithinAbs(2.0 * (1.0 - std::exp(-c * c / (2 * sigma * sigma))), 1e-14));
    const Matrix s = normals(30, 2, 1);
    CHECK(mmd2_unbiased(s, s, KernelSpec::gaussian(1.0)) <= 0.0);
    CHECK_THROWS_AS(mmd2_unbiased(column({0}), column({1, 2}), KernelSpec::linear()), ConfigError);
}

TEST_CASE("MMD null calibration", "[embedding]") {
    const int reps = 200;
    std::vector<double> v;
    for (int r = 0; r < reps; ++r) {
        v.push_back(mmd2_unbiased(normals(50, 1, 1000 + 2 * r), normals(50, 1, 1001 + 2 * r), KernelSpec::gaussian(1.0)));
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= reps;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double se = std::sqrt(var / (reps - 1) / reps);
    CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("two-point CME matches hand algebra", "[embedding]") {
    const Matrix x = column({0.0, 1.0});
    const Matrix y = column({0.0, 2.0});
    const double lambda = 0.3;
    const auto model = fit_cme(x, y, InputSubset::from_labels({1}), KernelSpec::gaussian(1.0), KernelSpec::gaussian(2.0),
                               lambda);
    const double e = std::exp(-0.5);  // input kernel between the two points
    const double q = std::exp(-0.5);  // output kernel between 0 and 2 at sigma 2
    const double det = (1 + lambda) * (1 + lambda) - e * e;
    const Matrix w = model.weights();
    CHECK_THAT(w(0, 0), WithinAbs((1 + lambda) / det, 1e-12));
    CHECK_THAT(w(0, 1), WithinAbs(-e / det, 1e-12));
    CHECK_THAT(w(1, 0), WithinAbs(w(0, 1), 1e-15));

    const double xq = 0.37;
    const double g0 = std::exp(-xq * xq / 2);
    const double g1 = std::exp(-(1 - xq) * (1 - xq) / 2);
    const double a0 = ((1 + lambda) * g0 - e * g1) / det;
    const double a1 = (-e * g0 + (1 + lambda) * g1) / det;
    const double quad = a0 * a0 + 2 * q * a0 * a1 + a1 * a1;
    const double den = 1 - q;
    const double norm = (quad - q) / den;
    const double dist = ((2 + 2 * q) / 4 + quad - (1 + q) * (a0 + a1)) / den;
    CHECK_THAT(isf_norm(model, Vector{{xq}}), WithinAbs(norm, 1e-12));
    CHECK_THAT(isf_dist(model, Vector{{xq}}), WithinAbs(dist, 1e-12));
}

TEST_CASE("diagonal two-point solve", "[embedding]") {
    // Far-apart inputs make L the identity to double precision.
    const auto model = fit_cme(column({0.0, 100.0}), column({0.0, 1.0}), InputSubset::from_labels({1}),
                               KernelSpec::gaussian(1.0), KernelSpec::linear(), 1.0);
    CHECK(model.weights().isApprox(0.5 * Matrix::Identity(2, 2), 1e-15));
}

TEST_CASE("CME weights invert the regularized Gram matrix", "[embedding]") {
    const Matrix x = normals(60, 2, 21);
    const Matrix y = x.col(0) + 0.3 * normals(60, 1, 22);
    const auto model = fit_cme(x, y, InputSubset::from_labels({1, 2}), KernelSpec::gaussian(1.0), KernelSpec::gaussian(1.0), 1e-3);
    const Matrix w = model.weights();
    Matrix a = model.input_gram();
    a.diagonal().array() += model.lambda();
    CHECK((a * w - Matrix::Identity(60, 60)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((w - w.transpose()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK_THROWS_AS(fit_cme(x, y, InputSubset::from_labels({1}), KernelSpec::gaussian(1.0), KernelSpec::linear(), 0.0),
                    ConfigError);
}

TEST_CASE("beta equals the mean ISF over training inputs", "[embedding]") {
    const Matrix x = normals(80, 1, 5);
    const Matrix y = 2.0 * x + 0.5 * normals(80, 1, 6);
    const auto model =
        fit_cme(x, y, InputSubset::from_labels({1}), KernelSpec::gaussian(0.8), KernelSpec::gaussian(2.0), 1e-2);
    const auto profile = isf_profile(model, x);
    double n = 0.0;
    double d = 0.0;
    for (const auto& p : profile) {
        n += p.norm;
        d += p.dist;
        CHECK(p.dist >= -1e-10);
        CHECK_FALSE(p.extrapolated);
    }
    CHECK_THAT(beta_cme(model, Estimator::CmeNorm).value, WithinAbs(n / 80.0, 1e-12));
    CHECK_THAT(beta_cme(model, Estimator::CmeDist).value, WithinAbs(d / 80.0, 1e-12));
    CHECK(isf_profile(model, Matrix::Constant(1, 1, 10.0))[0].extrapolated);

    const auto single = isf_profile(model, Matrix::Constant(1, 1, 0.25));
    REQUIRE(single.size() == 1);
    CHECK(single[0].norm == isf_norm(model, Vector{{0.25}}));
    CHECK(single[0].dist == isf_dist(model, Vector{{0.25}}));
    CHECK_THROWS_AS(isf_norm(model, Vector{{0.1, 0.2}}), ConfigError);
    CHECK_THROWS_AS(beta_cme(model, Estimator::NnFull), ConfigError);
}

TEST_CASE("distance ISF stays non-negative", "[embedding]") {
    const Matrix x = normals(100, 2, 9);
    const Matrix y = x.col(0).array().sin().matrix() + 0.1 * normals(100, 1, 10);
    const auto model = fit_cme(x, y, InputSubset::from_labels({1, 2}), KernelSpec::gaussian(0.5), KernelSpec::gaussian(0.4), 1e-4);
    const IsfValues v = isf_values(model, 3.0 * normals(200, 2, 11));
    CHECK(v.dist.minCoeff() >= -1e-10);
    CHECK(training_isf(model).dist.minCoeff() >= -1e-10);
}

TEST_CASE("degenerate outputs are rejected", "[embedding]") {
    const Matrix x = normals(10, 1, 2);
    CHECK_THROWS_AS(fit_cme(x, Matrix::Constant(10, 1, 3.0), InputSubset::from_labels({1}), KernelSpec::gaussian(1.0),
                            KernelSpec::gaussian(1.0), 1e-3),
                    NumericalError);
}

TEST_CASE("estimator names round-trip", "[embedding]") {
    for (auto e : {Estimator::CmeNorm, Estimator::CmeDist, Estimator::NnFull, Estimator::NnSubsample, Estimator::Analytic}) {
        CHECK(parse_estimator(to_string(e)) == e);
    }
    CHECK_THROWS_AS(parse_estimator("CME"), ConfigError);
}
