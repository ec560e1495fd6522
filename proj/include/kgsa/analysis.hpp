#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kgsa/benchmarks.hpp"
#include "kgsa/dataset.hpp"
#include "kgsa/decomposition.hpp"
#include "kgsa/embedding.hpp"
#include "kgsa/error.hpp"
#include "kgsa/io.hpp"
#include "kgsa/kernels.hpp"
#include "kgsa/knn.hpp"
#include "kgsa/model_selection.hpp"
#include "kgsa/report.hpp"
#include "kgsa/subset.hpp"

namespace kgsa {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of the child stream `b` under parent seed `a`.
inline std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

/// Seed of replicate r. Benchmark data for replicate r is drawn with it.
inline std::uint64_t replicate_seed(std::uint64_t master, int r) {
    return derive_seed(master, static_cast<std::uint64_t>(r));
}

enum class BandwidthRule { Explicit, Median, Spread };

inline std::string to_string(BandwidthRule r) {
    switch (r) {
        case BandwidthRule::Explicit: return "explicit";
        case BandwidthRule::Median: return "median";
        case BandwidthRule::Spread: return "spread";
    }
    return "?";
}

inline BandwidthRule parse_bandwidth_rule(const std::string& s) {
    for (auto r : {BandwidthRule::Explicit, BandwidthRule::Median, BandwidthRule::Spread}) {
        if (to_string(r) == s) return r;
    }
    throw ConfigError("unknown bandwidth rule '" + s + "' (expected explicit, median or spread)");
}

inline KernelFamily parse_kernel_family(const std::string& s) {
    for (auto f : {KernelFamily::GaussianRBF, KernelFamily::Linear, KernelFamily::Mahalanobis}) {
        if (to_string(f) == s) return f;
    }
    throw ConfigError("unknown kernel '" + s + "' (expected rbf, linear or mahalanobis)");
}

/// ISF grid over one subset. Empty bounds default to the 1% and 99% sample
/// quantiles of each coordinate in the first replicate.
struct IsfRequest {
    InputSubset subset;
    std::vector<double> lo;
    std::vector<double> hi;
    int points = 41;  ///< per coordinate
};

struct AnalysisConfig {
    // data source: exactly one of data_path / benchmark
    std::string data_path;
    std::optional<Benchmark> benchmark;
    Eigen::Index n = 1000;
    std::uint64_t seed = 0;

    KernelFamily output_kernel = KernelFamily::GaussianRBF;
    BandwidthRule bandwidth_rule = BandwidthRule::Spread;
    double output_bandwidth = std::numeric_limits<double>::quiet_NaN();
    KernelFamily input_kernel = KernelFamily::GaussianRBF;
    double input_bandwidth = std::numeric_limits<double>::quiet_NaN();  ///< NaN: median heuristic
    Estimator estimator = Estimator::CmeNorm;
    Eigen::Index nn_subsample = 0;  ///< NN-S draws; 0 means N

    std::vector<InputSubset> subsets;
    int order = 0;          ///< also estimate every subset of the universe up to this size
    InputSubset universe;   ///< empty: all inputs
    bool ols = false;
    bool shapley = false;
    bool anova = false;
    bool assume_independent = false;
    std::vector<IsfRequest> isf;
    double tie_tolerance = 1e-9;

    bool tune = true;
    double lambda = 1e-3;  ///< used when tune is off
    CvConfig cv;
    bool reuse_hyperparameters = false;  ///< tune on replicate 0 only

    int replicates = 1;
    int threads = 1;
    bool clamp = false;

    void validate() const {
        if (data_path.empty() == !benchmark.has_value()) {
            throw ConfigError("exactly one data source (data file or benchmark) is required");
        }
        if (benchmark && n < 2) throw ConfigError("benchmark sample size must be at least 2");
        if (replicates < 1) throw ConfigError("replicates must be at least 1");
        if (threads < 1) throw ConfigError("threads must be at least 1");
        if (order < 0) throw ConfigError("order must be non-negative");
        if (anova && !assume_independent) {
            throw ConfigError("ANOVA effects are only valid for independent inputs; pass the independence attestation");
        }
        if (output_kernel == KernelFamily::Mahalanobis) throw ConfigError("output kernel must be rbf or linear");
        if (output_kernel == KernelFamily::GaussianRBF && bandwidth_rule == BandwidthRule::Explicit &&
            !(std::isfinite(output_bandwidth) && output_bandwidth > 0.0)) {
            throw ConfigError("explicit output bandwidth must be positive and finite");
        }
        if (!std::isnan(input_bandwidth) && !(std::isfinite(input_bandwidth) && input_bandwidth > 0.0)) {
            throw ConfigError("input bandwidth must be positive and finite");
        }
        if (!tune && !(std::isfinite(lambda) && lambda > 0.0)) throw ConfigError("lambda must be positive and finite");
        if (nn_subsample < 0) throw ConfigError("NN sub-sample size must be non-negative");
        if (!(tie_tolerance >= 0.0)) throw ConfigError("tie tolerance must be non-negative");
        if (estimator == Estimator::Analytic &&
            !(benchmark == Benchmark::Example1 || benchmark == Benchmark::Example2)) {
            throw ConfigError("the analytic estimator needs the example1 or example2 benchmark");
        }
        for (auto s : subsets) {
            if (s.empty()) throw ConfigError("requested subsets must be non-empty");
        }
        for (const auto& r : isf) {
            if (r.subset.empty()) throw ConfigError("ISF subset must be non-empty");
            if (r.points < 2) throw ConfigError("ISF grid needs at least 2 points per coordinate");
            const auto d = static_cast<std::size_t>(r.subset.size());
            if ((!r.lo.empty() || !r.hi.empty()) && (r.lo.size() != d || r.hi.size() != d)) {
                throw ConfigError("ISF bounds for " + r.subset.to_string() + " need one value per coordinate");
            }
            for (std::size_t k = 0; k < r.lo.size(); ++k) {
                if (!(r.lo[k] < r.hi[k])) throw ConfigError("ISF bounds need lo < hi");
            }
            if (std::pow(static_cast<double>(r.points), static_cast<double>(d)) > 1e6) {
                throw ConfigError("ISF grid for " + r.subset.to_string() + " exceeds 10^6 points");
            }
        }
    }
};

namespace detail {

inline nlohmann::json subsets_json(const std::vector<InputSubset>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (auto s : v) a.push_back(s.labels());
    return a;
}

inline nlohmann::json optional_number(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace detail

/// Effective configuration as JSON. The thread count is left out so reports
/// do not depend on it.
inline nlohmann::json config_to_json(const AnalysisConfig& c) {
    using nlohmann::json;
    json isf = json::array();
    for (const auto& r : c.isf) {
        isf.push_back({{"subset", r.subset.labels()}, {"lo", r.lo}, {"hi", r.hi}, {"points", r.points}});
    }
    return {{"data", c.data_path.empty() ? json(nullptr) : json(c.data_path)},
            {"benchmark", c.benchmark ? json(to_string(*c.benchmark)) : json(nullptr)},
            {"n", c.n},
            {"seed", c.seed},
            {"output_kernel", to_string(c.output_kernel)},
            {"bandwidth_rule", to_string(c.bandwidth_rule)},
            {"bandwidth", detail::optional_number(c.output_bandwidth)},
            {"input_kernel", to_string(c.input_kernel)},
            {"input_bandwidth", detail::optional_number(c.input_bandwidth)},
            {"estimator", to_string(c.estimator)},
            {"nn_subsample", c.nn_subsample},
            {"subsets", detail::subsets_json(c.subsets)},
            {"order", c.order},
            {"universe", c.universe.labels()},
            {"ols", c.ols},
            {"shapley", c.shapley},
            {"anova", c.anova},
            {"assume_independent", c.assume_independent},
            {"isf", isf},
            {"tie_tolerance", c.tie_tolerance},
            {"tune", c.tune},
            {"lambda", c.lambda},
            {"cv",
             {{"folds", c.cv.folds},
              {"lambda_min", c.cv.lambda_min},
              {"lambda_max", c.cv.lambda_max},
              {"initial_lambda", c.cv.initial_lambda},
              {"bandwidth_min_factor", c.cv.bandwidth_min_factor},
              {"bandwidth_max_factor", c.cv.bandwidth_max_factor},
              {"tune_bandwidth", c.cv.tune_bandwidth},
              {"max_evaluations", c.cv.max_evaluations},
              {"log_tolerance", c.cv.log_tolerance}}},
            {"reuse_hyperparameters", c.reuse_hyperparameters},
            {"replicates", c.replicates},
            {"clamp", c.clamp}};
}

/// Overrides fields of `base` with the keys present in `j`. Unknown keys are
/// rejected.
inline AnalysisConfig config_from_json(const nlohmann::json& j, AnalysisConfig base = {}) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    auto labels = [](const nlohmann::json& v) { return InputSubset::from_labels(v.get<std::vector<int>>()); };
    auto number = [](const nlohmann::json& v) {
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    };
    AnalysisConfig c = std::move(base);
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "data") c.data_path = v.is_null() ? std::string() : v.get<std::string>();
            else if (key == "benchmark") {
                c.benchmark = v.is_null() ? std::nullopt : std::optional(parse_benchmark(v.get<std::string>()));
            } else if (key == "n") c.n = v.get<Eigen::Index>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "output_kernel") c.output_kernel = parse_kernel_family(v.get<std::string>());
            else if (key == "bandwidth_rule") c.bandwidth_rule = parse_bandwidth_rule(v.get<std::string>());
            else if (key == "bandwidth") c.output_bandwidth = number(v);
            else if (key == "input_kernel") c.input_kernel = parse_kernel_family(v.get<std::string>());
            else if (key == "input_bandwidth") c.input_bandwidth = number(v);
            else if (key == "estimator") c.estimator = parse_estimator(v.get<std::string>());
            else if (key == "nn_subsample") c.nn_subsample = v.get<Eigen::Index>();
            else if (key == "subsets") {
                c.subsets.clear();
                for (const auto& s : v) c.subsets.push_back(labels(s));
            } else if (key == "order") c.order = v.get<int>();
            else if (key == "universe") c.universe = labels(v);
            else if (key == "ols") c.ols = v.get<bool>();
            else if (key == "shapley") c.shapley = v.get<bool>();
            else if (key == "anova") c.anova = v.get<bool>();
            else if (key == "assume_independent") c.assume_independent = v.get<bool>();
            else if (key == "isf") {
                c.isf.clear();
                for (const auto& r : v) {
                    IsfRequest q;
                    q.subset = labels(r.at("subset"));
                    if (r.contains("lo")) q.lo = r["lo"].get<std::vector<double>>();
                    if (r.contains("hi")) q.hi = r["hi"].get<std::vector<double>>();
                    if (r.contains("points")) q.points = r["points"].get<int>();
                    c.isf.push_back(std::move(q));
                }
            } else if (key == "tie_tolerance") c.tie_tolerance = v.get<double>();
            else if (key == "tune") c.tune = v.get<bool>();
            else if (key == "lambda") c.lambda = v.get<double>();
            else if (key == "cv") {
                for (const auto& [ck, cv] : v.items()) {
                    if (ck == "folds") c.cv.folds = cv.get<int>();
                    else if (ck == "lambda_min") c.cv.lambda_min = cv.get<double>();
                    else if (ck == "lambda_max") c.cv.lambda_max = cv.get<double>();
                    else if (ck == "initial_lambda") c.cv.initial_lambda = cv.get<double>();
                    else if (ck == "bandwidth_min_factor") c.cv.bandwidth_min_factor = cv.get<double>();
                    else if (ck == "bandwidth_max_factor") c.cv.bandwidth_max_factor = cv.get<double>();
                    else if (ck == "tune_bandwidth") c.cv.tune_bandwidth = cv.get<bool>();
                    else if (ck == "max_evaluations") c.cv.max_evaluations = cv.get<int>();
                    else if (ck == "log_tolerance") c.cv.log_tolerance = cv.get<double>();
                    else throw ConfigError("unknown cv setting '" + ck + "'");
                }
            } else if (key == "reuse_hyperparameters") c.reuse_hyperparameters = v.get<bool>();
            else if (key == "replicates") c.replicates = v.get<int>();
            else if (key == "threads") c.threads = v.get<int>();
            else if (key == "clamp") c.clamp = v.get<bool>();
            else throw ConfigError("unknown configuration key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad configuration value: ") + e.what());
    }
    return c;
}

namespace detail {

/// Runs body(0..count-1) on up to `threads` workers. Every task runs; the
/// exception of the lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t count, int threads, F&& body) {
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// Calls f(), prefixing any error message with `context` and keeping the
/// error category.
template <class F>
auto annotate(const std::string& context, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw ConfigError(context + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(context + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(context + ": " + e.what());
    } catch (const std::exception& e) {
        throw NumericalError(context + ": " + e.what());
    }
}

inline double sample_quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const std::size_t j = std::min(i + 1, v.size() - 1);
    return v[i] + (pos - static_cast<double>(i)) * (v[j] - v[i]);
}

/// Cartesian grid, first coordinate varying slowest.
inline Matrix isf_grid(const IsfRequest& req, const Matrix& x_subset) {
    const auto d = x_subset.cols();
    std::vector<std::vector<double>> axes(static_cast<std::size_t>(d));
    for (Eigen::Index k = 0; k < d; ++k) {
        double lo = 0.0, hi = 0.0;
        if (req.lo.empty()) {
            std::vector<double> col(x_subset.col(k).data(), x_subset.col(k).data() + x_subset.rows());
            lo = sample_quantile(col, 0.01);
            hi = sample_quantile(col, 0.99);
        } else {
            lo = req.lo[static_cast<std::size_t>(k)];
            hi = req.hi[static_cast<std::size_t>(k)];
        }
        for (int p = 0; p < req.points; ++p) {
            axes[static_cast<std::size_t>(k)].push_back(lo + (hi - lo) * p / (req.points - 1));
        }
    }
    Eigen::Index total = 1;
    for (const auto& a : axes) total *= static_cast<Eigen::Index>(a.size());
    Matrix g(total, d);
    for (Eigen::Index row = 0; row < total; ++row) {
        Eigen::Index rem = row;
        for (Eigen::Index k = d - 1; k >= 0; --k) {
            const auto& a = axes[static_cast<std::size_t>(k)];
            g(row, k) = a[static_cast<std::size_t>(rem % static_cast<Eigen::Index>(a.size()))];
            rem /= static_cast<Eigen::Index>(a.size());
        }
    }
    return g;
}

struct Hyper {
    KernelSpec input_kernel = KernelSpec::linear();
    double lambda = 0.0;
    FitRecord fit;
};

class Analysis {
public:
    explicit Analysis(const AnalysisConfig& cfg) : cfg_(cfg) {}

    SensitivityReport run() {
        const auto t0 = std::chrono::steady_clock::now();
        cfg_.validate();
        load_data();
        setup_output_kernel();

        std::set<std::uint64_t> wanted;
        for (auto s : cfg_.subsets) wanted.insert(check_subset(s).mask());
        if (cfg_.order > 0) {
            for (auto s : subsets_up_to_order(universe_, cfg_.order)) wanted.insert(s.mask());
        }
        if (cfg_.shapley || cfg_.anova) {
            if (universe_.size() > 20) throw ConfigError("Shapley/ANOVA need every subset; universe limited to 20 inputs");
            for (auto s : subsets_of(universe_)) {
                if (!s.empty()) wanted.insert(s.mask());
            }
        }
        estimate(masks_to_subsets(wanted));
        if (cfg_.ols) run_ols();

        IndexTable table(data_.front()->input_count(), to_string(cfg_.estimator));
        for (const auto& [mask, rec] : records_) table.set(InputSubset(mask), rec.mean);
        if (cfg_.shapley) report_.shapley = shapley_effects(table, universe_);
        if (cfg_.anova) report_.anova = anova_effects(table, universe_);
        for (const auto& v : table.monotonicity_violations(0.0)) {
            report_.warnings.push_back("monotonicity: beta" + v.smaller.to_string() + " exceeds beta" +
                                       v.larger.to_string() + " by " + format_double(v.excess));
        }
        if (report_.ols) {
            for (const auto& s : report_.ols->steps) {
                if (s.negative) {
                    report_.warnings.push_back("ols: negative conditional index for input " + std::to_string(s.label));
                }
                if (!s.tied_labels.empty()) {
                    report_.warnings.push_back("ols: tie at input " + std::to_string(s.label) + " with " +
                                               labels_field(s.tied_labels));
                }
            }
        }
        run_isf();

        for (auto& [mask, rec] : records_) {
            for (const auto& e : rec.replicates) {
                if (e.fit.jitter > 0.0) {
                    report_.warnings.push_back("jitter " + format_double(e.fit.jitter) + " added for subset " +
                                               rec.subset.to_string() + ", replicate " +
                                               std::to_string(e.replicate));
                }
            }
            report_.indices.push_back(std::move(rec));
        }
        report_.config = config_to_json(cfg_);
        report_.input_labels = data_.front()->input_labels();
        report_.output_labels = data_.front()->output_labels();
        report_.threads = cfg_.threads;
        report_.wall_clock_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return std::move(report_);
    }

private:
    void load_data() {
        const auto reps = static_cast<std::size_t>(cfg_.replicates);
        data_.resize(reps);
        if (cfg_.benchmark) {
            parallel_for(reps, cfg_.threads, [&](std::size_t r) {
                data_[r] = annotate("replicate " + std::to_string(r) + ", data generation", [&] {
                    return std::make_shared<const DataSet>(
                        generate_benchmark(*cfg_.benchmark, cfg_.n, replicate_seed(cfg_.seed, static_cast<int>(r))));
                });
            });
        } else {
            auto d = std::make_shared<const DataSet>(load_dataset(cfg_.data_path));
            for (auto& p : data_) p = d;
        }
        const int inputs = data_.front()->input_count();
        universe_ = cfg_.universe.empty() ? InputSubset::full(inputs) : check_subset(cfg_.universe);
    }

    InputSubset check_subset(InputSubset s) const {
        if (!s.is_subset_of(InputSubset::full(data_.front()->input_count()))) {
            throw ConfigError("subset " + s.to_string() + " refers to inputs beyond the " +
                              std::to_string(data_.front()->input_count()) + " available");
        }
        return s;
    }

    void setup_output_kernel() {
        const Matrix& y = data_.front()->outputs();
        report_.output_kernel_family = to_string(cfg_.output_kernel);
        if (cfg_.output_kernel == KernelFamily::Linear) {
            out_ = KernelSpec::linear();
            report_.output_bandwidth_rule = "none";
            return;
        }
        double bw = cfg_.output_bandwidth;
        if (cfg_.bandwidth_rule == BandwidthRule::Median) {
            bw = annotate("output bandwidth", [&] { return median_heuristic(y, 1'000'000, cfg_.seed); });
        } else if (cfg_.bandwidth_rule == BandwidthRule::Spread) {
            bw = annotate("output bandwidth", [&] { return spread_heuristic(y); });
        }
        out_ = KernelSpec::gaussian(bw);
        report_.output_bandwidth = bw;
        report_.output_bandwidth_rule = to_string(cfg_.bandwidth_rule);
    }

    static std::vector<InputSubset> masks_to_subsets(const std::set<std::uint64_t>& masks) {
        std::vector<InputSubset> v;
        for (auto m : masks) v.emplace_back(m);
        return v;
    }

    [[nodiscard]] std::uint64_t seed_of(int r) const { return replicate_seed(cfg_.seed, r); }

    static std::string where(InputSubset s, int r, const char* stage) {
        return "subset " + s.to_string() + ", replicate " + std::to_string(r) + ", " + stage;
    }

    Hyper tune_or_fix(InputSubset s, int r) const {
        const DataSet& data = *data_[static_cast<std::size_t>(r)];
        const Matrix x = data.select(s);
        Hyper h;
        h.fit.input_family = to_string(cfg_.input_kernel);
        if (cfg_.tune) {
            CvConfig cv = cfg_.cv;
            cv.seed = derive_seed(seed_of(r), s.mask());
            const TunedCme t = tune_cme(x, data.outputs(), cfg_.input_kernel, out_, cv);
            h.input_kernel = t.input_kernel;
            h.lambda = t.lambda;
            h.fit.cv_loss = t.loss;
            h.fit.evaluations = t.evaluations;
            h.fit.tuned = true;
        } else {
            if (cfg_.input_kernel == KernelFamily::Linear) {
                h.input_kernel = KernelSpec::linear();
            } else {
                std::optional<MahalanobisMetric> metric;
                if (cfg_.input_kernel == KernelFamily::Mahalanobis) metric = mahalanobis_metric(x);
                const double bw = std::isnan(cfg_.input_bandwidth)
                                      ? default_bandwidth(cfg_.input_kernel, x, metric ? &*metric : nullptr,
                                                          derive_seed(seed_of(r), s.mask()))
                                      : cfg_.input_bandwidth;
                h.input_kernel = metric ? KernelSpec::mahalanobis(bw, *metric) : KernelSpec::gaussian(bw);
            }
            h.lambda = cfg_.lambda;
        }
        if (h.input_kernel.family() != KernelFamily::Linear) h.fit.input_bandwidth = h.input_kernel.bandwidth();
        h.fit.lambda = h.lambda;
        return h;
    }

    /// Hyperparameters for (s, r), tuned at most once per pair. With reuse on,
    /// replicate 0's values serve every replicate; for Mahalanobis kernels the
    /// metric still comes from the replicate's own data.
    Hyper hyper(InputSubset s, int r) {
        const int key_r = cfg_.reuse_hyperparameters && cfg_.tune ? 0 : r;
        const auto key = std::pair{s.mask(), key_r};
        {
            std::lock_guard lock(mutex_);
            auto it = hyper_.find(key);
            if (it != hyper_.end()) return adapt(it->second, s, r);
        }
        Hyper h = tune_or_fix(s, key_r);
        {
            std::lock_guard lock(mutex_);
            hyper_.emplace(key, h);
        }
        return adapt(h, s, r);
    }

    Hyper adapt(Hyper h, InputSubset s, int r) const {
        if (h.input_kernel.family() == KernelFamily::Mahalanobis && cfg_.reuse_hyperparameters) {
            h.input_kernel = KernelSpec::mahalanobis(h.input_kernel.bandwidth(),
                                                     mahalanobis_metric(data_[static_cast<std::size_t>(r)]->select(s)));
        }
        return h;
    }

    ReplicateEstimate estimate_one(InputSubset s, int r) {
        const DataSet& data = *data_[static_cast<std::size_t>(r)];
        ReplicateEstimate e;
        e.replicate = r;
        e.seed = seed_of(r);
        switch (cfg_.estimator) {
            case Estimator::Analytic: {
                const AffineSystem sys =
                    *cfg_.benchmark == Benchmark::Example1 ? AffineSystem::example1() : AffineSystem::example2();
                e.raw = cfg_.output_kernel == KernelFamily::Linear ? analytic_variance_beta(sys, s)
                                                                    : analytic_rbf_beta(sys, s, out_.bandwidth());
                break;
            }
            case Estimator::NnFull: e.raw = beta_nn_full(data, s, out_).value; break;
            case Estimator::NnSubsample: {
                const Eigen::Index n_a = cfg_.nn_subsample == 0 ? data.size() : cfg_.nn_subsample;
                e.raw = beta_nn_subsample(data, s, out_, n_a, derive_seed(derive_seed(e.seed, s.mask()), 1)).value;
                break;
            }
            case Estimator::CmeNorm:
            case Estimator::CmeDist: {
                const Hyper h = annotate(where(s, r, "tuning"), [&] { return hyper(s, r); });
                const CmeModel m = annotate(where(s, r, "fit"),
                                            [&] { return fit_cme(data, s, h.input_kernel, out_, h.lambda); });
                e.raw = beta_cme(m, cfg_.estimator).value;
                e.fit = h.fit;
                e.fit.jitter = m.jitter();
                break;
            }
        }
        if (!std::isfinite(e.raw)) throw NumericalError("non-finite estimate");
        e.value = cfg_.clamp ? std::clamp(e.raw, 0.0, 1.0) : e.raw;
        return e;
    }

    /// Estimates every subset not yet in the records, all replicates in parallel.
    void estimate(const std::vector<InputSubset>& subsets) {
        std::vector<InputSubset> todo;
        for (auto s : subsets) {
            if (!records_.count(s.mask()) &&
                std::find(todo.begin(), todo.end(), s) == todo.end()) {
                todo.push_back(s);
            }
        }
        if (todo.empty()) return;
        std::sort(todo.begin(), todo.end(), [](InputSubset a, InputSubset b) { return a.mask() < b.mask(); });
        const auto reps = static_cast<std::size_t>(cfg_.replicates);
        const bool cme = cfg_.estimator == Estimator::CmeNorm || cfg_.estimator == Estimator::CmeDist;
        if (cme && cfg_.tune && cfg_.reuse_hyperparameters) {
            // pilot tuning first so replicates do not race to tune the same subset
            parallel_for(todo.size(), cfg_.threads, [&](std::size_t i) {
                annotate(where(todo[i], 0, "tuning"), [&] { hyper(todo[i], 0); });
            });
        }
        std::vector<ReplicateEstimate> out(todo.size() * reps);
        parallel_for(out.size(), cfg_.threads, [&](std::size_t k) {
            const InputSubset s = todo[k / reps];
            const int r = static_cast<int>(k % reps);
            out[k] = annotate(where(s, r, "estimate"), [&] { return estimate_one(s, r); });
        });
        for (std::size_t i = 0; i < todo.size(); ++i) {
            SubsetRecord rec;
            rec.subset = todo[i];
            rec.estimator = to_string(cfg_.estimator);
            rec.replicates.assign(out.begin() + static_cast<std::ptrdiff_t>(i * reps),
                                  out.begin() + static_cast<std::ptrdiff_t>((i + 1) * reps));
            rec.summarize();
            records_.emplace(todo[i].mask(), std::move(rec));
        }
    }

    double mean_of(InputSubset s) const {
        if (s.empty()) return 0.0;
        return records_.at(s.mask()).mean;
    }

    /// Greedy chain, one level at a time; each level's candidates are
    /// estimated together before the choice is made.
    void run_ols() {
        InputSubset chosen;
        while (chosen != universe_) {
            std::vector<InputSubset> cands;
            for (int i : (universe_ - chosen).indices()) cands.push_back(chosen | InputSubset::single(i));
            estimate(cands);
            InputSubset best = cands.front();
            for (auto c : cands) {
                if (mean_of(c) > mean_of(best)) best = c;
            }
            chosen = best;
        }
        report_.ols = ols_decomposition([&](InputSubset s) { return mean_of(s); }, universe_, cfg_.tie_tolerance);
    }

    void run_isf() {
        for (const auto& req : cfg_.isf) {
            const InputSubset s = check_subset(req.subset);
            const Matrix grid = isf_grid(req, data_.front()->select(s));
            const auto reps = static_cast<std::size_t>(cfg_.replicates);
            std::vector<std::vector<IsfPoint>> prof(reps);
            parallel_for(reps, cfg_.threads, [&](std::size_t r) {
                const int ri = static_cast<int>(r);
                const Hyper h = annotate(where(s, ri, "ISF tuning"), [&] { return hyper(s, ri); });
                prof[r] = annotate(where(s, ri, "ISF"), [&] {
                    const CmeModel m = fit_cme(*data_[r], s, h.input_kernel, out_, h.lambda);
                    return isf_profile(m, grid);
                });
            });
            IsfCurve curve;
            curve.subset = s;
            std::size_t extrapolated = 0;
            for (Eigen::Index i = 0; i < grid.rows(); ++i) {
                IsfCurvePoint p;
                for (Eigen::Index k = 0; k < grid.cols(); ++k) p.x.push_back(grid(i, k));
                p.norm_min = p.dist_min = std::numeric_limits<double>::infinity();
                p.norm_max = p.dist_max = -std::numeric_limits<double>::infinity();
                for (const auto& pr : prof) {
                    const IsfPoint& q = pr[static_cast<std::size_t>(i)];
                    p.norm += q.norm / static_cast<double>(reps);
                    p.dist += q.dist / static_cast<double>(reps);
                    p.norm_min = std::min(p.norm_min, q.norm);
                    p.norm_max = std::max(p.norm_max, q.norm);
                    p.dist_min = std::min(p.dist_min, q.dist);
                    p.dist_max = std::max(p.dist_max, q.dist);
                    p.extrapolated = p.extrapolated || q.extrapolated;
                }
                if (p.extrapolated) ++extrapolated;
                curve.points.push_back(std::move(p));
            }
            if (extrapolated) {
                report_.warnings.push_back("isf " + s.to_string() + ": " + std::to_string(extrapolated) +
                                           " grid points outside the training range");
            }
            report_.isf.push_back(std::move(curve));
        }
    }

    AnalysisConfig cfg_;
    std::vector<std::shared_ptr<const DataSet>> data_;
    InputSubset universe_;
    KernelSpec out_ = KernelSpec::linear();
    std::map<std::uint64_t, SubsetRecord> records_;
    std::map<std::pair<std::uint64_t, int>, Hyper> hyper_;
    std::mutex mutex_;
    SensitivityReport report_;
};

}  // namespace detail

/// Runs the configured estimates and decompositions. Results depend only on
/// the configuration (not on the thread count); errors name the failing
/// subset, replicate and stage.
inline SensitivityReport run_analysis(const AnalysisConfig& cfg) { return detail::Analysis(cfg).run(); }

}  // namespace kgsa
