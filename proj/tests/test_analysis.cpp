#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "kgsa/analysis.hpp"

using namespace kgsa;
using Catch::Matchers::WithinAbs;

namespace {

namespace fs = std::filesystem;

AnalysisConfig example1_analytic() {
    AnalysisConfig c;
    c.benchmark = Benchmark::Example1;
    c.estimator = Estimator::Analytic;
    c.output_kernel = KernelFamily::Linear;
    return c;
}

// Small CME configuration that keeps tuning cheap.
AnalysisConfig small_cme(Estimator e = Estimator::CmeNorm) {
    AnalysisConfig c;
    c.benchmark = Benchmark::Example2;
    c.n = 120;
    c.seed = 5;
    c.estimator = e;
    c.output_bandwidth = kExample2Bandwidth;
    c.bandwidth_rule = BandwidthRule::Explicit;
    c.subsets = {InputSubset::from_labels({1}), InputSubset::from_labels({3}), InputSubset::from_labels({1, 3})};
    c.cv.max_evaluations = 8;
    c.replicates = 2;
    return c;
}

fs::path temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        for (auto c : detail::split_csv_line(line)) cells.emplace_back(c);
        rows.push_back(std::move(cells));
    }
    return rows;
}

nlohmann::json without_diagnostics(nlohmann::json j) {
    j.erase("diagnostics");
    return j;
}

// Same keys, array lengths and value types; leaf values may differ.
bool same_shape(const nlohmann::json& a, const nlohmann::json& b) {
    if (a.type() != b.type()) {
        return (a.is_number() || a.is_null()) && (b.is_number() || b.is_null());
    }
    if (a.is_object()) {
        if (a.size() != b.size()) return false;
        for (auto it = a.begin(); it != a.end(); ++it) {
            if (!b.contains(it.key()) || !same_shape(it.value(), b.at(it.key()))) return false;
        }
        return true;
    }
    if (a.is_array()) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!same_shape(a[i], b[i])) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("seed derivation gives distinct streams", "[analysis]") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t m : {0ULL, 1ULL, 42ULL}) {
        for (int r = 0; r < 100; ++r) seen.insert(replicate_seed(m, r));
    }
    CHECK(seen.size() == 300);
    CHECK(replicate_seed(7, 3) == replicate_seed(7, 3));
}

TEST_CASE("config validation", "[analysis]") {
    AnalysisConfig c;
    CHECK_THROWS_AS(c.validate(), ConfigError);  // no data source
    c.benchmark = Benchmark::Example1;
    c.data_path = "x.csv";
    CHECK_THROWS_AS(c.validate(), ConfigError);  // two sources
    c.data_path.clear();
    CHECK_NOTHROW(c.validate());
    c.anova = true;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.assume_independent = true;
    CHECK_NOTHROW(c.validate());
    c.bandwidth_rule = BandwidthRule::Explicit;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.output_bandwidth = 1.0;
    c.replicates = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.replicates = 1;
    c.benchmark = Benchmark::ReactorCorrelated;
    c.estimator = Estimator::Analytic;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("ANOVA without attestation is a configuration error", "[analysis]") {
    AnalysisConfig c = example1_analytic();
    c.anova = true;
    CHECK_THROWS_AS(run_analysis(c), ConfigError);
    c.assume_independent = true;
    CHECK_NOTHROW(run_analysis(c));
}

TEST_CASE("config JSON round trip and strictness", "[analysis]") {
    AnalysisConfig c = small_cme();
    c.universe = InputSubset::from_labels({1, 2, 3});
    c.isf.push_back({InputSubset::from_labels({3}), {-2.0}, {2.0}, 11});
    c.clamp = true;
    const auto j = config_to_json(c);
    CHECK(config_to_json(config_from_json(j)) == j);
    CHECK_THROWS_AS(config_from_json({{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"cv", {{"bogus", 1}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"n", "many"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"estimator", "CME-X"}}), ConfigError);
    const AnalysisConfig partial = config_from_json({{"replicates", 4}}, c);
    CHECK(partial.replicates == 4);
    CHECK(partial.subsets == c.subsets);
}

TEST_CASE("Example 1 analytic report matches the reference indices", "[analysis]") {
    AnalysisConfig c = example1_analytic();
    c.order = 3;
    c.ols = true;
    c.shapley = true;
    const SensitivityReport r = run_analysis(c);
    REQUIRE(r.indices.size() == 7);
    auto beta = [&](std::initializer_list<int> l) { return r.find(InputSubset::from_labels(l))->mean; };
    CHECK_THAT(beta({1}), WithinAbs(0.384, 1e-3));
    CHECK_THAT(beta({2}), WithinAbs(0.560, 1e-3));
    CHECK_THAT(beta({3}), WithinAbs(0.548, 1e-3));
    CHECK_THAT(beta({1, 2}), WithinAbs(0.944, 1e-3));
    CHECK_THAT(beta({1, 3}), WithinAbs(0.932, 1e-3));
    CHECK_THAT(beta({2, 3}), WithinAbs(0.615, 1e-3));
    CHECK_THAT(beta({1, 2, 3}), WithinAbs(1.0, 1e-12));
    REQUIRE(r.ols);
    CHECK(r.ols->order() == std::vector<int>{2, 1, 3});
    REQUIRE(r.shapley);
    CHECK_THAT(r.shapley->effects.at(1), WithinAbs(0.384, 1e-3));
    CHECK_THAT(r.shapley->effects.at(2), WithinAbs(0.314, 1e-3));
    CHECK_THAT(r.shapley->effects.at(3), WithinAbs(0.302, 1e-3));
    CHECK(r.output_bandwidth_rule == "none");
    CHECK(r.warnings.empty());
}

TEST_CASE("OLS csv for Example 1", "[analysis]") {
    AnalysisConfig c = example1_analytic();
    c.ols = true;
    const SensitivityReport r = run_analysis(c);
    // the lazy chain only estimates the subsets it visits
    CHECK(r.indices.size() == 6);
    const auto dir = temp_dir("kgsa_ols_csv");
    emit_report(r, ReportFormat::CsvTables, dir.string(), std::cout);
    const auto rows = csv_rows(slurp(dir / "ols.csv"));
    REQUIRE(rows.size() == 4);
    CHECK(rows[0][0] == "label");
    const double expected[3][3] = {{2, 0.560, 0.560}, {1, 0.384, 0.944}, {3, 0.056, 1.0}};
    for (int k = 0; k < 3; ++k) {
        CHECK(std::stoi(rows[k + 1][0]) == expected[k][0]);
        CHECK_THAT(std::stod(rows[k + 1][1]), WithinAbs(expected[k][1], 1e-3));
        CHECK_THAT(std::stod(rows[k + 1][2]), WithinAbs(expected[k][2], 1e-3));
    }
    CHECK(fs::exists(dir / "indices.csv"));
    CHECK_FALSE(fs::exists(dir / "shapley.csv"));
    fs::remove_all(dir);
}

TEST_CASE("empty subset list gives a header-only indices file", "[analysis]") {
    const SensitivityReport r = run_analysis(example1_analytic());
    CHECK(r.indices.empty());
    const auto dir = temp_dir("kgsa_empty_csv");
    emit_report(r, ReportFormat::CsvTables, dir.string(), std::cout);
    CHECK(slurp(dir / "indices.csv") == "subset,estimator,mean,median,min,max,replicates\n");
    fs::remove_all(dir);
}

TEST_CASE("ANOVA and Shapley from the analytic table", "[analysis]") {
    AnalysisConfig c = example1_analytic();
    c.anova = true;
    c.shapley = true;
    c.assume_independent = true;
    const SensitivityReport r = run_analysis(c);
    REQUIRE(r.anova);
    double total = 0.0;
    for (const auto& [s, v] : *r.anova) total += v;
    CHECK_THAT(total, WithinAbs(1.0, 1e-10));
    CHECK_THAT(r.shapley->sum(), WithinAbs(1.0, 1e-10));
}

TEST_CASE("JSON report round trip", "[analysis]") {
    AnalysisConfig c = small_cme();
    c.ols = true;
    c.universe = InputSubset::from_labels({1, 3});
    c.isf.push_back({InputSubset::from_labels({3}), {}, {}, 5});
    const SensitivityReport r = run_analysis(c);
    const auto j = report_to_json(r);
    const SensitivityReport back = report_from_json(nlohmann::json::parse(j.dump()));
    CHECK(report_to_json(back) == j);
    CHECK(back.indices == r.indices);
    CHECK(back.isf == r.isf);
    CHECK(back.ols->order() == r.ols->order());

    const auto path = fs::temp_directory_path() / "kgsa_report.json";
    emit_report(r, ReportFormat::Json, path.string(), std::cout);
    CHECK(report_to_json(load_report(path.string())) == j);
    fs::remove(path);
    CHECK_THROWS_AS(report_from_json({{"schema_version", 99}}), DataError);
}

TEST_CASE("every estimate records seed and hyperparameters", "[analysis]") {
    const SensitivityReport r = run_analysis(small_cme());
    REQUIRE(r.indices.size() == 3);
    for (const auto& rec : r.indices) {
        REQUIRE(rec.replicates.size() == 2);
        CHECK(rec.replicates[0].seed != rec.replicates[1].seed);
        for (const auto& e : rec.replicates) {
            CHECK(e.fit.tuned);
            CHECK(e.fit.lambda > 0.0);
            CHECK(e.fit.input_bandwidth > 0.0);
            CHECK(std::isfinite(e.fit.cv_loss));
            CHECK(e.fit.evaluations > 0);
        }
        CHECK(rec.min <= rec.median);
        CHECK(rec.median <= rec.max);
    }
}

TEST_CASE("byte-identical reports regardless of thread count", "[analysis]") {
    AnalysisConfig c = small_cme();
    c.ols = true;
    const auto a = without_diagnostics(report_to_json(run_analysis(c))).dump();
    c.threads = 3;
    const auto b = without_diagnostics(report_to_json(run_analysis(c))).dump();
    CHECK(a == b);
    c.seed = 6;
    const auto d = without_diagnostics(report_to_json(run_analysis(c))).dump();
    CHECK(a != d);
}

TEST_CASE("swapping CME-N for CME-D keeps the report structure", "[analysis]") {
    AnalysisConfig n = small_cme(Estimator::CmeNorm);
    n.shapley = true;
    n.universe = InputSubset::from_labels({1, 2});
    AnalysisConfig d = n;
    d.estimator = Estimator::CmeDist;
    const auto jn = report_to_json(run_analysis(n));
    const auto jd = report_to_json(run_analysis(d));
    CHECK(same_shape(jn, jd));
    CHECK(jn["indices"] != jd["indices"]);
}

TEST_CASE("hyperparameter reuse tunes once per subset", "[analysis]") {
    AnalysisConfig c = small_cme();
    c.replicates = 3;
    c.reuse_hyperparameters = true;
    const SensitivityReport r = run_analysis(c);
    for (const auto& rec : r.indices) {
        for (const auto& e : rec.replicates) {
            CHECK(e.fit.lambda == rec.replicates[0].fit.lambda);
            CHECK(e.fit.input_bandwidth == rec.replicates[0].fit.input_bandwidth);
        }
    }
}

TEST_CASE("nearest-neighbor estimators and clamping", "[analysis]") {
    AnalysisConfig c = small_cme(Estimator::NnFull);
    c.n = 300;
    c.order = 2;
    c.subsets.clear();
    c.clamp = true;
    const SensitivityReport r = run_analysis(c);
    CHECK(r.indices.size() == 10);
    for (const auto& rec : r.indices) {
        for (const auto& e : rec.replicates) {
            CHECK(e.value >= 0.0);
            CHECK(e.value <= 1.0);
            CHECK(e.value == std::clamp(e.raw, 0.0, 1.0));
            CHECK(e.fit.input_family.empty());
        }
    }
    c.estimator = Estimator::NnSubsample;
    c.nn_subsample = 100;
    CHECK(run_analysis(c).indices.size() == 10);
}

TEST_CASE("file data: replicates share the data set", "[analysis]") {
    const auto path = fs::temp_directory_path() / "kgsa_file_data.csv";
    {
        std::ofstream out(path);
        write_dataset(out, generate_benchmark(Benchmark::Example1, 100, 3));
    }
    AnalysisConfig c;
    c.data_path = path.string();
    c.estimator = Estimator::NnFull;
    c.output_kernel = KernelFamily::Linear;
    c.order = 1;
    c.replicates = 3;
    const SensitivityReport r = run_analysis(c);
    for (const auto& rec : r.indices) CHECK(rec.min == rec.max);
    CHECK(r.input_labels == std::vector<std::string>{"x1", "x2", "x3"});
    fs::remove(path);
}

TEST_CASE("errors name the failing subset and keep their category", "[analysis]") {
    const auto path = fs::temp_directory_path() / "kgsa_constant.csv";
    {
        std::ofstream out(path);
        out << "x1,x2,y1\n";
        for (int i = 0; i < 20; ++i) out << i << "," << (i * 7) % 5 << ",1\n";
    }
    AnalysisConfig c;
    c.data_path = path.string();
    c.bandwidth_rule = BandwidthRule::Explicit;
    c.output_bandwidth = 1.0;
    c.tune = false;
    c.subsets = {InputSubset::from_labels({2})};
    try {
        run_analysis(c);
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("subset 2"));
        CHECK_THAT(std::string(e.what()), Catch::Matchers::ContainsSubstring("replicate 0"));
    }
    c.subsets = {InputSubset::from_labels({3})};
    CHECK_THROWS_AS(run_analysis(c), ConfigError);
    fs::remove(path);
}

TEST_CASE("ISF curves and plot data", "[analysis]") {
    AnalysisConfig c = small_cme();
    c.subsets.clear();
    c.isf.push_back({InputSubset::from_labels({3}), {}, {}, 9});
    c.isf.push_back({InputSubset::from_labels({1, 2}), {-1.0, -1.0}, {1.0, 1.0}, 3});
    const SensitivityReport r = run_analysis(c);
    REQUIRE(r.isf.size() == 2);
    CHECK(r.isf[0].points.size() == 9);
    CHECK(r.isf[1].points.size() == 9);
    CHECK(r.isf[1].points[1].x == std::vector<double>{-1.0, 0.0});
    for (const auto& curve : r.isf) {
        for (const auto& p : curve.points) {
            CHECK(p.dist >= -1e-10);
            CHECK(p.norm_min <= p.norm);
            CHECK(p.norm <= p.norm_max);
        }
    }
    const auto dir = temp_dir("kgsa_plot");
    emit_report(r, ReportFormat::PlotData, dir.string(), std::cout);
    const auto rows = csv_rows(slurp(dir / "isf_3.csv"));
    REQUIRE(rows.size() == 10);
    CHECK(rows[0][0] == "x3");
    CHECK(rows[0][1] == "gamma_n");
    CHECK(rows[0][2] == "gamma_d");
    CHECK(csv_rows(slurp(dir / "isf_1_2.csv"))[0][1] == "x2");
    fs::remove_all(dir);
}

#ifdef KGSA_CLI_PATH
namespace {
int run_cli(const std::string& args) {
    const std::string cmd = std::string(KGSA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
}  // namespace

TEST_CASE("CLI exit codes", "[cli]") {
    CHECK(run_cli("estimate --benchmark example1 --estimator analytic --output-kernel linear --order 3") == 0);
    CHECK(run_cli("anova --benchmark example1 --estimator analytic --output-kernel linear") == 1);
    CHECK(run_cli("estimate --no-such-flag") == 1);
    CHECK(run_cli("estimate --benchmark example1 --data a.csv") == 1);
    CHECK(run_cli("estimate --data /nonexistent.csv") == 2);
    CHECK(run_cli("--help") == 0);

    const auto dir = temp_dir("kgsa_cli");
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "const.csv");
        out << "x1,y1\n1,2\n2,2\n3,2\n4,2\n5,2\n6,2\n";
    }
    CHECK(run_cli("estimate --data " + (dir / "const.csv").string() + " --lambda 0.1 --bandwidth 1") == 3);
    CHECK(run_cli("benchmark --benchmark example2 --n 50 --seed 4 --out " + (dir / "b.csv").string()) == 0);
    const DataSet d = load_dataset((dir / "b.csv").string());
    CHECK(d.size() == 50);
    CHECK(d.inputs() == generate_benchmark(Benchmark::Example2, 50, replicate_seed(4, 0)).inputs());
    CHECK(run_cli("ols --benchmark example1 --estimator analytic --output-kernel linear --format csv-tables --out " +
                  (dir / "ols").string()) == 0);
    CHECK(fs::exists(dir / "ols" / "ols.csv"));
    fs::remove_all(dir);
}
#endif
