// kgsa: kernel-based sensitivity analysis from the command line.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kgsa/kgsa.hpp"

namespace {

using namespace kgsa;

// "1,2", "(1,2)" or "{1 2}" -> subset of labels 1 and 2
InputSubset parse_subset(std::string text) {
    for (char& c : text) {
        if (c == '(' || c == ')' || c == '{' || c == '}' || c == ',' || c == ';') c = ' ';
    }
    std::istringstream in(text);
    std::vector<int> labels;
    std::string tok;
    while (in >> tok) {
        try {
            std::size_t used = 0;
            labels.push_back(std::stoi(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("bad input label '" + tok + "'");
        }
    }
    if (labels.empty()) throw ConfigError("empty subset '" + text + "'");
    return InputSubset::from_labels(labels);
}

// lo:hi:count
IsfRequest parse_grid(const std::string& text, InputSubset subset) {
    IsfRequest r;
    r.subset = subset;
    if (text.empty()) return r;
    double lo = 0.0, hi = 0.0;
    int count = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    if (!(in >> lo >> c1 >> hi >> c2 >> count) || c1 != ':' || c2 != ':' || !in.eof()) {
        throw ConfigError("grid must look like lo:hi:count, got '" + text + "'");
    }
    r.lo.assign(static_cast<std::size_t>(subset.size()), lo);
    r.hi.assign(static_cast<std::size_t>(subset.size()), hi);
    r.points = count;
    return r;
}

struct Flags {
    std::string config;
    std::string data;
    std::string benchmark;
    long long n = 1000;
    std::uint64_t seed = 0;
    std::vector<std::string> subsets;
    int order = 0;
    std::string universe;
    std::string estimator;
    std::string output_kernel;
    std::string bandwidth;
    std::string input_kernel;
    double input_bandwidth = 0.0;
    double lambda = 0.0;
    bool tune = false;
    int replicates = 1;
    int threads = 1;
    std::string out;
    std::string format = "json";
    bool clamp = false;
    bool assume_independent = false;
    bool reuse = false;
    long long nn_subsample = 0;
    std::string grid;
};

struct Options {
    CLI::Option* data = nullptr;
    CLI::Option* benchmark = nullptr;
    CLI::Option* n = nullptr;
    CLI::Option* seed = nullptr;
    CLI::Option* subsets = nullptr;
    CLI::Option* order = nullptr;
    CLI::Option* universe = nullptr;
    CLI::Option* estimator = nullptr;
    CLI::Option* output_kernel = nullptr;
    CLI::Option* bandwidth = nullptr;
    CLI::Option* input_kernel = nullptr;
    CLI::Option* input_bandwidth = nullptr;
    CLI::Option* lambda = nullptr;
    CLI::Option* tune = nullptr;
    CLI::Option* replicates = nullptr;
    CLI::Option* threads = nullptr;
    CLI::Option* clamp = nullptr;
    CLI::Option* assume_independent = nullptr;
    CLI::Option* reuse = nullptr;
    CLI::Option* nn_subsample = nullptr;
};

Options add_analysis_options(CLI::App* app, Flags& f) {
    Options o;
    app->add_option("--config", f.config, "JSON configuration file; flags override its values");
    o.data = app->add_option("--data", f.data, "CSV data file with x* input and y* output columns");
    o.benchmark = app->add_option("--benchmark", f.benchmark, "example1 | example2 | reactor-indep | reactor-corr");
    o.n = app->add_option("--n", f.n, "benchmark sample size");
    o.seed = app->add_option("--seed", f.seed, "master seed");
    o.subsets = app->add_option("--subsets", f.subsets, "subsets such as 1 2 1,2 (comma-separated labels)");
    o.order = app->add_option("--order", f.order, "estimate all subsets up to this size");
    o.universe = app->add_option("--universe", f.universe, "input labels considered, e.g. 1,2,3 (default: all)");
    o.estimator = app->add_option("--estimator", f.estimator, "CME-N | CME-D | NN-F | NN-S | analytic");
    o.output_kernel = app->add_option("--output-kernel", f.output_kernel, "rbf | linear");
    o.bandwidth = app->add_option("--bandwidth", f.bandwidth, "output bandwidth: a number, median or spread");
    o.input_kernel = app->add_option("--input-kernel", f.input_kernel, "rbf | mahalanobis | linear");
    o.input_bandwidth = app->add_option("--input-bandwidth", f.input_bandwidth, "fixed input bandwidth (with --lambda)");
    o.lambda = app->add_option("--lambda", f.lambda, "fixed regularization, disables tuning");
    o.tune = app->add_flag("--tune", f.tune, "tune bandwidth and lambda by cross-validation (default)");
    o.lambda->excludes(o.tune);
    o.replicates = app->add_option("--replicates", f.replicates, "number of replicates");
    o.threads = app->add_option("--threads", f.threads, "worker threads");
    app->add_option("--out", f.out, "output file (json) or directory (csv-tables, plot-data); default stdout");
    app->add_option("--format", f.format, "json | csv-tables | plot-data");
    o.clamp = app->add_flag("--clamp", f.clamp, "clamp reported indices to [0, 1]");
    o.assume_independent =
        app->add_flag("--assume-independent", f.assume_independent, "attest that the inputs are independent");
    o.reuse = app->add_flag("--reuse-hyperparameters", f.reuse, "tune on the first replicate only");
    o.nn_subsample = app->add_option("--nn-subsample", f.nn_subsample, "NN-S draws (default N)");
    return o;
}

AnalysisConfig build_config(const Flags& f, const Options& o) {
    AnalysisConfig c;
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        if (!in) throw ConfigError("cannot open configuration '" + f.config + "'");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError("configuration '" + f.config + "' is not valid JSON: " + e.what());
        }
        c = config_from_json(j);
    }
    if (o.data->count()) {
        c.data_path = f.data;
        if (!o.benchmark->count()) c.benchmark.reset();
    }
    if (o.benchmark->count()) {
        c.benchmark = parse_benchmark(f.benchmark);
        if (!o.data->count()) c.data_path.clear();
    }
    if (o.n->count()) c.n = f.n;
    if (o.seed->count()) c.seed = f.seed;
    if (o.subsets->count()) {
        c.subsets.clear();
        for (const auto& s : f.subsets) c.subsets.push_back(parse_subset(s));
    }
    if (o.order->count()) c.order = f.order;
    if (o.universe->count()) c.universe = parse_subset(f.universe);
    if (o.estimator->count()) c.estimator = parse_estimator(f.estimator);
    if (o.output_kernel->count()) c.output_kernel = parse_kernel_family(f.output_kernel);
    if (o.bandwidth->count()) {
        if (f.bandwidth == "median" || f.bandwidth == "spread") {
            c.bandwidth_rule = parse_bandwidth_rule(f.bandwidth);
        } else {
            double v = 0.0;
            if (!detail::parse_double(f.bandwidth, v)) {
                throw ConfigError("--bandwidth must be a number, median or spread");
            }
            c.bandwidth_rule = BandwidthRule::Explicit;
            c.output_bandwidth = v;
        }
    }
    if (o.input_kernel->count()) c.input_kernel = parse_kernel_family(f.input_kernel);
    if (o.input_bandwidth->count()) c.input_bandwidth = f.input_bandwidth;
    if (o.lambda->count()) {
        c.tune = false;
        c.lambda = f.lambda;
    }
    if (o.tune->count()) c.tune = true;
    if (o.replicates->count()) c.replicates = f.replicates;
    if (o.threads->count()) c.threads = f.threads;
    if (o.clamp->count()) c.clamp = true;
    if (o.assume_independent->count()) c.assume_independent = true;
    if (o.reuse->count()) c.reuse_hyperparameters = true;
    if (o.nn_subsample->count()) c.nn_subsample = f.nn_subsample;
    return c;
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 1;
    if (dynamic_cast<const DataError*>(&e)) return 2;
    return 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernel-based global sensitivity analysis"};
    app.require_subcommand(1);

    Flags f;
    auto* estimate = app.add_subcommand("estimate", "estimate indices for subsets (default: all first-order)");
    auto* ols = app.add_subcommand("ols", "optimal learning sequence over a universe");
    auto* shapley = app.add_subcommand("shapley", "Shapley effects over a universe");
    auto* anova = app.add_subcommand("anova", "kernel ANOVA effects (independent inputs only)");
    auto* isf = app.add_subcommand("isf", "inner statistical functions on a grid");
    auto* crossval = app.add_subcommand("crossval", "tune hyperparameters and report them with the CV loss");
    auto* bench = app.add_subcommand("benchmark", "write a benchmark data set as CSV");

    std::vector<std::pair<CLI::App*, Options>> analysis;
    for (auto* sub : {estimate, ols, shapley, anova, isf, crossval}) {
        analysis.emplace_back(sub, add_analysis_options(sub, f));
    }
    isf->add_option("--grid", f.grid, "grid lo:hi:count applied to every coordinate (default: data quantiles)");

    std::string bench_name;
    long long bench_n = 1000;
    std::uint64_t bench_seed = 0;
    std::string bench_out;
    bench->add_option("--benchmark", bench_name, "example1 | example2 | reactor-indep | reactor-corr")->required();
    bench->add_option("--n", bench_n, "sample size");
    bench->add_option("--seed", bench_seed, "master seed; the data equals replicate 0 of an analysis with this seed");
    bench->add_option("--out", bench_out, "CSV file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (bench->parsed()) {
            const DataSet d = generate_benchmark(parse_benchmark(bench_name), bench_n, replicate_seed(bench_seed, 0));
            if (bench_out.empty() || bench_out == "-") write_dataset(std::cout, d);
            else save_dataset(bench_out, d);
            return 0;
        }
        for (auto& [sub, opts] : analysis) {
            if (!sub->parsed()) continue;
            AnalysisConfig c = build_config(f, opts);
            if (sub == estimate) {
                if (c.subsets.empty() && c.order == 0) c.order = 1;
            } else if (sub == ols) {
                c.ols = true;
            } else if (sub == shapley) {
                c.shapley = true;
            } else if (sub == anova) {
                c.anova = true;
            } else if (sub == isf) {
                if (c.subsets.empty() && c.isf.empty()) throw ConfigError("isf needs --subsets");
                for (auto s : c.subsets) c.isf.push_back(parse_grid(f.grid, s));
                c.subsets.clear();
            } else if (sub == crossval) {
                c.tune = true;
                if (c.estimator != Estimator::CmeNorm && c.estimator != Estimator::CmeDist) {
                    throw ConfigError("crossval needs a CME estimator");
                }
                if (c.subsets.empty() && c.order == 0) c.order = 1;
            }
            const SensitivityReport r = run_analysis(c);
            for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
            emit_report(r, parse_report_format(f.format), f.out, std::cout);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e);
    }
    return 0;
}
