#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgsa/decomposition.hpp"
#include "kgsa/embedding.hpp"
#include "kgsa/error.hpp"
#include "kgsa/io.hpp"
#include "kgsa/kernels.hpp"
#include "kgsa/subset.hpp"

namespace kgsa {

inline constexpr int kReportSchemaVersion = 1;

/// Hyperparameters and solver details behind one estimate.
struct FitRecord {
    std::string input_family;  ///< empty for estimators without an input kernel
    double input_bandwidth = std::numeric_limits<double>::quiet_NaN();
    double lambda = std::numeric_limits<double>::quiet_NaN();
    double cv_loss = std::numeric_limits<double>::quiet_NaN();
    int evaluations = 0;
    double jitter = 0.0;
    bool tuned = false;

    bool operator==(const FitRecord&) const = default;
};

struct ReplicateEstimate {
    int replicate = 0;
    std::uint64_t seed = 0;
    double raw = 0.0;    ///< estimator output
    double value = 0.0;  ///< raw, or raw clamped to [0, 1] when clamping is on
    FitRecord fit;

    bool operator==(const ReplicateEstimate&) const = default;
};

/// All replicates of one subset and their summary.
struct SubsetRecord {
    InputSubset subset;
    std::string estimator;
    std::vector<ReplicateEstimate> replicates;
    double mean = 0.0;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;

    void summarize() {
        if (replicates.empty()) throw ConfigError("subset record without replicates");
        std::vector<double> v;
        for (const auto& r : replicates) v.push_back(r.value);
        double s = 0.0;
        for (double x : v) s += x;
        mean = s / static_cast<double>(v.size());
        std::sort(v.begin(), v.end());
        min = v.front();
        max = v.back();
        const std::size_t h = v.size() / 2;
        median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
    }

    bool operator==(const SubsetRecord& o) const {
        return subset == o.subset && estimator == o.estimator && replicates == o.replicates && mean == o.mean &&
               median == o.median && min == o.min && max == o.max;
    }
};

struct IsfCurvePoint {
    std::vector<double> x;
    double norm = 0.0;  ///< replicate mean of gamma^N
    double dist = 0.0;  ///< replicate mean of gamma^D
    double norm_min = 0.0, norm_max = 0.0;
    double dist_min = 0.0, dist_max = 0.0;
    bool extrapolated = false;

    bool operator==(const IsfCurvePoint&) const = default;
};

struct IsfCurve {
    InputSubset subset;
    std::vector<IsfCurvePoint> points;

    bool operator==(const IsfCurve&) const = default;
};

struct SensitivityReport {
    nlohmann::json config;  ///< echo of the effective configuration
    std::vector<std::string> input_labels;
    std::vector<std::string> output_labels;
    std::string output_kernel_family;
    double output_bandwidth = std::numeric_limits<double>::quiet_NaN();
    std::string output_bandwidth_rule;
    std::vector<SubsetRecord> indices;  ///< ordered by subset mask
    std::optional<OlsResult> ols;
    std::optional<ShapleyTable> shapley;
    std::optional<AnovaTable> anova;
    std::vector<IsfCurve> isf;
    std::vector<std::string> warnings;
    double wall_clock_seconds = 0.0;
    int threads = 1;

    [[nodiscard]] const SubsetRecord* find(InputSubset s) const {
        for (const auto& r : indices) {
            if (r.subset == s) return &r;
        }
        return nullptr;
    }
};

namespace detail {

inline nlohmann::json number(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

inline double number_from(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline nlohmann::json subset_json(InputSubset s) { return s.labels(); }

inline InputSubset subset_from(const nlohmann::json& j) { return InputSubset::from_labels(j.get<std::vector<int>>()); }

}  // namespace detail

/// Complete report as JSON. Wall-clock and thread count live under
/// "diagnostics" so reports from identical configurations compare equal
/// elsewhere.
inline nlohmann::json report_to_json(const SensitivityReport& r) {
    using nlohmann::json;
    using detail::number;
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["config"] = r.config;
    j["input_labels"] = r.input_labels;
    j["output_labels"] = r.output_labels;
    j["output_kernel"] = {{"family", r.output_kernel_family},
                          {"bandwidth", number(r.output_bandwidth)},
                          {"rule", r.output_bandwidth_rule}};
    json idx = json::array();
    for (const auto& rec : r.indices) {
        json reps = json::array();
        for (const auto& e : rec.replicates) {
            reps.push_back({{"replicate", e.replicate},
                            {"seed", e.seed},
                            {"raw", number(e.raw)},
                            {"value", number(e.value)},
                            {"fit",
                             {{"input_family", e.fit.input_family},
                              {"input_bandwidth", number(e.fit.input_bandwidth)},
                              {"lambda", number(e.fit.lambda)},
                              {"cv_loss", number(e.fit.cv_loss)},
                              {"evaluations", e.fit.evaluations},
                              {"jitter", e.fit.jitter},
                              {"tuned", e.fit.tuned}}}});
        }
        idx.push_back({{"subset", detail::subset_json(rec.subset)},
                       {"label", rec.subset.to_string()},
                       {"estimator", rec.estimator},
                       {"mean", number(rec.mean)},
                       {"median", number(rec.median)},
                       {"min", number(rec.min)},
                       {"max", number(rec.max)},
                       {"replicates", reps}});
    }
    j["indices"] = idx;
    if (r.ols) {
        json steps = json::array();
        for (const auto& s : r.ols->steps) {
            steps.push_back({{"label", s.label},
                             {"conditional", number(s.conditional)},
                             {"cumulative", number(s.cumulative)},
                             {"ties", s.tied_labels},
                             {"negative", s.negative}});
        }
        j["ols"] = {{"universe", detail::subset_json(r.ols->universe)}, {"steps", steps}};
    }
    if (r.shapley) {
        json eff = json::array();
        for (const auto& [label, v] : r.shapley->effects) eff.push_back({{"label", label}, {"value", number(v)}});
        j["shapley"] = {{"universe", detail::subset_json(r.shapley->universe)},
                        {"effects", eff},
                        {"sum", number(r.shapley->sum())}};
    }
    if (r.anova) {
        json a = json::array();
        for (const auto& [s, v] : *r.anova) {
            if (!s.empty()) a.push_back({{"subset", detail::subset_json(s)}, {"value", number(v)}});
        }
        j["anova"] = a;
    }
    json curves = json::array();
    for (const auto& c : r.isf) {
        json pts = json::array();
        for (const auto& p : c.points) {
            pts.push_back({{"x", p.x},
                           {"norm", number(p.norm)},
                           {"dist", number(p.dist)},
                           {"norm_min", number(p.norm_min)},
                           {"norm_max", number(p.norm_max)},
                           {"dist_min", number(p.dist_min)},
                           {"dist_max", number(p.dist_max)},
                           {"extrapolated", p.extrapolated}});
        }
        curves.push_back({{"subset", detail::subset_json(c.subset)}, {"points", pts}});
    }
    j["isf"] = curves;
    j["warnings"] = r.warnings;
    j["diagnostics"] = {{"wall_clock_seconds", r.wall_clock_seconds}, {"threads", r.threads}};
    return j;
}

inline SensitivityReport report_from_json(const nlohmann::json& j) {
    using detail::number_from;
    try {
        if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
            throw DataError("unsupported report schema version " + j.at("schema_version").dump());
        }
        SensitivityReport r;
        r.config = j.at("config");
        r.input_labels = j.at("input_labels").get<std::vector<std::string>>();
        r.output_labels = j.at("output_labels").get<std::vector<std::string>>();
        const auto& ok = j.at("output_kernel");
        r.output_kernel_family = ok.at("family").get<std::string>();
        r.output_bandwidth = number_from(ok.at("bandwidth"));
        r.output_bandwidth_rule = ok.at("rule").get<std::string>();
        for (const auto& rec : j.at("indices")) {
            SubsetRecord s;
            s.subset = detail::subset_from(rec.at("subset"));
            s.estimator = rec.at("estimator").get<std::string>();
            s.mean = number_from(rec.at("mean"));
            s.median = number_from(rec.at("median"));
            s.min = number_from(rec.at("min"));
            s.max = number_from(rec.at("max"));
            for (const auto& e : rec.at("replicates")) {
                ReplicateEstimate x;
                x.replicate = e.at("replicate").get<int>();
                x.seed = e.at("seed").get<std::uint64_t>();
                x.raw = number_from(e.at("raw"));
                x.value = number_from(e.at("value"));
                const auto& f = e.at("fit");
                x.fit.input_family = f.at("input_family").get<std::string>();
                x.fit.input_bandwidth = number_from(f.at("input_bandwidth"));
                x.fit.lambda = number_from(f.at("lambda"));
                x.fit.cv_loss = number_from(f.at("cv_loss"));
                x.fit.evaluations = f.at("evaluations").get<int>();
                x.fit.jitter = f.at("jitter").get<double>();
                x.fit.tuned = f.at("tuned").get<bool>();
                s.replicates.push_back(std::move(x));
            }
            r.indices.push_back(std::move(s));
        }
        if (j.contains("ols")) {
            OlsResult o;
            o.universe = detail::subset_from(j["ols"].at("universe"));
            for (const auto& s : j["ols"].at("steps")) {
                OlsStep st;
                st.label = s.at("label").get<int>();
                st.conditional = number_from(s.at("conditional"));
                st.cumulative = number_from(s.at("cumulative"));
                st.tied_labels = s.at("ties").get<std::vector<int>>();
                st.negative = s.at("negative").get<bool>();
                o.steps.push_back(std::move(st));
            }
            r.ols = std::move(o);
        }
        if (j.contains("shapley")) {
            ShapleyTable t;
            t.universe = detail::subset_from(j["shapley"].at("universe"));
            for (const auto& e : j["shapley"].at("effects")) {
                t.effects[e.at("label").get<int>()] = number_from(e.at("value"));
            }
            r.shapley = std::move(t);
        }
        if (j.contains("anova")) {
            AnovaTable a;
            a[InputSubset{}] = 0.0;
            for (const auto& e : j["anova"]) a[detail::subset_from(e.at("subset"))] = number_from(e.at("value"));
            r.anova = std::move(a);
        }
        for (const auto& c : j.at("isf")) {
            IsfCurve curve;
            curve.subset = detail::subset_from(c.at("subset"));
            for (const auto& p : c.at("points")) {
                IsfCurvePoint q;
                q.x = p.at("x").get<std::vector<double>>();
                q.norm = number_from(p.at("norm"));
                q.dist = number_from(p.at("dist"));
                q.norm_min = number_from(p.at("norm_min"));
                q.norm_max = number_from(p.at("norm_max"));
                q.dist_min = number_from(p.at("dist_min"));
                q.dist_max = number_from(p.at("dist_max"));
                q.extrapolated = p.at("extrapolated").get<bool>();
                curve.points.push_back(std::move(q));
            }
            r.isf.push_back(std::move(curve));
        }
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
        r.wall_clock_seconds = j.at("diagnostics").at("wall_clock_seconds").get<double>();
        r.threads = j.at("diagnostics").at("threads").get<int>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed report: ") + e.what());
    }
}

inline SensitivityReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report '" + path + "'");
    try {
        return report_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("report '" + path + "' is not valid JSON: " + e.what());
    }
}

enum class ReportFormat { Json, CsvTables, PlotData };

inline ReportFormat parse_report_format(const std::string& s) {
    if (s == "json") return ReportFormat::Json;
    if (s == "csv-tables") return ReportFormat::CsvTables;
    if (s == "plot-data") return ReportFormat::PlotData;
    throw ConfigError("unknown report format '" + s + "' (expected json, csv-tables or plot-data)");
}

namespace detail {

inline std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

inline std::string labels_field(const std::vector<int>& labels) {
    std::string s;
    for (std::size_t i = 0; i < labels.size(); ++i) s += (i ? " " : "") + std::to_string(labels[i]);
    return s;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw DataError("write failed for '" + p.string() + "'");
}

}  // namespace detail

/// One CSV table per report section, keyed by file name.
inline std::vector<std::pair<std::string, std::string>> report_csv_tables(const SensitivityReport& r) {
    using detail::csv_number;
    std::vector<std::pair<std::string, std::string>> out;
    std::ostringstream idx;
    idx << "subset,estimator,mean,median,min,max,replicates\n";
    for (const auto& rec : r.indices) {
        idx << '"' << rec.subset.to_string() << "\"," << rec.estimator << ',' << csv_number(rec.mean) << ','
            << csv_number(rec.median) << ',' << csv_number(rec.min) << ',' << csv_number(rec.max) << ','
            << rec.replicates.size() << '\n';
    }
    out.emplace_back("indices.csv", idx.str());
    if (r.ols) {
        std::ostringstream o;
        o << "label,conditional,cumulative,ties,negative\n";
        for (const auto& s : r.ols->steps) {
            o << s.label << ',' << csv_number(s.conditional) << ',' << csv_number(s.cumulative) << ','
              << detail::labels_field(s.tied_labels) << ',' << (s.negative ? 1 : 0) << '\n';
        }
        out.emplace_back("ols.csv", o.str());
    }
    if (r.shapley) {
        std::ostringstream o;
        o << "label,value\n";
        for (const auto& [label, v] : r.shapley->effects) o << label << ',' << csv_number(v) << '\n';
        out.emplace_back("shapley.csv", o.str());
    }
    if (r.anova) {
        std::ostringstream o;
        o << "subset,value\n";
        for (const auto& [s, v] : *r.anova) {
            if (!s.empty()) o << '"' << s.to_string() << "\"," << csv_number(v) << '\n';
        }
        out.emplace_back("anova.csv", o.str());
    }
    return out;
}

/// ISF curves as (x..., gamma_n, gamma_d, ...) tables, one per subset.
inline std::vector<std::pair<std::string, std::string>> report_plot_data(const SensitivityReport& r) {
    using detail::csv_number;
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& c : r.isf) {
        std::ostringstream o;
        for (int l : c.subset.labels()) o << 'x' << l << ',';
        o << "gamma_n,gamma_d,gamma_n_min,gamma_n_max,gamma_d_min,gamma_d_max,extrapolated\n";
        for (const auto& p : c.points) {
            for (double x : p.x) o << csv_number(x) << ',';
            o << csv_number(p.norm) << ',' << csv_number(p.dist) << ',' << csv_number(p.norm_min) << ','
              << csv_number(p.norm_max) << ',' << csv_number(p.dist_min) << ',' << csv_number(p.dist_max) << ','
              << (p.extrapolated ? 1 : 0) << '\n';
        }
        std::string name = "isf";
        for (int l : c.subset.labels()) name += "_" + std::to_string(l);
        out.emplace_back(name + ".csv", o.str());
    }
    return out;
}

/// Writes the report. `target` is a file for json ("-" for stdout) and a
/// directory for the table formats.
inline void emit_report(const SensitivityReport& r, ReportFormat format, const std::string& target,
                        std::ostream& stdout_stream) {
    if (format == ReportFormat::Json) {
        const std::string text = report_to_json(r).dump(2) + "\n";
        if (target.empty() || target == "-") stdout_stream << text;
        else detail::write_file(target, text);
        return;
    }
    if (target.empty() || target == "-") throw ConfigError("table formats need an output directory (--out)");
    std::error_code ec;
    std::filesystem::create_directories(target, ec);
    if (ec) throw DataError("cannot create output directory '" + target + "': " + ec.message());
    const auto files = format == ReportFormat::CsvTables ? report_csv_tables(r) : report_plot_data(r);
    for (const auto& [name, text] : files) detail::write_file(std::filesystem::path(target) / name, text);
}

}  // namespace kgsa
