#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kgsa/dataset.hpp"
#include "kgsa/error.hpp"

namespace kgsa {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

inline bool parse_double(std::string_view s, double& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Parses CSV text with a header row. Columns whose names start with `x` are
/// inputs and those starting with `y` are outputs, each in header order.
/// `source` names the origin in diagnostics.
inline DataSet parse_dataset(std::istream& in, const std::string& source = "<input>") {
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (!detail::trim(line).empty()) return true;
        }
        return false;
    };
    if (!next_line()) throw DataError(source + ": missing header row");
    std::vector<std::string> header;
    for (auto h : detail::split_csv_line(line)) header.emplace_back(h);
    std::vector<int> role(header.size());  // 0 input, 1 output
    std::vector<std::string> xs, ys;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string& name = header[c];
        if (!name.empty() && (name[0] == 'x' || name[0] == 'X')) {
            role[c] = 0;
            xs.push_back(name);
        } else if (!name.empty() && (name[0] == 'y' || name[0] == 'Y')) {
            role[c] = 1;
            ys.push_back(name);
        } else {
            throw DataError(source + ": header column " + std::to_string(c + 1) + " ('" + name +
                            "') is neither an x* input nor a y* output");
        }
    }
    if (xs.empty()) throw DataError(source + ": no x* input columns");
    if (ys.empty()) throw DataError(source + ": no y* output columns");

    std::vector<std::vector<double>> rows;
    while (next_line()) {
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw DataError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size()));
        }
        std::vector<double> r(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (!detail::parse_double(cells[c], r[c])) {
                throw DataError(source + ": line " + std::to_string(line_no) + ", column '" + header[c] +
                                "': non-numeric cell '" + std::string(cells[c]) + "'");
            }
            if (!std::isfinite(r[c])) {
                throw DataError(source + ": line " + std::to_string(line_no) + ", column '" + header[c] +
                                "': non-finite value");
            }
        }
        rows.push_back(std::move(r));
    }
    if (rows.size() < 2) throw DataError(source + ": at least 2 data rows are required");

    const auto n = static_cast<Eigen::Index>(rows.size());
    Matrix x(n, static_cast<Eigen::Index>(xs.size()));
    Matrix y(n, static_cast<Eigen::Index>(ys.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index xi = 0, yi = 0;
        for (std::size_t c = 0; c < header.size(); ++c) {
            const double v = rows[static_cast<std::size_t>(i)][c];
            if (role[c] == 0) x(i, xi++) = v;
            else y(i, yi++) = v;
        }
    }
    return DataSet(std::move(x), std::move(y), std::move(xs), std::move(ys));
}

inline DataSet load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file '" + path + "'");
    return parse_dataset(in, path);
}

/// Writes inputs then outputs with their labels, using round-trip precision.
inline void write_dataset(std::ostream& out, const DataSet& data) {
    bool first = true;
    for (const auto& l : data.input_labels()) {
        out << (first ? "" : ",") << l;
        first = false;
    }
    for (const auto& l : data.output_labels()) out << "," << l;
    out << "\n";
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        for (Eigen::Index j = 0; j < data.inputs().cols(); ++j) {
            out << (j ? "," : "") << detail::format_double(data.inputs()(i, j));
        }
        for (Eigen::Index j = 0; j < data.outputs().cols(); ++j) {
            out << "," << detail::format_double(data.outputs()(i, j));
        }
        out << "\n";
    }
}

inline void save_dataset(const std::string& path, const DataSet& data) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write data file '" + path + "'");
    write_dataset(out, data);
    if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace kgsa
