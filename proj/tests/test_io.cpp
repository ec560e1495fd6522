#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "kgsa/io.hpp"

using namespace kgsa;

namespace {

DataSet parse(const std::string& text) {
    std::istringstream in(text);
    return parse_dataset(in, "mem.csv");
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("three-row file", "[io]") {
    const DataSet d = parse("x1,x2,y1\n1,2,3\n4,5,6\n7,8,9\n");
    CHECK(d.size() == 3);
    CHECK(d.input_count() == 2);
    CHECK(d.output_count() == 1);
    CHECK(d.inputs()(2, 1) == 8.0);
    CHECK(d.outputs()(1, 0) == 6.0);
    CHECK(d.input_labels() == std::vector<std::string>{"x1", "x2"});
}

TEST_CASE("columns keep header order within their role", "[io]") {
    const DataSet d = parse("y_a, x_b ,x_a\n1,2,3\n4,5,6\n");
    CHECK(d.input_labels() == std::vector<std::string>{"x_b", "x_a"});
    CHECK(d.inputs()(0, 0) == 2.0);
    CHECK(d.inputs()(0, 1) == 3.0);
    CHECK(d.outputs()(1, 0) == 4.0);
}

TEST_CASE("blank lines, CRLF and exponents are accepted", "[io]") {
    const DataSet d = parse("x1,y1\r\n\r\n1e-3,+2\r\n-4.5E2,6\r\n");
    CHECK(d.size() == 2);
    CHECK(d.inputs()(0, 0) == 1e-3);
    CHECK(d.outputs()(0, 0) == 2.0);
    CHECK(d.inputs()(1, 0) == -450.0);
}

TEST_CASE("NaN cell names row and column", "[io]") {
    const std::string msg = error_of("x1,x2,y1\n1,2,3\n4,nan,6\n");
    CHECK_THAT(msg, Catch::Matchers::ContainsSubstring("line 3"));
    CHECK_THAT(msg, Catch::Matchers::ContainsSubstring("x2"));
    CHECK_THAT(error_of("x1,y1\n1,inf\n2,3\n"), Catch::Matchers::ContainsSubstring("y1"));
}

TEST_CASE("malformed files are rejected", "[io]") {
    CHECK_THAT(error_of(""), Catch::Matchers::ContainsSubstring("header"));
    CHECK_THAT(error_of("x1,y1\n1,2\n3\n"), Catch::Matchers::ContainsSubstring("line 3"));
    CHECK_THAT(error_of("x1,y1\n1,2\n3,abc\n"), Catch::Matchers::ContainsSubstring("abc"));
    CHECK_THAT(error_of("x1,y1\n1,2\n3,\n"), Catch::Matchers::ContainsSubstring("non-numeric"));
    CHECK_THAT(error_of("x1,x2\n1,2\n3,4\n"), Catch::Matchers::ContainsSubstring("output"));
    CHECK_THAT(error_of("y1,y2\n1,2\n3,4\n"), Catch::Matchers::ContainsSubstring("input"));
    CHECK_THAT(error_of("x1,z,y1\n1,2,3\n3,4,5\n"), Catch::Matchers::ContainsSubstring("'z'"));
    CHECK_THAT(error_of("x1,y1\n1,2\n"), Catch::Matchers::ContainsSubstring("2 data rows"));
    CHECK_THROWS_AS(load_dataset("/nonexistent/file.csv"), DataError);
}

TEST_CASE("write then parse is exact", "[io]") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    Matrix x(20, 3), y(20, 2);
    for (Eigen::Index i = 0; i < 20; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = nd(rng) * 1e3;
        for (Eigen::Index j = 0; j < 2; ++j) y(i, j) = nd(rng) * 1e-7;
    }
    const DataSet d(x, y);
    std::stringstream ss;
    write_dataset(ss, d);
    const DataSet back = parse_dataset(ss);
    CHECK(back.inputs() == d.inputs());
    CHECK(back.outputs() == d.outputs());
    CHECK(back.input_labels() == d.input_labels());
}

TEST_CASE("battery-shaped file with 19 inputs and 50 outputs", "[io]") {
    const auto path = std::filesystem::temp_directory_path() / "kgsa_lib_shaped.csv";
    {
        std::ofstream out(path);
        for (int j = 1; j <= 19; ++j) out << (j > 1 ? "," : "") << "x" << j;
        for (int j = 1; j <= 50; ++j) out << ",y" << j;
        out << "\n";
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> u;
        for (int i = 0; i < 40; ++i) {
            for (int j = 0; j < 69; ++j) out << (j ? "," : "") << detail::format_double(u(rng));
            out << "\n";
        }
    }
    const DataSet d = load_dataset(path.string());
    CHECK(d.input_count() == 19);
    CHECK(d.output_count() == 50);
    CHECK(d.size() == 40);
    CHECK(d.output_labels().back() == "y50");
    std::filesystem::remove(path);
}
