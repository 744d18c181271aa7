#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "vbsim/csv.hpp"

using namespace vbsim;

TEST_CASE("format_double round-trips exactly") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.6789, -0.0, 2e17}) {
    CAPTURE(v);
    CHECK(std::stod(format_double(v)) == v);
  }
}

TEST_CASE("csv write/read round trip and byte-identical rewrites") {
  CsvTable t;
  t.header = {"t_ns", "signal"};
  t.rows = {{0.0, 1.0 / 3.0}, {1.5, 2e-7}, {3.0, -4.25}};
  std::string p1 = "/tmp/vbsim_test_csv_a.csv";
  std::string p2 = "/tmp/vbsim_test_csv_b.csv";
  write_csv(p1, t);
  CsvTable back = read_csv(p1);
  REQUIRE(back.header == t.header);
  REQUIRE(back.rows.size() == t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.rows[i].size(); ++j)
      CHECK(back.rows[i][j] == t.rows[i][j]);
  write_csv(p2, back);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("malformed csv names the file and line") {
  std::string p = "/tmp/vbsim_test_csv_bad.csv";
  {
    std::ofstream out(p);
    out << "a,b\n1.0,2.0\n3.0,potato\n";
  }
  CHECK_THROWS_WITH_AS(read_csv(p), doctest::Contains("csv_bad.csv:3"),
                       InvalidArgument);
  std::remove(p.c_str());
}

TEST_CASE("missing csv raises InvalidArgument") {
  CHECK_THROWS_AS(read_csv("/nonexistent/file.csv"), InvalidArgument);
}
