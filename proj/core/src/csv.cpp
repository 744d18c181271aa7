#include "vbsim/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace vbsim {

std::string format_double(double v) {
  char buf[32];
  // %.17g round-trips; trim to the shortest representation that does.
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) break;
  }
  return buf;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open CSV file: " + path);
  CsvTable t;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (lineno == 1) {
      t.header = cells;
      continue;
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      double v;
      auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
      if (ec != std::errc() || ptr != c.data() + c.size())
        throw InvalidArgument(path + ":" + std::to_string(lineno) +
                              ": malformed number '" + c + "'");
      row.push_back(v);
    }
    if (!t.header.empty() && row.size() != t.header.size())
      throw InvalidArgument(path + ":" + std::to_string(lineno) +
                            ": wrong column count");
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open CSV for writing: " + path);
  for (std::size_t i = 0; i < table.header.size(); ++i)
    out << (i ? "," : "") << table.header[i];
  out << "\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << (i ? "," : "") << format_double(row[i]);
    out << "\n";
  }
}

CsvTable trajectory_table(const PopulationTrajectory& traj) {
  CsvTable t;
  t.header = {"t_ns"};
  for (const auto& l : kLevelLabels) t.header.push_back(l);
  for (std::size_t i = 0; i < traj.times_ns.size(); ++i) {
    std::vector<double> row{traj.times_ns[i]};
    for (int j = 0; j < 7; ++j) row.push_back(traj.states[i].p[j]);
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace vbsim
