#pragma once

// Minimal CSV reading/writing used by the exporters and the dataset loader.
// Numbers are written with round-trip precision so identical inputs give
// byte-identical files.

#include <string>
#include <vector>

#include "vbsim/rate_model.hpp"

namespace vbsim {

std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

// Parse a CSV with a header line; throws InvalidArgument naming file and
// line on malformed input.
CsvTable read_csv(const std::string& path);

void write_csv(const std::string& path, const CsvTable& table);

// Trajectory export: columns t_ns, then the seven basis labels.
CsvTable trajectory_table(const PopulationTrajectory& traj);

}  // namespace vbsim
