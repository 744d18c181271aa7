#include "vbsim/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <ceres/ceres.h>
#include <json.hpp>

#include "vbsim/csv.hpp"
#include "vbsim/rate_model.hpp"

namespace vbsim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Global block layout: [tau0_ns, tau1_ns, r, gamma_s, k].
const char* kGlobalNames[5] = {"tau0_ns", "tau1_ns", "r", "gamma_s", "k"};

std::string json_basename(const std::string& csv_path) {
  std::string p = csv_path;
  const std::size_t dot = p.find_last_of('.');
  const std::size_t slash = p.find_last_of('/');
  if (dot != std::string::npos &&
      (slash == std::string::npos || dot > slash))
    p.resize(dot);
  return p + ".json";
}

}  // namespace

std::string dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kPlTrace: return "pl_trace";
    case DatasetKind::kSpinResolved: return "spin_resolved";
    case DatasetKind::kDifferential: return "differential";
    case DatasetKind::kNvP0: return "nv_p0";
  }
  throw InvalidArgument("dataset_kind_name: unknown kind");
}

DatasetKind dataset_kind_from(const std::string& name) {
  if (name == "pl_trace") return DatasetKind::kPlTrace;
  if (name == "spin_resolved") return DatasetKind::kSpinResolved;
  if (name == "differential") return DatasetKind::kDifferential;
  if (name == "nv_p0") return DatasetKind::kNvP0;
  throw InvalidArgument("dataset_kind_from: unknown kind '" + name + "'");
}

void Dataset::validate() const {
  if (times_ns.size() != signal.size() || times_ns.empty())
    throw InvalidArgument("Dataset: times/signal size mismatch or empty");
  if (!weights.empty() && weights.size() != signal.size())
    throw InvalidArgument("Dataset: weights size mismatch");
  for (std::size_t i = 1; i < times_ns.size(); ++i)
    if (times_ns[i] < times_ns[i - 1])
      throw InvalidArgument("Dataset: times not sorted");
  for (double s : signal)
    if (!std::isfinite(s)) throw InvalidArgument("Dataset: non-finite signal");
  if (kind != DatasetKind::kDifferential && !(power_mW > 0.0))
    throw InvalidArgument("Dataset: power must be > 0");
  if (kind == DatasetKind::kSpinResolved &&
      (channel < -1 || channel > 1))
    throw InvalidArgument("Dataset: channel must be -1, 0 or +1");
}

void write_dataset(const Dataset& ds, const std::string& csv_path) {
  ds.validate();
  CsvTable table;
  table.header = {"t_ns", "signal"};
  if (!ds.weights.empty()) table.header.push_back("weight");
  for (std::size_t i = 0; i < ds.times_ns.size(); ++i) {
    std::vector<double> row = {ds.times_ns[i], ds.signal[i]};
    if (!ds.weights.empty()) row.push_back(ds.weights[i]);
    table.rows.push_back(std::move(row));
  }
  write_csv(csv_path, table);

  nlohmann::json meta;
  meta["kind"] = dataset_kind_name(ds.kind);
  meta["isotope"] = ds.isotope;
  meta["power_mW"] = ds.power_mW;
  if (ds.kind == DatasetKind::kSpinResolved) meta["channel"] = ds.channel;
  if (ds.kind == DatasetKind::kDifferential)
    meta["irf_fwhm_ps"] = ds.irf_fwhm_ps;
  if (ds.amp_group >= 0) meta["amp_group"] = ds.amp_group;
  std::ofstream out(json_basename(csv_path));
  if (!out)
    throw InvalidArgument("write_dataset: cannot write sidecar for " +
                          csv_path);
  out << meta.dump(2) << "\n";
}

Dataset read_dataset(const std::string& csv_path) {
  const CsvTable table = read_csv(csv_path);
  if (table.header.size() < 2 || table.header[0] != "t_ns" ||
      table.header[1] != "signal")
    throw InvalidArgument("read_dataset: " + csv_path +
                          ": expected header t_ns,signal[,weight]");
  Dataset ds;
  for (const auto& row : table.rows) {
    ds.times_ns.push_back(row.at(0));
    ds.signal.push_back(row.at(1));
    if (table.header.size() > 2) ds.weights.push_back(row.at(2));
  }

  std::ifstream in(json_basename(csv_path));
  if (!in)
    throw InvalidArgument("read_dataset: missing sidecar " +
                          json_basename(csv_path));
  nlohmann::json meta;
  try {
    in >> meta;
    ds.kind = dataset_kind_from(meta.at("kind").get<std::string>());
    ds.isotope = meta.value("isotope", std::string("none"));
    ds.power_mW = meta.value("power_mW", 0.0);
    ds.channel = meta.value("channel", 0);
    ds.irf_fwhm_ps = meta.value("irf_fwhm_ps", 0.0);
    ds.amp_group = meta.value("amp_group", -1);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("read_dataset: " + json_basename(csv_path) + ": " +
                      e.what());
  }
  ds.validate();
  return ds;
}

ElectronicRates rates_from_taus(double tau0_ns, double tau1_ns, double r,
                                double gamma_s, double k,
                                const ElectronicRates& base) {
  if (!(tau0_ns > 0.0) || !(tau1_ns > 0.0) || tau1_ns >= tau0_ns)
    throw InvalidArgument("rates_from_taus: need 0 < tau1 < tau0");
  if (r < 0.0 || r >= 1.0)
    throw InvalidArgument("rates_from_taus: need 0 <= r < 1");
  ElectronicRates rates = base;
  rates.gamma_ISC = 1e3 * (1.0 / tau1_ns - 1.0 / tau0_ns) / (1.0 - r);
  rates.gamma_E = 1e3 / tau1_ns - rates.gamma_ISC;
  rates.r = r;
  rates.gamma_s = gamma_s;
  rates.k = k;
  rates.validate();
  return rates;
}

namespace {

// Forward model for one dataset; g = global block, fid = fidelity block
// (spin-resolved only), dsp = {alpha, b}.
std::vector<double> dataset_model(const Dataset& ds,
                                  const ElectronicRates& base,
                                  const FitOptions& opt, const double* g,
                                  const double* fid, const double* dsp) {
  // Numeric differentiation probes slightly past the box bounds (e.g. a
  // central step across r = 0); clamp the probes so the model stays
  // defined there.
  const double r_c = std::clamp(g[2], 0.0, 1.0 - 1e-9);
  const double gs_c = std::max(g[3], 0.0);
  const double k_c = std::clamp(g[4], 0.0, 1.0);
  const ElectronicRates rates =
      rates_from_taus(g[0], g[1], r_c, gs_c, k_c, base);
  const double alpha = dsp[0];
  const double b = dsp[1];

  switch (ds.kind) {
    case DatasetKind::kPlTrace: {
      PlProtocolOptions po;
      po.times_ns = ds.times_ns;
      po.beam = opt.beam;
      po.background = b;
      po.ramp_substep_ns = opt.ramp_substep_ns;
      return pl_time_trace_protocol(rates, ds.power_mW, alpha, po).signal;
    }
    case DatasetKind::kSpinResolved: {
      SpinResolvedOptions so;
      so.beam = opt.beam;
      so.background = b;
      const FidelityModel fm{fid[0], fid[1]};
      return spin_resolved_protocol(rates, ds.power_mW, alpha, fm,
                                    ds.channel, ds.times_ns, so)
          .signal;
    }
    case DatasetKind::kDifferential: {
      // alpha doubles as the amplitude scale here.
      std::vector<double> out;
      out.reserve(ds.times_ns.size());
      for (double t : ds.times_ns)
        out.push_back(alpha * differential_decay(rates, t));
      if (ds.irf_fwhm_ps > 0.0) {
        const double dt = ds.times_ns.size() > 1
                              ? ds.times_ns[1] - ds.times_ns[0]
                              : 1.0;
        out = convolve_irf(out, dt, IRFModel{ds.irf_fwhm_ps});
      }
      for (double& v : out) v += b;
      return out;
    }
    case DatasetKind::kNvP0:
      throw InvalidArgument(
          "dataset_model: nv_p0 datasets are fitted with fit_nv_effective");
  }
  throw InvalidArgument("dataset_model: unknown kind");
}

struct ProblemLayout {
  std::vector<std::string> isotopes;  // with spin-resolved datasets
  std::vector<int> amp_block;         // per dataset: {alpha, b} block index
  int n_amp_blocks = 0;
  int iso_index(const std::string& iso) const {
    for (std::size_t i = 0; i < isotopes.size(); ++i)
      if (isotopes[i] == iso) return static_cast<int>(i);
    return -1;
  }
  static ProblemLayout from(const FitProblem& p) {
    ProblemLayout l;
    std::map<int, int> group_block;
    for (const auto& ds : p.datasets) {
      if (ds.kind == DatasetKind::kSpinResolved &&
          l.iso_index(ds.isotope) < 0)
        l.isotopes.push_back(ds.isotope);
      if (ds.amp_group >= 0) {
        auto [it, fresh] = group_block.try_emplace(ds.amp_group,
                                                   l.n_amp_blocks);
        if (fresh) ++l.n_amp_blocks;
        l.amp_block.push_back(it->second);
      } else {
        l.amp_block.push_back(l.n_amp_blocks++);
      }
    }
    return l;
  }
};

class DatasetCost {
 public:
  DatasetCost(const Dataset& ds, const ElectronicRates& base,
              const FitOptions& opt, bool has_fid)
      : ds_(ds), base_(base), opt_(opt), has_fid_(has_fid) {}

  bool operator()(double const* const* p, double* residuals) const {
    const double* g = p[0];
    const double* fid = has_fid_ ? p[1] : nullptr;
    const double* dsp = p[has_fid_ ? 2 : 1];
    try {
      const std::vector<double> m =
          dataset_model(ds_, base_, opt_, g, fid, dsp);
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double w = ds_.weights.empty() ? 1.0 : ds_.weights[i];
        residuals[i] = w * (m[i] - ds_.signal[i]);
      }
    } catch (const std::exception&) {
      return false;
    }
    return true;
  }

 private:
  const Dataset& ds_;
  const ElectronicRates& base_;
  const FitOptions& opt_;
  bool has_fid_;
};

struct ParamStorage {
  double global[5];
  std::vector<std::array<double, 2>> fid;  // per isotope: f0, slope
  std::vector<std::array<double, 2>> ds;   // per dataset: alpha, b

  // Allocate once; the vectors are registered with the optimizer by
  // pointer, so all later writes must be in place.
  void allocate(const FitProblem& p, const ProblemLayout& l) {
    fid.resize(l.isotopes.size());
    ds.resize(l.n_amp_blocks);
  }

  void set_initial(const FitProblem& p) {
    global[0] = p.tau0_init;
    global[1] = p.tau1_init;
    global[2] = p.r_init;
    global[3] = p.gamma_s_init;
    global[4] = p.k_init;
    for (auto& f : fid) f = {p.f0_init, p.fslope_init};
    for (auto& d : ds) d = {p.alpha_init, p.b_init};
  }

  void sample(const FitProblem& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uniform = [&](double lo, double hi) {
      return lo + (hi - lo) * u01(rng);
    };
    auto log_around = [&](double center) {
      return center * std::exp(uniform(-std::log(3.0), std::log(3.0)));
    };
    global[0] = uniform(p.tau0_lo, p.tau0_hi);
    global[1] = uniform(p.tau1_lo, p.tau1_hi);
    global[2] = uniform(0.0, p.r_hi);
    global[3] = std::min(log_around(p.gamma_s_init), p.gamma_s_hi);
    global[4] = uniform(0.0, 1.0);
    for (auto& f : fid) f = {uniform(0.3, 0.9), uniform(-0.006, 0.0)};
    for (auto& d : ds) d = {log_around(p.alpha_init), p.b_init * u01(rng)};
  }

  void copy_values_from(const ParamStorage& other) {
    for (int i = 0; i < 5; ++i) global[i] = other.global[i];
    for (std::size_t i = 0; i < fid.size(); ++i) fid[i] = other.fid[i];
    for (std::size_t i = 0; i < ds.size(); ++i) ds[i] = other.ds[i];
  }

  void apply_fixed(const std::map<std::string, double>& fixed) {
    for (int i = 0; i < 5; ++i) {
      auto it = fixed.find(kGlobalNames[i]);
      if (it != fixed.end()) global[i] = it->second;
    }
  }
};

}  // namespace

std::vector<double> residuals(const FitProblem& problem,
                              const std::map<std::string, double>& params,
                              const FitOptions& options) {
  const ProblemLayout layout = ProblemLayout::from(problem);
  ParamStorage store;
  store.allocate(problem, layout);
  store.set_initial(problem);
  for (const auto& [name, value] : params) {
    bool found = false;
    for (int i = 0; i < 5; ++i)
      if (name == kGlobalNames[i]) {
        store.global[i] = value;
        found = true;
      }
    for (std::size_t i = 0; i < layout.isotopes.size(); ++i) {
      if (name == "f0[" + layout.isotopes[i] + "]") {
        store.fid[i][0] = value;
        found = true;
      }
      if (name == "fslope[" + layout.isotopes[i] + "]") {
        store.fid[i][1] = value;
        found = true;
      }
    }
    for (std::size_t i = 0; i < problem.datasets.size(); ++i) {
      const std::string idx = std::to_string(i);
      if (name == "alpha[" + idx + "]") {
        store.ds[layout.amp_block[i]][0] = value;
        found = true;
      }
      if (name == "b[" + idx + "]") {
        store.ds[layout.amp_block[i]][1] = value;
        found = true;
      }
    }
    if (!found)
      throw InvalidArgument("residuals: unknown parameter '" + name + "'");
  }

  std::vector<double> out;
  for (std::size_t i = 0; i < problem.datasets.size(); ++i) {
    const Dataset& ds = problem.datasets[i];
    const int iso = layout.iso_index(ds.isotope);
    try {
      const std::vector<double> m = dataset_model(
          ds, problem.base, options, store.global,
          iso >= 0 ? store.fid[iso].data() : nullptr,
          store.ds[layout.amp_block[i]].data());
      for (std::size_t j = 0; j < m.size(); ++j) {
        const double w = ds.weights.empty() ? 1.0 : ds.weights[j];
        out.push_back(w * (m[j] - ds.signal[j]));
      }
    } catch (const std::exception& e) {
      throw DomainError("residuals: dataset " + std::to_string(i) + " (" +
                        dataset_kind_name(ds.kind) + "): " + e.what());
    }
  }
  return out;
}

FitResult fit(const FitProblem& problem, const FitOptions& options) {
  if (problem.datasets.empty())
    throw InvalidArgument("fit: at least one dataset required");
  for (const auto& ds : problem.datasets) ds.validate();
  const ProblemLayout layout = ProblemLayout::from(problem);

  ParamStorage store;
  store.allocate(problem, layout);
  store.set_initial(problem);
  store.apply_fixed(options.fixed);

  ceres::Problem ceres_problem;
  std::vector<double*> all_blocks;
  ceres_problem.AddParameterBlock(store.global, 5);
  all_blocks.push_back(store.global);
  for (auto& f : store.fid) {
    ceres_problem.AddParameterBlock(f.data(), 2);
    all_blocks.push_back(f.data());
  }
  for (auto& d : store.ds) {
    ceres_problem.AddParameterBlock(d.data(), 2);
    all_blocks.push_back(d.data());
  }

  std::size_t n_residuals = 0;
  for (std::size_t i = 0; i < problem.datasets.size(); ++i) {
    const Dataset& ds = problem.datasets[i];
    const int iso = layout.iso_index(ds.isotope);
    const bool has_fid = iso >= 0 && ds.kind == DatasetKind::kSpinResolved;
    auto* cost = new ceres::DynamicNumericDiffCostFunction<DatasetCost,
                                                           ceres::CENTRAL>(
        new DatasetCost(ds, problem.base, options, has_fid));
    cost->AddParameterBlock(5);
    if (has_fid) cost->AddParameterBlock(2);
    cost->AddParameterBlock(2);
    cost->SetNumResiduals(static_cast<int>(ds.signal.size()));
    n_residuals += ds.signal.size();
    std::vector<double*> blocks = {store.global};
    if (has_fid) blocks.push_back(store.fid[iso].data());
    blocks.push_back(store.ds[layout.amp_block[i]].data());
    ceres_problem.AddResidualBlock(cost, nullptr, blocks);
  }

  // Box bounds.
  ceres_problem.SetParameterLowerBound(store.global, 0, problem.tau0_lo);
  ceres_problem.SetParameterUpperBound(store.global, 0, problem.tau0_hi);
  ceres_problem.SetParameterLowerBound(store.global, 1, problem.tau1_lo);
  ceres_problem.SetParameterUpperBound(store.global, 1, problem.tau1_hi);
  ceres_problem.SetParameterLowerBound(store.global, 2, 0.0);
  ceres_problem.SetParameterUpperBound(store.global, 2, problem.r_hi);
  ceres_problem.SetParameterLowerBound(store.global, 3, 0.0);
  ceres_problem.SetParameterUpperBound(store.global, 3, problem.gamma_s_hi);
  ceres_problem.SetParameterLowerBound(store.global, 4, 0.0);
  ceres_problem.SetParameterUpperBound(store.global, 4, 1.0);
  for (auto& f : store.fid) {
    ceres_problem.SetParameterLowerBound(f.data(), 0, 0.0);
    ceres_problem.SetParameterUpperBound(f.data(), 0, 1.0);
    ceres_problem.SetParameterLowerBound(f.data(), 1, -0.1);
    ceres_problem.SetParameterUpperBound(f.data(), 1, 0.1);
  }
  for (auto& d : store.ds) {
    ceres_problem.SetParameterLowerBound(d.data(), 0, 1e-6);
    ceres_problem.SetParameterUpperBound(d.data(), 0, 1e4);
    ceres_problem.SetParameterLowerBound(d.data(), 1, 0.0);
    ceres_problem.SetParameterUpperBound(d.data(), 1, 1e3);
  }

  // Fixed global parameters via a subset manifold.
  std::vector<int> fixed_indices;
  for (int i = 0; i < 5; ++i)
    if (options.fixed.count(kGlobalNames[i])) fixed_indices.push_back(i);
  if (static_cast<int>(fixed_indices.size()) == 5)
    ceres_problem.SetParameterBlockConstant(store.global);
  else if (!fixed_indices.empty())
    ceres_problem.SetParameterization(
        store.global, new ceres::SubsetParameterization(5, fixed_indices));

  ceres::Solver::Options solver_options;
  solver_options.max_num_iterations = options.max_iterations;
  solver_options.function_tolerance = options.function_tolerance;
  solver_options.linear_solver_type = ceres::DENSE_QR;
  solver_options.logging_type = ceres::SILENT;

  FitResult result;
  {
    double cost0 = 0.0;
    ceres_problem.Evaluate(ceres::Problem::EvaluateOptions(), &cost0,
                           nullptr, nullptr, nullptr);
    result.initial_residual_norm = std::sqrt(2.0 * cost0);
  }

  double best_cost = std::numeric_limits<double>::infinity();
  ParamStorage best = store;
  ceres::Solver::Summary best_summary;
  const int n_starts = std::max(1, options.n_starts);
  for (int j = 0; j < n_starts; ++j) {
    if (j == 0)
      store.set_initial(problem);
    else
      store.sample(problem, options.seed + j);
    store.apply_fixed(options.fixed);

    ceres::Solver::Summary summary;
    ceres::Solve(solver_options, &ceres_problem, &summary);
    result.start_costs.push_back(summary.final_cost);
    if (summary.IsSolutionUsable() && summary.final_cost < best_cost) {
      best_cost = summary.final_cost;
      best.copy_values_from(store);
      best_summary = summary;
    }
  }
  store.copy_values_from(best);  // restore the best solution in place

  result.residual_norm = std::sqrt(2.0 * best_cost);
  result.converged =
      std::isfinite(best_cost) &&
      best_summary.termination_type == ceres::CONVERGENCE &&
      result.residual_norm <= result.initial_residual_norm + 1e-12;
  result.iterations =
      static_cast<int>(best_summary.iterations.size());
  result.message = best_summary.message;

  // Collect values.
  result.values["tau0_ns"] = store.global[0];
  result.values["tau1_ns"] = store.global[1];
  result.values["r"] = store.global[2];
  result.values["gamma_s"] = store.global[3];
  result.values["k"] = store.global[4];
  {
    const ElectronicRates rates =
        rates_from_taus(store.global[0], store.global[1], store.global[2],
                        store.global[3], store.global[4], problem.base);
    result.values["gamma_ISC"] = rates.gamma_ISC;
    result.values["gamma_E"] = rates.gamma_E;
  }
  for (std::size_t i = 0; i < layout.isotopes.size(); ++i) {
    result.values["f0[" + layout.isotopes[i] + "]"] = store.fid[i][0];
    result.values["fslope[" + layout.isotopes[i] + "]"] = store.fid[i][1];
  }
  for (std::size_t i = 0; i < problem.datasets.size(); ++i) {
    const auto& blk = store.ds[layout.amp_block[i]];
    result.values["alpha[" + std::to_string(i) + "]"] = blk[0];
    result.values["b[" + std::to_string(i) + "]"] = blk[1];
  }
  for (const auto& [name, v] : result.values) result.sigmas[name] = kNaN;

  // Curvature-based intervals; failure marks the fit non-identifiable.
  const int n_free = 5 - static_cast<int>(fixed_indices.size()) +
                     2 * static_cast<int>(store.fid.size()) +
                     2 * static_cast<int>(store.ds.size());
  if (static_cast<int>(n_residuals) > n_free) {
    ceres::Covariance::Options cov_options;
    cov_options.algorithm_type = ceres::DENSE_SVD;
    cov_options.null_space_rank = 0;
    ceres::Covariance covariance(cov_options);
    std::vector<std::pair<const double*, const double*>> pairs;
    for (double* b : all_blocks) pairs.emplace_back(b, b);
    if (covariance.Compute(pairs, &ceres_problem)) {
      result.identifiable = true;
      const double s2 = 2.0 * best_cost /
                        (static_cast<double>(n_residuals) - n_free);
      auto block_sigmas = [&](const double* block, int size,
                              const std::vector<std::string>& names) {
        std::vector<double> cov(size * size);
        covariance.GetCovarianceBlock(block, block, cov.data());
        for (int i = 0; i < size; ++i)
          result.sigmas[names[i]] = std::sqrt(
              std::max(0.0, cov[i * size + i] * s2));
      };
      block_sigmas(store.global, 5,
                   {"tau0_ns", "tau1_ns", "r", "gamma_s", "k"});
      for (std::size_t i = 0; i < layout.isotopes.size(); ++i)
        block_sigmas(store.fid[i].data(), 2,
                     {"f0[" + layout.isotopes[i] + "]",
                      "fslope[" + layout.isotopes[i] + "]"});
      for (std::size_t i = 0; i < problem.datasets.size(); ++i)
        block_sigmas(store.ds[layout.amp_block[i]].data(), 2,
                     {"alpha[" + std::to_string(i) + "]",
                      "b[" + std::to_string(i) + "]"});
    }
  }
  return result;
}

LineFit fidelity_line_fit(
    const std::vector<std::pair<double, double>>& gamma_P_fidelity) {
  const std::size_t n = gamma_P_fidelity.size();
  if (n < 2) throw InvalidArgument("fidelity_line_fit: need >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : gamma_P_fidelity) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double det = n * sxx - sx * sx;
  if (std::abs(det) < 1e-12 * std::max(1.0, sxx * n))
    throw DegeneracyError("fidelity_line_fit: abscissas are degenerate");
  LineFit lf;
  lf.slope = (n * sxy - sx * sy) / det;
  lf.intercept = (sy - lf.slope * sx) / n;
  return lf;
}

ProfileBound profile_bound_r(const FitProblem& problem,
                             const FitResult& fitted, double delta_chi2,
                             int n_grid, const FitOptions& options) {
  if (n_grid < 3) throw InvalidArgument("profile_bound_r: n_grid < 3");
  if (!fitted.converged)
    throw InvalidArgument("profile_bound_r: requires a converged fit");

  // Warm-start the per-point refits from the fitted solution.
  FitProblem warm = problem;
  warm.tau0_init = fitted.values.at("tau0_ns");
  warm.tau1_init = fitted.values.at("tau1_ns");
  warm.gamma_s_init = fitted.values.at("gamma_s");
  warm.k_init = fitted.values.at("k");
  FitOptions scan_options = options;
  scan_options.n_starts = 2;

  ProfileBound bound;
  std::size_t n_res = 0;
  for (const auto& ds : problem.datasets) n_res += ds.signal.size();
  int n_free = 4;  // globals minus r
  n_free += 2 * static_cast<int>(ProblemLayout::from(problem).isotopes.size());
  n_free += 2 * static_cast<int>(problem.datasets.size());

  for (int i = 0; i < n_grid; ++i) {
    const double rv = problem.r_hi * i / (n_grid - 1);
    scan_options.fixed = options.fixed;
    scan_options.fixed["r"] = rv;
    warm.r_init = rv;
    const FitResult res = fit(warm, scan_options);
    bound.scan.emplace_back(rv, res.residual_norm * res.residual_norm);
  }

  double chi2_min = std::numeric_limits<double>::infinity();
  int i_min = 0;
  for (int i = 0; i < n_grid; ++i)
    if (bound.scan[i].second < chi2_min) {
      chi2_min = bound.scan[i].second;
      i_min = i;
    }
  const double s2 =
      std::max(chi2_min / std::max<std::size_t>(1, n_res - n_free), 1e-30);
  const double thresh = chi2_min + delta_chi2 * s2;

  auto crossing = [&](int a, int b) {
    const double f = (thresh - bound.scan[a].second) /
                     (bound.scan[b].second - bound.scan[a].second);
    return bound.scan[a].first +
           f * (bound.scan[b].first - bound.scan[a].first);
  };

  bound.upper = problem.r_hi;
  bound.open = true;
  for (int i = i_min; i + 1 < n_grid; ++i)
    if (bound.scan[i + 1].second > thresh) {
      bound.upper = crossing(i, i + 1);
      bound.open = false;
      break;
    }
  bound.lower = 0.0;
  for (int i = i_min; i > 0; --i)
    if (bound.scan[i - 1].second > thresh) {
      bound.lower = crossing(i, i - 1);
      break;
    }
  return bound;
}

NvFitResult fit_nv_effective(const std::vector<Dataset>& datasets,
                             double gamma_s_MHz, double gamma_ISC_MHz,
                             const NvFitOptions& options) {
  if (datasets.empty())
    throw InvalidArgument("fit_nv_effective: no datasets");
  for (const auto& ds : datasets) {
    ds.validate();
    if (ds.kind != DatasetKind::kNvP0)
      throw InvalidArgument("fit_nv_effective: expected nv_p0 datasets");
  }
  if (!(gamma_ISC_MHz > 0.0))
    throw InvalidArgument("fit_nv_effective: gamma_ISC must be > 0");

  struct Cost {
    const Dataset& ds;
    NvRateForm form;
    bool operator()(double const* const* p, double* residuals) const {
      const double alpha = p[0][0], gss = p[0][1];
      const double A = p[1][0], B = p[1][1];
      NvModelOptions model;
      model.form = form;
      try {
        for (std::size_t i = 0; i < ds.signal.size(); ++i) {
          const double rise = nv_effective_model(alpha, gss, ds.power_mW,
                                                 ds.times_ns[i], model);
          residuals[i] = (A - B) + B * rise - ds.signal[i];
        }
      } catch (const std::exception&) {
        return false;
      }
      return true;
    }
  };

  double shared[2] = {0.2, 5.0};
  std::vector<std::array<double, 2>> amps;
  for (const auto& ds : datasets)
    amps.push_back({ds.signal.back(),
                    std::max(ds.signal.back() - ds.signal.front(), 1e-3)});

  ceres::Problem prob;
  prob.AddParameterBlock(shared, 2);
  prob.SetParameterLowerBound(shared, 0, 1e-6);
  prob.SetParameterUpperBound(shared, 0, 1e4);
  prob.SetParameterLowerBound(shared, 1, 1e-3);
  prob.SetParameterUpperBound(shared, 1, 1e4);
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    auto* cost =
        new ceres::DynamicNumericDiffCostFunction<Cost, ceres::CENTRAL>(
            new Cost{datasets[i], options.form});
    cost->AddParameterBlock(2);
    cost->AddParameterBlock(2);
    cost->SetNumResiduals(static_cast<int>(datasets[i].signal.size()));
    prob.AddResidualBlock(cost, nullptr, {shared, amps[i].data()});
    prob.SetParameterLowerBound(amps[i].data(), 0, 0.0);
  }

  ceres::Solver::Options so;
  so.max_num_iterations = options.max_iterations;
  so.linear_solver_type = ceres::DENSE_QR;
  so.logging_type = ceres::SILENT;
  ceres::Solver::Summary summary;
  ceres::Solve(so, &prob, &summary);

  NvFitResult result;
  result.alpha = shared[0];
  result.gamma_s_star = shared[1];
  result.r = (shared[1] - gamma_s_MHz) / gamma_ISC_MHz;
  result.residual_norm = std::sqrt(2.0 * summary.final_cost);
  result.converged = summary.IsSolutionUsable() &&
                     summary.termination_type == ceres::CONVERGENCE;
  for (const auto& a : amps) {
    result.plateaus.push_back(a[0]);
    result.amplitudes.push_back(a[1]);
  }
  return result;
}

std::vector<Dataset> synthetic_vb_suite(const ElectronicRates& truth,
                                        const VbSuiteOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto noisy = [&](std::vector<double> v) {
    if (options.noise_frac > 0.0)
      for (double& x : v) x *= 1.0 + options.noise_frac * gauss(rng);
    return v;
  };
  // The noise is multiplicative, so each point has sigma proportional to
  // the clean signal; weight residuals by 1/sigma so the low-signal
  // curves (which discriminate the singlet branching k) count as much as
  // the bright ones.
  auto sigma_weights = [&](const std::vector<double>& clean) {
    std::vector<double> w;
    if (options.noise_frac <= 0.0) return w;
    w.reserve(clean.size());
    for (double s : clean)
      w.push_back(1.0 / (options.noise_frac * std::max(std::abs(s), 1e-3)));
    return w;
  };

  std::vector<double> tgeom;
  for (int i = 0; i < options.n_times; ++i)
    tgeom.push_back(options.t_min_ns *
                    std::exp(std::log(options.t_max_ns / options.t_min_ns) *
                             i / (options.n_times - 1)));
  std::vector<double> tlin;
  for (int i = 0; i < options.n_times; ++i)
    tlin.push_back(options.t_max_ns * i / (options.n_times - 1));

  const std::vector<std::pair<std::string, FidelityModel>> isotopes = {
      {"14N", FidelityModel::n14()}, {"15N", FidelityModel::n15()}};

  std::vector<Dataset> suite;
  for (const auto& [iso, fid] : isotopes)
    for (double P : options.powers_mW) {
      for (int ch : options.channels) {
        SpinResolvedOptions so;
        so.beam = options.beam;
        so.background = options.background;
        const SimulatedMeasurement m = spin_resolved_protocol(
            truth, P, options.alpha, fid, ch, tgeom, so);
        Dataset ds;
        ds.kind = DatasetKind::kSpinResolved;
        ds.channel = ch;
        ds.isotope = iso;
        ds.power_mW = P;
        // Every illumination dataset runs through the same optical path on
        // one calibrated setup, so they all share one amplitude/background
        // block.  A separate block per dataset would let the amplitudes
        // absorb the excitation cross-section k and leave it unconstrained.
        ds.amp_group = 0;
        ds.times_ns = tgeom;
        ds.signal = noisy(m.signal);
        suite.push_back(std::move(ds));
      }
    }
  if (options.include_pl)
    for (double P : options.powers_mW) {
      PlProtocolOptions po;
      po.times_ns = tlin;
      po.beam = options.beam;
      po.background = options.background;
      const SimulatedMeasurement m =
          pl_time_trace_protocol(truth, P, options.alpha, po);
      Dataset ds;
      ds.kind = DatasetKind::kPlTrace;
      ds.isotope = "none";
      ds.power_mW = P;
      ds.amp_group = 0;
      ds.times_ns = tlin;
      ds.signal = noisy(m.signal);
      suite.push_back(std::move(ds));
    }
  if (options.include_differential) {
    Dataset ds;
    ds.kind = DatasetKind::kDifferential;
    ds.isotope = "none";
    ds.irf_fwhm_ps = options.diff_irf_fwhm_ps;
    const double period_ns = 1e3 / options.diff_rep_MHz;
    const int n = static_cast<int>(std::floor(period_ns / options.diff_dt_ns));
    for (int i = 0; i <= n; ++i) ds.times_ns.push_back(i * options.diff_dt_ns);
    std::vector<double> sig;
    sig.reserve(ds.times_ns.size());
    for (double t : ds.times_ns)
      sig.push_back(options.diff_amplitude * differential_decay(truth, t));
    if (options.diff_irf_fwhm_ps > 0.0)
      sig = convolve_irf(sig, options.diff_dt_ns,
                         IRFModel{options.diff_irf_fwhm_ps});
    for (double& v : sig) v += options.background;
    ds.signal = noisy(std::move(sig));
    suite.push_back(std::move(ds));
  }
  return suite;
}

std::vector<Dataset> synthetic_nv_suite(const ElectronicRates& nv_truth,
                                        const NvSuiteOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> tg;
  for (int i = 0; i < options.n_times; ++i)
    tg.push_back(options.t_min_ns + (options.t_max_ns - options.t_min_ns) *
                                        i / (options.n_times - 1));

  std::vector<Dataset> suite;
  for (double P : options.powers_mW) {
    ElectronicRates on = nv_truth;
    on.gamma_P = options.alpha * P;  // uniform illumination
    const RateMatrix m = build_rate_matrix(on);
    const RatePropagator prop(m);
    LevelPopulations init{steady_state(m).p};
    init = apply_pi_pulse(init, PiTransition::kZeroToMinus,
                          options.prep_fidelity);

    Dataset ds;
    ds.kind = DatasetKind::kNvP0;
    ds.isotope = "nv";
    ds.power_mW = P;
    ds.times_ns = tg;
    for (double t : tg) {
      const Vector7d pt = prop.at(init.p, t);
      double sig =
          prop.excited_window_average(pt, 0.0, options.readout_window_ns);
      if (options.noise_frac > 0.0)
        sig *= 1.0 + options.noise_frac * gauss(rng);
      ds.signal.push_back(sig);
    }
    suite.push_back(std::move(ds));
  }
  return suite;
}

std::string fit_report_json(const FitResult& result) {
  nlohmann::json j;
  for (const auto& [name, v] : result.values) j["values"][name] = v;
  for (const auto& [name, v] : result.sigmas)
    j["sigmas"][name] = std::isfinite(v) ? nlohmann::json(v)
                                         : nlohmann::json(nullptr);
  j["residual_norm"] = result.residual_norm;
  j["initial_residual_norm"] = result.initial_residual_norm;
  j["converged"] = result.converged;
  j["identifiable"] = result.identifiable;
  j["iterations"] = result.iterations;
  j["message"] = result.message;
  j["start_costs"] = result.start_costs;
  return j.dump(2) + "\n";
}

std::string fit_report_text(const FitResult& result) {
  std::ostringstream os;
  os << "fit " << (result.converged ? "converged" : "DID NOT CONVERGE")
     << (result.identifiable ? "" : " (not identifiable)") << "\n";
  os << "residual norm " << format_double(result.residual_norm) << " (from "
     << format_double(result.initial_residual_norm) << ")\n";
  for (const auto& [name, v] : result.values) {
    os << "  " << name << " = " << format_double(v);
    const double s = result.sigmas.at(name);
    if (std::isfinite(s)) os << " +- " << format_double(s);
    os << "\n";
  }
  return os.str();
}

}  // namespace vbsim
