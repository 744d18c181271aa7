#pragma once

// Simultaneous nonlinear least-squares estimation of the universal
// electronic rates from PL-trace and spin-resolved datasets, with
// per-dataset nuisance parameters, the tau0/tau1 lifetime constraints
// enforced by reparameterization, profile-likelihood bounds on r, and the
// single-exponential effective-rate fit used for the NV cross-check.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vbsim/instrument.hpp"
#include "vbsim/protocols.hpp"
#include "vbsim/types.hpp"

namespace vbsim {

enum class DatasetKind { kPlTrace, kSpinResolved, kDifferential, kNvP0 };

std::string dataset_kind_name(DatasetKind kind);
DatasetKind dataset_kind_from(const std::string& name);

struct Dataset {
  DatasetKind kind = DatasetKind::kPlTrace;
  int channel = 0;           // spin_resolved: readout sublevel -1 / 0 / +1
  std::string isotope = "none";
  double power_mW = 0.0;
  double irf_fwhm_ps = 0.0;  // differential: 0 disables the response kernel
  // Datasets recorded through the same optical path (e.g. the readout
  // channels of one power setting) can share a single {alpha, b} block:
  // >= 0 selects a shared block id, -1 keeps a private block. Sharing is
  // what lets relative channel amplitudes inform the rate parameters.
  int amp_group = -1;
  std::vector<double> times_ns;
  std::vector<double> signal;
  std::vector<double> weights;  // empty = unit weights

  void validate() const;
};

// CSV with header t_ns,signal[,weight]; metadata in a JSON sidecar with the
// same basename and a .json extension.
void write_dataset(const Dataset& ds, const std::string& csv_path);
Dataset read_dataset(const std::string& csv_path);

// Lifetime reparameterization: gamma_ISC = (1/tau1 - 1/tau0) * 1e3 / (1-r),
// gamma_E = 1e3/tau1 - gamma_ISC; gamma_1/gamma_2 carried from `base`.
ElectronicRates rates_from_taus(double tau0_ns, double tau1_ns, double r,
                                double gamma_s, double k,
                                const ElectronicRates& base);

struct FitProblem {
  std::vector<Dataset> datasets;
  ElectronicRates base;  // supplies gamma_1 / gamma_2 (not fitted)

  // Box bounds. The lifetime windows are the measured tau0/tau1 intervals.
  double tau0_lo = 1.09, tau0_hi = 1.27;  // ns
  double tau1_lo = 0.42, tau1_hi = 0.52;  // ns
  double r_hi = 0.1;
  double gamma_s_hi = 1e3;

  // Initial guesses (start 0 of the multi-start schedule).
  double tau0_init = 1.18, tau1_init = 0.47;
  double r_init = 0.02, gamma_s_init = 20.0, k_init = 0.3;
  double alpha_init = 1.5, b_init = 0.01;
  double f0_init = 0.6, fslope_init = -0.003;
};

struct FitOptions {
  int n_starts = 8;
  std::uint64_t seed = 20250826;  // start j draws from mt19937_64(seed + j)
  int max_iterations = 200;
  double function_tolerance = 1e-12;
  std::map<std::string, double> fixed;  // global names, e.g. {"r", 0.0}
  BeamModel beam;
  double ramp_substep_ns = 1.0;
};

struct FitResult {
  // Globals: tau0_ns, tau1_ns, r, gamma_s, k plus derived gamma_ISC,
  // gamma_E; per-isotope fidelity f0[<iso>], fslope[<iso>]; per-dataset
  // alpha[<i>], b[<i>].
  std::map<std::string, double> values;
  std::map<std::string, double> sigmas;  // NaN when not identifiable
  double residual_norm = 0.0;
  double initial_residual_norm = 0.0;
  bool converged = false;
  bool identifiable = false;
  int iterations = 0;
  std::string message;
  std::vector<double> start_costs;  // final cost per start
};

// Weighted residuals (model - data) concatenated across datasets, at the
// named parameter values. Forward-model failures are rethrown as
// DomainError naming the dataset.
std::vector<double> residuals(const FitProblem& problem,
                              const std::map<std::string, double>& params,
                              const FitOptions& options = FitOptions{});

// Bounded trust-region least squares with multi-start; never throws on
// non-convergence (the result is flagged instead).
FitResult fit(const FitProblem& problem,
              const FitOptions& options = FitOptions{});

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
};

// Ordinary least squares of fidelity vs pumping rate; throws
// DegeneracyError when all abscissas coincide.
LineFit fidelity_line_fit(
    const std::vector<std::pair<double, double>>& gamma_P_fidelity);

struct ProfileBound {
  double lower = 0.0;
  double upper = 0.0;
  bool open = false;  // scan never crossed the threshold above the optimum
  std::vector<std::pair<double, double>> scan;  // (r, cost)
};

// Profile-likelihood scan over r with re-optimized nuisances. The bound is
// where the cost exceeds cost_min + delta_chi2 * s^2 (s^2 = residual
// variance estimate).
ProfileBound profile_bound_r(const FitProblem& problem,
                             const FitResult& fitted, double delta_chi2 = 4.0,
                             int n_grid = 21,
                             const FitOptions& options = FitOptions{});

// --- NV effective-model pipeline ---

struct NvFitOptions {
  NvRateForm form = NvRateForm::kSaturation;
  int max_iterations = 200;
};

struct NvFitResult {
  double alpha = 0.0;         // MHz/mW
  double gamma_s_star = 0.0;  // MHz
  double r = 0.0;             // (gamma_s_star - gamma_s) / gamma_ISC
  double residual_norm = 0.0;
  bool converged = false;
  std::vector<double> plateaus;    // A per dataset
  std::vector<double> amplitudes;  // B per dataset
};

// Fit A_i - B_i exp(-Gamma_eff(alpha P_i) t) to nv_p0 datasets and convert
// the shared saturation rate to a branching ratio.
NvFitResult fit_nv_effective(const std::vector<Dataset>& datasets,
                             double gamma_s_MHz, double gamma_ISC_MHz,
                             const NvFitOptions& options = NvFitOptions{});

// --- Synthetic suites (generate-and-refit oracles) ---

struct VbSuiteOptions {
  std::vector<double> powers_mW = {10, 25, 50, 100, 200};
  double alpha = 1.864;      // MHz/mW
  double background = 0.02;
  double noise_frac = 0.01;  // multiplicative Gaussian
  std::uint64_t seed = 20250826;
  int n_times = 40;
  double t_min_ns = 1.0, t_max_ns = 3000.0;
  bool include_pl = true;
  std::vector<int> channels = {0, -1, +1};
  // Pulsed excited-state differential decay; it pins the two lifetimes,
  // which the turn-on and repolarization curves only constrain weakly.
  bool include_differential = true;
  double diff_rep_MHz = 39.0;
  double diff_dt_ns = 0.025;
  double diff_irf_fwhm_ps = 140.0;
  double diff_amplitude = 0.8;
  BeamModel beam;
};

// Spin-resolved channels for both isotopes (fidelity lines f(Gamma_P)
// differ) plus PL traces and one differential-decay trace, from the rate
// engine with beam averaging. The readout channels of each
// (isotope, power) setting share an amplitude group.
std::vector<Dataset> synthetic_vb_suite(const ElectronicRates& truth,
                                        const VbSuiteOptions& options =
                                            VbSuiteOptions{});

struct NvSuiteOptions {
  std::vector<double> powers_mW = {25, 50, 100, 200, 400, 800, 1600};
  double alpha = 0.24;      // MHz/mW
  double prep_fidelity = 0.8;
  double readout_window_ns = 500.0;
  double noise_frac = 0.01;
  std::uint64_t seed = 20250826;
  int n_times = 60;
  double t_min_ns = 100.0, t_max_ns = 2000.0;
};

// P0-channel recovery curves under uniform illumination.
std::vector<Dataset> synthetic_nv_suite(const ElectronicRates& nv_truth,
                                        const NvSuiteOptions& options =
                                            NvSuiteOptions{});

// --- Reports ---

std::string fit_report_json(const FitResult& result);
std::string fit_report_text(const FitResult& result);

}  // namespace vbsim
