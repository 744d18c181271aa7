#pragma once

// Seven-level classical rate-equation engine.
//
// The generator M (MHz) acts on population column vectors in the shared
// basis {g+1, g0, g-1, e+1, e0, e-1, s}: dP/dt = M P with t in us, or
// equivalently exp(M * t_ns * 1e-3) for t in ns.

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "vbsim/types.hpp"

namespace vbsim {

using Matrix7d = Eigen::Matrix<double, 7, 7>;
using Vector7d = Eigen::Matrix<double, 7, 1>;

struct RateMatrix {
  Matrix7d M = Matrix7d::Zero();  // MHz

  // Column sums must vanish (probability conservation).
  double max_column_sum() const {
    return M.colwise().sum().cwiseAbs().maxCoeff();
  }
};

// Incoherent microwave population transfer between g0 and g+-1.
struct MwMixing {
  double omega_p1 = 0.0;  // g0 <-> g+1, MHz
  double omega_m1 = 0.0;  // g0 <-> g-1, MHz
};

struct PopulationTrajectory {
  std::vector<double> times_ns;
  std::vector<LevelPopulations> states;

  // Total excited-manifold population at sample i.
  double excited(std::size_t i) const {
    const auto& p = states[i].p;
    return p[kEp1] + p[kE0] + p[kEm1];
  }
};

// The 7x7 generator, optionally with microwave mixing terms.
RateMatrix build_rate_matrix(const ElectronicRates& rates,
                             std::optional<MwMixing> mw = std::nullopt);

// Propagate p0 to each requested time (ns, strictly increasing) via the
// matrix exponential.
PopulationTrajectory evolve_populations(const RateMatrix& m,
                                        const LevelPopulations& p0,
                                        const std::vector<double>& times_ns);

// Normalized kernel vector of M. Throws DegeneracyError if the kernel is
// not one-dimensional (second singular value below 1e-8 * ||M||).
LevelPopulations steady_state(const RateMatrix& m);

// p = P0 / (P0 + P+1 + P-1) with P_ms summed over ground and excited.
double polarization(const LevelPopulations& p);

enum class MwDrive {
  kSingleTransition,  // mixing on g0 <-> g-1 only
  kBothTransitions,   // mixing on both g0 <-> g+-1
};

// CW-ODMR contrast 1 - PL_on/PL_off from steady-state excited population.
double odmr_contrast(const ElectronicRates& rates, double omega_MHz,
                     double gamma_P_MHz,
                     MwDrive drive = MwDrive::kSingleTransition);

// Unit-amplitude differential PL decay
//   exp(-(gamma_E + r*gamma_ISC) t) - exp(-(gamma_E + gamma_ISC) t).
double differential_decay(const ElectronicRates& rates, double t_ns);

// Cached spectral propagator for evaluating exp(M t) p0 at many times.
// Falls back to per-step matrix exponentials if the eigenbasis is
// ill-conditioned.
class RatePropagator {
 public:
  explicit RatePropagator(const RateMatrix& m);

  Vector7d at(const Vector7d& p0, double t_ns) const;

  // Time average of the total excited population over
  // [t_start, t_start + window].
  double excited_window_average(const Vector7d& p0, double t_start_ns,
                                double window_ns) const;

  bool spectral() const { return spectral_; }

 private:
  Matrix7d m_;
  bool spectral_ = false;
  Eigen::Matrix<std::complex<double>, 7, 7> v_, vinv_;
  Eigen::Matrix<std::complex<double>, 7, 1> eig_;  // 1/us
};

}  // namespace vbsim
