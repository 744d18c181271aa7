#pragma once

// Non-intrinsic experimental effects: Gaussian beam sector averaging,
// instrument-response convolution, AOM turn-on ramp, pi-pulse fidelity,
// background fluorescence, readout-window averaging.

#include <array>
#include <functional>
#include <vector>

#include "vbsim/types.hpp"

namespace vbsim {

// Gaussian beam discretized into five intensity sectors, each contributing
// a relative pump intensity; the area fractions default to equal-power
// annuli (20% each), overridable.
struct BeamModel {
  std::array<double, 5> sector_weights = {0.923, 0.485, 0.134, 0.0194,
                                          0.00148};
  std::array<double, 5> sector_fractions = {0.2, 0.2, 0.2, 0.2, 0.2};

  void validate() const {
    double s = 0;
    for (double f : sector_fractions) s += f;
    if (std::abs(s - 1.0) > 1e-12)
      throw InvalidArgument("BeamModel: sector fractions must sum to 1");
  }
};

struct IRFModel {
  double fwhm_ps = 140.0;

  void validate() const {
    if (!(fwhm_ps > 0)) throw InvalidArgument("IRFModel: fwhm must be > 0");
  }
};

// Effective pi-pulse fidelity, linear in the pumping rate. Clamped to [0,1].
struct FidelityModel {
  double f0 = 1.0;
  double slope_per_MHz = 0.0;

  double at(double gamma_P_MHz) const {
    double f = f0 + slope_per_MHz * gamma_P_MHz;
    return f < 0.0 ? 0.0 : (f > 1.0 ? 1.0 : f);
  }

  // Measured fidelity lines for the two nitrogen isotopes.
  static FidelityModel n14() { return {0.615, -0.00341}; }
  static FidelityModel n15() { return {0.499, -0.00307}; }
};

// Weighted average of simulate(w * gamma_P0) over beam sectors.
std::vector<double> beam_average(
    const BeamModel& model,
    const std::function<std::vector<double>(double)>& simulate,
    double gamma_P0_MHz);

// Discrete Gaussian convolution with unit-sum kernel and constant edge
// extension. The trace must be uniformly sampled with dt <= fwhm/4.
std::vector<double> convolve_irf(const std::vector<double>& trace,
                                 double dt_ns, const IRFModel& model);

// Linear AOM turn-on: min(t/40ns, 1).
double aom_ramp(double t_ns, double ramp_ns = 40.0);

enum class PiTransition { kZeroToPlus, kZeroToMinus };

// Transfer a fraction f between the two ground sublevels; conserves total.
LevelPopulations apply_pi_pulse(const LevelPopulations& p,
                                PiTransition transition, double f);

// Time average of the final `window_ns` of a uniformly sampled trace.
double readout_average(const std::vector<double>& trace, double dt_ns,
                       double window_ns);

// contrast = (sig + b) / (ref + b)
double background_contrast(double sig, double ref, double b);

}  // namespace vbsim
