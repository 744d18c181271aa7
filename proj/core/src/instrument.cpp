#include "vbsim/instrument.hpp"

#include <cmath>

namespace vbsim {

std::vector<double> beam_average(
    const BeamModel& model,
    const std::function<std::vector<double>(double)>& simulate,
    double gamma_P0_MHz) {
  model.validate();
  std::vector<double> out;
  for (std::size_t i = 0; i < model.sector_weights.size(); ++i) {
    std::vector<double> trace =
        simulate(model.sector_weights[i] * gamma_P0_MHz);
    if (out.empty()) out.assign(trace.size(), 0.0);
    if (trace.size() != out.size())
      throw InvalidArgument("beam_average: sector traces differ in length");
    for (std::size_t j = 0; j < trace.size(); ++j)
      out[j] += model.sector_fractions[i] * trace[j];
  }
  return out;
}

std::vector<double> convolve_irf(const std::vector<double>& trace,
                                 double dt_ns, const IRFModel& model) {
  model.validate();
  if (!(dt_ns > 0)) throw InvalidArgument("convolve_irf: dt must be > 0");
  const double fwhm_ns = model.fwhm_ps * 1e-3;
  if (dt_ns > fwhm_ns / 4.0)
    throw InvalidArgument(
        "convolve_irf: sampling step too coarse to resolve the response "
        "function (need dt <= fwhm/4)");
  const double sigma = fwhm_ns / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const int half = static_cast<int>(std::ceil(5.0 * sigma / dt_ns));
  std::vector<double> kernel(2 * half + 1);
  double ksum = 0.0;
  for (int i = -half; i <= half; ++i) {
    double x = i * dt_ns / sigma;
    kernel[i + half] = std::exp(-0.5 * x * x);
    ksum += kernel[i + half];
  }
  for (double& k : kernel) k /= ksum;

  const int n = static_cast<int>(trace.size());
  std::vector<double> out(trace.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = -half; j <= half; ++j) {
      int idx = i + j;
      if (idx < 0) idx = 0;
      if (idx >= n) idx = n - 1;
      acc += kernel[j + half] * trace[idx];
    }
    out[i] = acc;
  }
  return out;
}

double aom_ramp(double t_ns, double ramp_ns) {
  if (t_ns <= 0) return 0.0;
  return t_ns >= ramp_ns ? 1.0 : t_ns / ramp_ns;
}

LevelPopulations apply_pi_pulse(const LevelPopulations& p,
                                PiTransition transition, double f) {
  if (f < 0.0 || f > 1.0)
    throw InvalidArgument("apply_pi_pulse: fidelity must be in [0, 1]");
  LevelPopulations out = p;
  const int other = transition == PiTransition::kZeroToPlus ? kGp1 : kGm1;
  const double a = p.p[kG0];
  const double b = p.p[other];
  out.p[kG0] = (1.0 - f) * a + f * b;
  out.p[other] = f * a + (1.0 - f) * b;
  return out;
}

double readout_average(const std::vector<double>& trace, double dt_ns,
                       double window_ns) {
  if (trace.empty()) throw InvalidArgument("readout_average: empty trace");
  if (!(dt_ns > 0) || !(window_ns > 0))
    throw InvalidArgument("readout_average: dt and window must be > 0");
  int m = static_cast<int>(std::round(window_ns / dt_ns)) + 1;
  if (m < 1) m = 1;
  if (m > static_cast<int>(trace.size())) m = static_cast<int>(trace.size());
  double acc = 0.0;
  for (int i = static_cast<int>(trace.size()) - m;
       i < static_cast<int>(trace.size()); ++i)
    acc += trace[i];
  return acc / m;
}

double background_contrast(double sig, double ref, double b) {
  if (ref + b == 0.0)
    throw DomainError("background_contrast: reference + background is zero");
  return (sig + b) / (ref + b);
}

}  // namespace vbsim
