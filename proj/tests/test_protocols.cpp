#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "vbsim/config.hpp"
#include "vbsim/protocols.hpp"

using namespace vbsim;

TEST_CASE("PL trace: output grid is exact and refinement-stable") {
  ElectronicRates r = preset("vb-this-work");
  PlProtocolOptions a;
  a.tmax_ns = 1000.0;
  a.n_times = 50;
  SimulatedMeasurement ma = pl_time_trace_protocol(r, 10.0, 1.864, a);
  REQUIRE(ma.grid.size() == 50);
  CHECK(ma.grid.front() == doctest::Approx(0.0));
  CHECK(ma.grid.back() == doctest::Approx(1000.0));
  CHECK(std::isfinite(ma.saturation));
  CHECK(ma.signal.back() == doctest::Approx(ma.saturation).epsilon(1e-3));

  // Requesting a denser grid must not change values at shared times.
  PlProtocolOptions b = a;
  b.n_times = 99;  // shares every other point with the 50-point grid
  SimulatedMeasurement mb = pl_time_trace_protocol(r, 10.0, 1.864, b);
  for (int i = 0; i < 50; ++i)
    CHECK(mb.signal[2 * i] == doctest::Approx(ma.signal[i]).epsilon(1e-9));

  // Refining the ramp substep changes the result only slightly.
  PlProtocolOptions c = a;
  c.ramp_substep_ns = 0.125;
  SimulatedMeasurement mc = pl_time_trace_protocol(r, 10.0, 1.864, c);
  for (int i = 0; i < 50; ++i)
    CHECK(std::abs(mc.signal[i] - ma.signal[i]) < 1e-4);
}

TEST_CASE("PL trace: rate and density-matrix engines agree") {
  ElectronicRates r = preset("vb-this-work-r004");
  PlProtocolOptions opt;
  opt.tmax_ns = 600.0;
  opt.n_times = 30;
  opt.engine.engine = Engine::kRate;
  SimulatedMeasurement rate = pl_time_trace_protocol(r, 10.0, 1.864, opt);
  opt.engine.engine = Engine::kLindblad;
  opt.engine.system = spin_system_bare();
  opt.engine.field = MagneticField{12.0, 0.0};
  SimulatedMeasurement lb = pl_time_trace_protocol(r, 10.0, 1.864, opt);
  REQUIRE(rate.signal.size() == lb.signal.size());
  for (std::size_t i = 0; i < rate.signal.size(); ++i)
    CHECK(std::abs(rate.signal[i] - lb.signal[i]) < 1e-5);
}

TEST_CASE("spin-resolved: zero pulse fidelity gives a flat steady signal") {
  ElectronicRates r = preset("vb-this-work");
  std::vector<double> grid = {1.0, 10.0, 100.0, 1000.0};
  SimulatedMeasurement m = spin_resolved_protocol(
      r, 10.0, 1.864, FidelityModel{0.0, 0.0}, -1, grid);
  for (double v : m.signal)
    CHECK(v == doctest::Approx(m.signal.front()).epsilon(1e-9));
}

TEST_CASE("spin-resolved: -1 readout recovers toward the 0 readout level") {
  ElectronicRates r = preset("vb-this-work");
  std::vector<double> grid = {1.0, 5.0, 20.0, 100.0, 500.0, 3000.0};
  FidelityModel f = FidelityModel::n15();
  SimulatedMeasurement m0 =
      spin_resolved_protocol(r, 10.0, 1.864, f, 0, grid);
  SimulatedMeasurement mm =
      spin_resolved_protocol(r, 10.0, 1.864, f, -1, grid);
  // The 0 channel brightens as the laser repolarizes the spin into m_s = 0.
  CHECK(m0.signal.back() > m0.signal.front());
  // At steady state the unswapped (m_s = 0) channel is the brighter one.
  CHECK(m0.signal.back() > mm.signal.back());
  // The -1 channel at long times reads the pulse applied to the laser-on
  // steady state, which is what the 0 channel sees right after the prep
  // pulse.
  CHECK(mm.signal.back() ==
        doctest::Approx(m0.signal.front()).epsilon(2e-2));
}

TEST_CASE("differential decay trace peaks near the lifetime scale") {
  ElectronicRates r = preset("vb-this-work");
  DifferentialOptions opt;
  SimulatedMeasurement m = excited_state_differential_protocol(r, 39.0, opt);
  // Grid spans one pulse period.
  CHECK(m.grid.back() == doctest::Approx(1e3 / 39.0).epsilon(1e-6));
  auto it = std::max_element(m.signal.begin(), m.signal.end());
  double t_peak = m.grid[std::distance(m.signal.begin(), it)];
  CHECK(*it > 0.0);
  CHECK(t_peak > 0.3);
  CHECK(t_peak < 1.5);
  // Too slow a repetition rate for the lifetimes is rejected.
  CHECK_THROWS_AS(excited_state_differential_protocol(r, 5000.0, opt),
                  InvalidArgument);
}

TEST_CASE("CW-ODMR resolves the hyperfine multiplet") {
  ElectronicRates r = preset("vb-this-work-r004");
  r.gamma_P = 20.0;
  auto count_peaks = [](const SimulatedMeasurement& m) {
    int n = 0;
    for (std::size_t i = 1; i + 1 < m.signal.size(); ++i)
      // The outermost hyperfine lines carry a single nuclear configuration
      // out of 27, so the amplitude floor has to sit well below them.
      if (m.signal[i] > m.signal[i - 1] && m.signal[i] >= m.signal[i + 1] &&
          m.signal[i] > 0.003)
        ++n;
    return n;
  };
  SpinSystemConfig c14 = spin_system_n14();
  MagneticField B{12.0, 0.0};
  // Lower branch only: 2I_tot + 1 = 7 lines for three 14N, 4 for three 15N.
  std::vector<double> f;
  double center = c14.D_gs - c14.gamma_e * 12.0;
  for (int i = 0; i <= 800; ++i) f.push_back(center - 200.0 + 0.5 * i);
  SimulatedMeasurement m14 = cw_odmr_spectrum(c14, r, B, f, 2.0);
  CHECK(count_peaks(m14) == 7);
  SimulatedMeasurement m15 = cw_odmr_spectrum(spin_system_n15(), r, B, f, 2.0);
  CHECK(count_peaks(m15) == 4);
}

TEST_CASE("NV effective rate forms") {
  NvModelOptions sat;
  NvModelOptions add;
  add.form = NvRateForm::kAdditive;
  double alpha = 0.2, gs = 5.0, P = 100.0;
  // Saturation form: slower than both limits.
  double g_sat = 1.0 / (1.0 / (alpha * P) + 1.0 / gs);
  double t = 100.0;
  CHECK(nv_effective_model(alpha, gs, P, t, sat) ==
        doctest::Approx(1.0 - std::exp(-g_sat * 1e-3 * t)).epsilon(1e-12));
  CHECK(nv_effective_model(alpha, gs, P, t, add) ==
        doctest::Approx(1.0 - std::exp(-(alpha * P + gs) * 1e-3 * t))
            .epsilon(1e-12));
  // t = 0 starts at zero; long times saturate at the amplitude.
  CHECK(nv_effective_model(alpha, gs, P, 0.0, sat) == doctest::Approx(0.0));
  CHECK(nv_effective_model(alpha, gs, P, 1e9, sat) == doctest::Approx(1.0));
}
