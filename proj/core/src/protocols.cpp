#include "vbsim/protocols.hpp"

#include <algorithm>
#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

namespace vbsim {

namespace {

std::string isotope_name(const SpinSystemConfig& cfg) {
  if (cfg.nuclei.empty()) return "none";
  const double spin = cfg.nuclei.front().spin;
  if (spin == 1.0) return "14N";
  if (spin == 0.5) return "15N";
  return "I=" + std::to_string(spin);
}

Vector7d unpolarized7() {
  return LevelPopulations::ground_unpolarized().p;
}

double excited_sum(const Vector7d& p) { return p[kEp1] + p[kE0] + p[kEm1]; }

// Evolve 7-level populations across [t0, t1] under a pump that follows the
// AOM ramp, stepping on absolute substep boundaries so the result does not
// depend on the output grid.
Vector7d advance_ramped_rate(const ElectronicRates& base, double gamma_P_peak,
                             Vector7d p, double t0, double t1, double ramp_ns,
                             double substep_ns,
                             const RatePropagator& full_power) {
  double t = t0;
  while (t < t1 - 1e-12) {
    if (t >= ramp_ns) {
      p = full_power.at(p, t1 - t);
      break;
    }
    const double boundary =
        std::min({ramp_ns, t1, (std::floor(t / substep_ns) + 1) * substep_ns});
    const double dt = boundary - t;
    ElectronicRates seg = base;
    seg.gamma_P = gamma_P_peak * aom_ramp(0.5 * (t + boundary), ramp_ns);
    const RateMatrix m = build_rate_matrix(seg);
    p = ((m.M * (dt * kMHzNs)).exp() * p).eval();
    t = boundary;
  }
  return p;
}

// Same sequence in the density-matrix picture (piecewise-constant pump).
MatrixXcd advance_ramped_lindblad(const ElectronicRates& base,
                                  double gamma_P_peak, MatrixXcd rho,
                                  double t0, double t1, double ramp_ns,
                                  double substep_ns, const MatrixXcd& H,
                                  const HilbertLayout& layout,
                                  const EvolveOptions& ev) {
  double t = t0;
  while (t < t1 - 1e-12) {
    double boundary, gamma_P;
    if (t >= ramp_ns) {
      boundary = t1;
      gamma_P = gamma_P_peak;
    } else {
      boundary = std::min(
          {ramp_ns, t1, (std::floor(t / substep_ns) + 1) * substep_ns});
      gamma_P = gamma_P_peak * aom_ramp(0.5 * (t + boundary), ramp_ns);
    }
    ElectronicRates seg = base;
    seg.gamma_P = gamma_P;
    const JumpOperatorSet jumps = build_jump_operators(seg, layout);
    rho = std::move(
        evolve_density_matrix(H, jumps, rho, {boundary - t}, ev)[0]);
    t = boundary;
  }
  return rho;
}

// Composite-Simpson average of the excited population over a readout
// window, density-matrix engine.
double lindblad_readout_average(const MatrixXcd& H,
                                const JumpOperatorSet& jumps,
                                const MatrixXcd& rho, double window_ns,
                                const HilbertLayout& layout,
                                const EvolveOptions& ev) {
  const int n = 200;  // intervals (even)
  std::vector<double> times(n + 1);
  for (int i = 0; i <= n; ++i) times[i] = window_ns * i / n;
  const auto states = evolve_density_matrix(H, jumps, rho, times, ev);
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * excited_population(states[i], layout);
  }
  return acc / (3.0 * n) ;
}

LevelPopulations pulse_populations(const LevelPopulations& p, int target,
                                   double f) {
  // Map the target sublevel into |0> (or vice versa) with fidelity f.
  if (target == 0) return p;
  return apply_pi_pulse(
      p, target == -1 ? PiTransition::kZeroToMinus : PiTransition::kZeroToPlus,
      f);
}

}  // namespace

std::string engine_name(Engine e) {
  return e == Engine::kRate ? "rate" : "lindblad";
}

SimulatedMeasurement pl_time_trace_protocol(const ElectronicRates& rates,
                                            double power_mW,
                                            double alpha_MHz_per_mW,
                                            const PlProtocolOptions& options) {
  if (!(alpha_MHz_per_mW > 0.0) || power_mW < 0.0)
    throw InvalidArgument("pl_time_trace_protocol: need alpha > 0, P >= 0");
  options.beam.validate();

  SimulatedMeasurement out;
  out.metadata = {"pl_trace", power_mW, isotope_name(options.engine.system),
                  engine_name(options.engine.engine)};
  if (!options.times_ns.empty()) {
    out.grid = options.times_ns;
    for (std::size_t i = 0; i < out.grid.size(); ++i)
      if (out.grid[i] < 0.0 || (i > 0 && out.grid[i] < out.grid[i - 1]))
        throw InvalidArgument(
            "pl_time_trace_protocol: times must be nondecreasing and >= 0");
  } else {
    for (int i = 0; i < options.n_times; ++i)
      out.grid.push_back(options.tmax_ns * i / (options.n_times - 1));
  }
  out.signal.assign(out.grid.size(), 0.0);
  out.saturation = 0.0;

  const bool rate_engine = options.engine.engine == Engine::kRate;
  HilbertLayout layout;
  MatrixXcd H;
  if (!rate_engine) {
    layout = HilbertLayout::from(options.engine.system);
    H = build_hamiltonian(options.engine.system, options.engine.field);
  }

  for (std::size_t s = 0; s < options.beam.sector_weights.size(); ++s) {
    const double frac = options.beam.sector_fractions[s];
    const double gp = alpha_MHz_per_mW * power_mW *
                      options.beam.sector_weights[s];
    ElectronicRates full = rates;
    full.gamma_P = gp;

    if (rate_engine) {
      const RateMatrix mfull = build_rate_matrix(full);
      const RatePropagator prop(mfull);
      Vector7d p = unpolarized7();
      double t = 0.0;
      for (std::size_t i = 0; i < out.grid.size(); ++i) {
        p = advance_ramped_rate(rates, gp, p, t, out.grid[i], options.ramp_ns,
                                options.ramp_substep_ns, prop);
        t = out.grid[i];
        out.signal[i] += frac * excited_sum(p);
      }
      out.saturation += frac * excited_sum(steady_state(mfull).p);
    } else {
      const JumpOperatorSet jfull = build_jump_operators(full, layout);
      MatrixXcd rho = unpolarized_ground_state(layout);
      double t = 0.0;
      for (std::size_t i = 0; i < out.grid.size(); ++i) {
        rho = advance_ramped_lindblad(rates, gp, std::move(rho), t,
                                      out.grid[i], options.ramp_ns,
                                      options.ramp_substep_ns, H, layout,
                                      options.engine.evolve);
        t = out.grid[i];
        out.signal[i] += frac * excited_population(rho, layout);
      }
      out.saturation +=
          frac * excited_population(steady_state_lindblad(H, jfull).rho,
                                    layout);
    }
  }
  for (double& v : out.signal) v += options.background;
  out.saturation += options.background;
  return out;
}

SimulatedMeasurement spin_resolved_protocol(
    const ElectronicRates& rates, double power_mW, double alpha_MHz_per_mW,
    const FidelityModel& fidelity, int readout_target,
    const std::vector<double>& t_grid_ns, const SpinResolvedOptions& options) {
  if (readout_target < -1 || readout_target > 1)
    throw InvalidArgument("spin_resolved_protocol: target must be -1, 0, +1");
  if (t_grid_ns.empty())
    throw InvalidArgument("spin_resolved_protocol: empty time grid");
  options.beam.validate();

  SimulatedMeasurement out;
  out.metadata = {"spin_resolved_P" + std::to_string(readout_target),
                  power_mW, isotope_name(options.engine.system),
                  engine_name(options.engine.engine)};
  out.grid = t_grid_ns;
  out.signal.assign(t_grid_ns.size(), 0.0);

  const bool rate_engine = options.engine.engine == Engine::kRate;
  HilbertLayout layout;
  MatrixXcd H;
  if (!rate_engine) {
    layout = HilbertLayout::from(options.engine.system);
    H = build_hamiltonian(options.engine.system, options.engine.field);
  }

  for (std::size_t s = 0; s < options.beam.sector_weights.size(); ++s) {
    const double frac = options.beam.sector_fractions[s];
    ElectronicRates on = rates;
    on.gamma_P =
        alpha_MHz_per_mW * power_mW * options.beam.sector_weights[s];
    const double f = fidelity.at(on.gamma_P);

    if (rate_engine) {
      const RateMatrix m = build_rate_matrix(on);
      const RatePropagator prop(m);
      LevelPopulations init{steady_state(m).p};
      init = apply_pi_pulse(init, PiTransition::kZeroToMinus, f);
      for (std::size_t i = 0; i < t_grid_ns.size(); ++i) {
        LevelPopulations pt{prop.at(init.p, t_grid_ns[i])};
        pt = pulse_populations(pt, readout_target, f);
        out.signal[i] += frac * prop.excited_window_average(
                                    pt.p, 0.0, options.readout_window_ns);
      }
    } else {
      const JumpOperatorSet jumps = build_jump_operators(on, layout);
      const DensityMatrix ss = steady_state_lindblad(H, jumps);
      LevelPopulations init = electronic_populations(ss.rho, layout);
      init = apply_pi_pulse(init, PiTransition::kZeroToMinus, f);
      const MatrixXcd rho0 = state_from_populations(layout, init);
      for (std::size_t i = 0; i < t_grid_ns.size(); ++i) {
        MatrixXcd rho_t =
            t_grid_ns[i] > 0.0
                ? evolve_density_matrix(H, jumps, rho0, {t_grid_ns[i]},
                                        options.engine.evolve)[0]
                : rho0;
        LevelPopulations pt = electronic_populations(rho_t, layout);
        pt = pulse_populations(pt, readout_target, f);
        out.signal[i] += frac * lindblad_readout_average(
                                    H, jumps,
                                    state_from_populations(layout, pt),
                                    options.readout_window_ns, layout,
                                    options.engine.evolve);
      }
    }
  }
  for (double& v : out.signal) v += options.background;
  return out;
}

SimulatedMeasurement excited_state_differential_protocol(
    const ElectronicRates& rates, double pulse_rep_MHz,
    const DifferentialOptions& options) {
  if (!(pulse_rep_MHz > 0.0))
    throw InvalidArgument(
        "excited_state_differential_protocol: repetition rate must be > 0");
  const double period_ns = 1e3 / pulse_rep_MHz;
  if (period_ns < 5.0 * std::max(rates.tau0_ns(), rates.tau1_ns()))
    throw InvalidArgument(
        "excited_state_differential_protocol: pulse period must exceed the "
        "excited-state lifetimes");

  SimulatedMeasurement out;
  out.metadata = {"excited_state_differential", 0.0,
                  isotope_name(options.engine.system),
                  engine_name(options.engine.engine)};
  // Uniform grid that ends exactly at the pulse period.
  const int n = std::max(1, static_cast<int>(std::ceil(period_ns / options.dt_ns)));
  const double dt = period_ns / n;
  for (int i = 0; i <= n; ++i) out.grid.push_back(i * dt);

  // Delta excitation: the 5 ps pulse is short against every lifetime, so
  // the ground population is transferred to the excited manifold intact.
  ElectronicRates dark = rates;
  dark.gamma_P = 0.0;
  auto decay = [&](Level start) {
    std::vector<double> sig;
    if (options.engine.engine == Engine::kRate) {
      const RateMatrix m = build_rate_matrix(dark);
      const RatePropagator prop(m);
      const Vector7d p0 = LevelPopulations::pure(start).p;
      for (double t : out.grid) sig.push_back(excited_sum(prop.at(p0, t)));
    } else {
      const HilbertLayout layout = HilbertLayout::from(options.engine.system);
      const MatrixXcd H =
          build_hamiltonian(options.engine.system, options.engine.field);
      const JumpOperatorSet jumps = build_jump_operators(dark, layout);
      const MatrixXcd rho0 =
          state_from_populations(layout, LevelPopulations::pure(start));
      const auto states = evolve_density_matrix(H, jumps, rho0, out.grid,
                                                options.engine.evolve);
      for (const auto& rho : states)
        sig.push_back(excited_population(rho, layout));
    }
    return sig;
  };

  const std::vector<double> from0 = decay(kE0);
  const std::vector<double> fromM1 = decay(kEm1);
  out.signal.resize(out.grid.size());
  for (std::size_t i = 0; i < out.signal.size(); ++i)
    out.signal[i] = from0[i] - fromM1[i];
  if (options.apply_irf)
    out.signal = convolve_irf(out.signal, dt, options.irf);
  return out;
}

SimulatedMeasurement cw_odmr_spectrum(const SpinSystemConfig& cfg,
                                      const ElectronicRates& rates,
                                      const MagneticField& B,
                                      const std::vector<double>& f_MHz,
                                      double omega_MHz,
                                      const OdmrOptions& options) {
  if (f_MHz.empty()) throw InvalidArgument("cw_odmr_spectrum: empty grid");
  if (!(omega_MHz >= 0.0))
    throw InvalidArgument("cw_odmr_spectrum: omega must be >= 0");
  const HilbertLayout layout = HilbertLayout::from(cfg);
  const int nd = layout.nuclear_dim;

  std::vector<double> weights(nd, 1.0 / nd);
  if (options.nuclear_populations) {
    if (static_cast<int>(options.nuclear_populations->size()) != nd)
      throw InvalidArgument(
          "cw_odmr_spectrum: nuclear_populations size mismatch");
    weights = *options.nuclear_populations;
    double sum = 0.0;
    for (double w : weights) sum += w;
    if (sum <= 0.0)
      throw InvalidArgument("cw_odmr_spectrum: nonpositive total weight");
    for (double& w : weights) w /= sum;
  }

  // Hyperfine shift per nuclear configuration: sum_i A_zz,i * m_i, with the
  // mixed-radix decode matching the product-basis ordering.
  std::vector<double> shift(nd, 0.0);
  const int n_nuc = static_cast<int>(cfg.nuclei.size());
  for (int c = 0; c < nd; ++c) {
    int rem = c;
    for (int i = n_nuc - 1; i >= 0; --i) {
      const int d = cfg.nuclei[i].dim();
      const int idx = rem % d;
      rem /= d;
      shift[c] += cfg.nuclei[i].A_gs(2, 2) * (0.5 * (d - 1) - idx);
    }
  }

  const double fwhm =
      options.fwhm_MHz ? *options.fwhm_MHz
                       : rates.gamma_2 / M_PI + omega_MHz;
  if (!(fwhm > 0.0)) throw InvalidArgument("cw_odmr_spectrum: FWHM <= 0");
  const double hw2 = 0.25 * fwhm * fwhm;  // (FWHM/2)^2
  auto lorentz = [hw2](double det) { return hw2 / (det * det + hw2); };

  const double f_p1 = cfg.D_gs + cfg.gamma_e * B.Bz();
  const double f_m1 = cfg.D_gs - cfg.gamma_e * B.Bz();
  const double pl_off =
      excited_sum(steady_state(build_rate_matrix(rates)).p);

  SimulatedMeasurement out;
  out.metadata = {"cw_odmr", 0.0, isotope_name(cfg), "rate"};
  out.grid = f_MHz;
  out.saturation = pl_off;
  for (double f : f_MHz) {
    double contrast = 0.0;
    for (int c = 0; c < nd; ++c) {
      MwMixing mw;
      mw.omega_p1 = omega_MHz * lorentz(f - (f_p1 + shift[c]));
      mw.omega_m1 = omega_MHz * lorentz(f - (f_m1 - shift[c]));
      const double pl_on =
          excited_sum(steady_state(build_rate_matrix(rates, mw)).p);
      contrast += weights[c] * (1.0 - pl_on / pl_off);
    }
    out.signal.push_back(contrast);
  }
  return out;
}

double nv_effective_model(double alpha_MHz_per_mW, double gamma_s_star_MHz,
                          double power_mW, double t_ns,
                          const NvModelOptions& options) {
  if (!(alpha_MHz_per_mW > 0.0) || !(gamma_s_star_MHz > 0.0) ||
      power_mW < 0.0 || t_ns < 0.0)
    throw InvalidArgument("nv_effective_model: parameters must be positive");

  auto one = [&](double gamma_P_MHz) {
    double geff;  // MHz
    switch (options.form) {
      case NvRateForm::kSaturation:
        geff = gamma_P_MHz <= 0.0
                   ? 0.0
                   : 1.0 / (1.0 / gamma_P_MHz + 1.0 / gamma_s_star_MHz);
        break;
      case NvRateForm::kAdditive:
        geff = gamma_P_MHz + gamma_s_star_MHz;
        break;
      case NvRateForm::kLiteral:
        geff = 1.0 / (gamma_P_MHz + gamma_s_star_MHz);
        break;
      default:
        throw InvalidArgument("nv_effective_model: unknown form");
    }
    return options.amplitude * (1.0 - std::exp(-geff * kMHzNs * t_ns));
  };

  const double gp0 = alpha_MHz_per_mW * power_mW;
  if (!options.beam) return one(gp0);
  options.beam->validate();
  double acc = 0.0;
  for (std::size_t s = 0; s < options.beam->sector_weights.size(); ++s)
    acc += options.beam->sector_fractions[s] *
           one(gp0 * options.beam->sector_weights[s]);
  return acc;
}

}  // namespace vbsim
