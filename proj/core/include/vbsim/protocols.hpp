#pragma once

// Measurement sequences composed from the rate / density-matrix engines and
// the instrument models: photoluminescence (PL) time traces, spin-resolved
// population dynamics, pulsed excited-state differential decays, CW-ODMR
// spectra, and the effective single-exponential model used for the NV
// cross-check.

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vbsim/instrument.hpp"
#include "vbsim/lindblad.hpp"
#include "vbsim/rate_model.hpp"
#include "vbsim/types.hpp"

namespace vbsim {

enum class Engine { kRate, kLindblad };

std::string engine_name(Engine e);

struct ProtocolMetadata {
  std::string sequence;
  double power_mW = 0.0;
  std::string isotope;  // "none", "14N", "15N"
  std::string engine;   // "rate" | "lindblad"
};

struct SimulatedMeasurement {
  std::vector<double> grid;    // t_ns, or f_MHz for spectra
  std::vector<double> signal;
  // Steady-state (saturation) signal level, where the sequence has one.
  double saturation = std::numeric_limits<double>::quiet_NaN();
  ProtocolMetadata metadata;
};

// Shared engine configuration. The density-matrix engine uses `system` and
// `field`; the rate engine ignores them.
struct EngineOptions {
  Engine engine = Engine::kRate;
  SpinSystemConfig system;        // default: bare electronic system
  MagneticField field{12.0, 0.0}; // mT, degrees
  EvolveOptions evolve;
};

// --- PL time trace: unpolarized start, AOM ramp, beam averaging ---

struct PlProtocolOptions {
  double tmax_ns = 3000.0;
  int n_times = 300;
  std::vector<double> times_ns;   // when nonempty, overrides tmax/n_times
  double ramp_ns = 40.0;
  double ramp_substep_ns = 0.25;  // piecewise-constant pump during the ramp
  BeamModel beam;
  double background = 0.0;
  EngineOptions engine;
};

// Gamma_P = alpha * P per beam sector; signal is the beam-averaged
// excited-manifold population plus background; `saturation` is the
// corresponding steady-state level.
SimulatedMeasurement pl_time_trace_protocol(
    const ElectronicRates& rates, double power_mW, double alpha_MHz_per_mW,
    const PlProtocolOptions& options = PlProtocolOptions{});

// --- Spin-resolved population dynamics ---

struct SpinResolvedOptions {
  double readout_window_ns = 125.0;
  BeamModel beam;
  double background = 0.0;
  EngineOptions engine;
};

// Sequence: laser-on steady state -> pi(0 <-> -1) with fidelity f(Gamma_P)
// -> evolve under laser for t -> optional pi mapping the target sublevel to
// |0> -> readout = excited-population average over the readout window.
// readout_target is the sublevel m_s in {-1, 0, +1}.
SimulatedMeasurement spin_resolved_protocol(
    const ElectronicRates& rates, double power_mW, double alpha_MHz_per_mW,
    const FidelityModel& fidelity, int readout_target,
    const std::vector<double>& t_grid_ns,
    const SpinResolvedOptions& options = SpinResolvedOptions{});

// --- Pulsed excited-state spectroscopy ---

struct DifferentialOptions {
  double dt_ns = 0.005;
  bool apply_irf = true;
  IRFModel irf;
  EngineOptions engine;
};

// Delta excitation from |g,0> and from |g,-1> (pi-pulse prepared), PL
// decays subtracted, convolved with the instrument response. Grid spans one
// pulse period.
SimulatedMeasurement excited_state_differential_protocol(
    const ElectronicRates& rates, double pulse_rep_MHz,
    const DifferentialOptions& options = DifferentialOptions{});

// --- CW-ODMR spectrum ---

struct OdmrOptions {
  // Lorentzian FWHM (MHz); defaults to gamma_2 / pi + omega (power
  // broadening).
  std::optional<double> fwhm_MHz;
  // Steady-state populations of the nuclear configurations (size =
  // nuclear_dim); defaults to unpolarized (uniform).
  std::optional<std::vector<double>> nuclear_populations;
};

// Per-config hyperfine-shifted transitions D_gs +- (gamma_e B_z + sum_i
// A_zz,i m_i); the contrast at each drive frequency is the
// population-weighted average of rate-model steady states with incoherent
// mixing omega * Lorentzian(detuning) on each transition.
SimulatedMeasurement cw_odmr_spectrum(
    const SpinSystemConfig& cfg, const ElectronicRates& rates,
    const MagneticField& B, const std::vector<double>& f_MHz,
    double omega_MHz, const OdmrOptions& options = OdmrOptions{});

// --- NV effective model ---

enum class NvRateForm {
  kSaturation,  // Gamma_eff = ((alpha P)^-1 + (Gamma_s*)^-1)^-1
  kAdditive,    // Gamma_eff = alpha P + Gamma_s*
  kLiteral,     // Gamma_eff = (alpha P + Gamma_s*)^-1, as printed
};

struct NvModelOptions {
  NvRateForm form = NvRateForm::kSaturation;
  double amplitude = 1.0;
  std::optional<BeamModel> beam;  // beam-average when set
};

// PL(t; P) = amplitude * (1 - exp(-Gamma_eff t)), optionally beam-averaged.
double nv_effective_model(double alpha_MHz_per_mW, double gamma_s_star_MHz,
                          double power_mW, double t_ns,
                          const NvModelOptions& options = NvModelOptions{});

}  // namespace vbsim
