#pragma once

// Full open-system dynamics: the electronic seven-level system tensored
// with up to three nuclear spins, evolving under a manifold-resolved
// Hamiltonian plus the electronic jump operators.
//
// Units: the Hamiltonian is returned in rad/ns (MHz inputs scaled by
// 2*pi*1e-3); jump operators are returned in 1/sqrt(ns) so that the
// Lindblad right-hand side is directly d(rho)/d(t[ns]).
//
// Basis ordering is electronic-major: flat index = level * nuclear_dim +
// nuclear index, with nuclear configurations ordered by the Kronecker
// product of the per-nucleus |I,m> bases (m = I ... -I), first nucleus
// slowest.

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "vbsim/spin_ops.hpp"
#include "vbsim/types.hpp"

namespace vbsim {

using Matrix7cd = Eigen::Matrix<std::complex<double>, 7, 7>;

// Index bookkeeping for the electronic (x) nuclear product space.
struct HilbertLayout {
  std::vector<int> nuclear_dims;  // (2 I_i + 1) per nucleus
  int nuclear_dim = 1;            // product of nuclear_dims
  int total_dim = kNumLevels;     // 7 * nuclear_dim

  static HilbertLayout from(const SpinSystemConfig& cfg);

  int flat_index(int level, int nuclear) const {
    if (level < 0 || level >= kNumLevels || nuclear < 0 ||
        nuclear >= nuclear_dim)
      throw InvalidArgument("HilbertLayout: index out of range");
    return level * nuclear_dim + nuclear;
  }
  std::pair<int, int> split_index(int flat) const {
    if (flat < 0 || flat >= total_dim)
      throw InvalidArgument("HilbertLayout: flat index out of range");
    return {flat / nuclear_dim, flat % nuclear_dim};
  }
};

struct DensityMatrix {
  MatrixXcd rho;

  double trace() const { return rho.trace().real(); }
  // Hermiticity / trace / positivity checks (positivity via full
  // eigendecomposition; intended for tests and small systems).
  void validate(double herm_tol = 1e-10, double trace_tol = 1e-8,
                double pos_tol = 1e-8) const;
};

// One jump operator, stored as its 7x7 electronic factor; the full matrix
// is elec (x) identity on the nuclear space. Rates are already folded in:
// full(nd) is in 1/sqrt(ns).
struct JumpOperator {
  std::string label;
  Matrix7cd elec;

  MatrixXcd full(int nuclear_dim) const;
};

struct JumpOperatorSet {
  std::vector<JumpOperator> ops;
  // Sum of elec^dagger * elec over all operators; the full sink operator
  // K = sum c^dagger c equals keff (x) identity.
  Matrix7cd keff = Matrix7cd::Zero();

  // Rough magnitude of the generator (1/ns), used to scale residual
  // tolerances.
  double scale(const MatrixXcd& H) const;
};

// Manifold-resolved Hamiltonian in rad/ns. Ground triplet: D_gs * Sz^2 +
// electronic Zeeman + hyperfine (A_gs); excited likewise with D_es, A_es;
// nuclear Zeeman (-gamma_n B.I) and quadrupole (Q_zz Iz^2) act in every
// manifold; the singlet carries only those nuclear terms.
MatrixXcd build_hamiltonian(const SpinSystemConfig& cfg,
                            const MagneticField& B);

// Multiply a hyperfine tensor by the 15N/14N gyromagnetic ratio
// (-4.315 / 3.076); flips the sign of every coupling.
Eigen::Matrix3d scale_hyperfine_isotope(const Eigen::Matrix3d& A_14n);

// Nuclear gyromagnetic ratios, kHz/mT.
inline constexpr double kGammaN14 = 3.076;
inline constexpr double kGammaN15 = -4.315;

// Convert a 14N species (I=1) to the corresponding 15N species (I=1/2):
// hyperfine tensors scaled by the gyromagnetic ratio, no quadrupole.
NuclearSpecies nitrogen15_from(const NuclearSpecies& n14);

// Bundled spin systems: three nearest nitrogens (14N asset, or its 15N
// scaling), or the bare electronic system with no nuclei.
SpinSystemConfig spin_system_n14();
SpinSystemConfig spin_system_n15();
SpinSystemConfig spin_system_bare();

// Jump operators in 1/sqrt(ns): optical pumping (spin-conserving, one
// collective operator), radiative decay, ISC from |e,0> (rate r*gamma_ISC)
// and |e,+-1>, singlet decay to |g,0> (gamma_s) and |g,+-1> (k*gamma_s),
// T1 raising/lowering within each triplet (population transfer gamma_1/2
// between adjacent m levels, matching the classical rate matrix), and Sz
// dephasing over both triplets (gamma_2).
JumpOperatorSet build_jump_operators(const ElectronicRates& rates,
                                     const HilbertLayout& layout);

// d(rho)/dt = -i[H, rho] + sum_i (c_i rho c_i^dag - 1/2 {c_i^dag c_i, rho}).
MatrixXcd lindblad_rhs(const MatrixXcd& H, const JumpOperatorSet& jumps,
                       const MatrixXcd& rho);

enum class PropagationMethod {
  kAdaptiveRk,  // embedded Dormand-Prince 5(4), PI step control
  kKrylov,      // Arnoldi approximation of the exact exponential
};

struct EvolveOptions {
  double atol = 1e-10;
  double rtol = 1e-8;
  PropagationMethod method = PropagationMethod::kAdaptiveRk;
  int krylov_dim = 30;
  double krylov_tol = 1e-9;
};

// Propagate rho0 and return the state at each requested time (times must be
// nondecreasing, starting at >= 0). The trace is renormalized after each
// accepted step; drift before renormalization stays below 1e-8.
std::vector<MatrixXcd> evolve_density_matrix(
    const MatrixXcd& H, const JumpOperatorSet& jumps, const MatrixXcd& rho0,
    const std::vector<double>& times_ns,
    const EvolveOptions& options = EvolveOptions{});

struct SteadyStateOptions {
  // Dense/sparse superoperator solve is used up to this dimension; above
  // it, long-time propagation with a convergence criterion takes over.
  int superoperator_max_dim = 64;
  double convergence_l1 = 1e-9;  // long-time mode: ||rho(t+dt) - rho(t)||_1
  double block_ns = 400.0;       // long-time mode: interval between checks
  double max_ns = 2e5;
};

// Null vector of the Lindblad generator, trace-normalized. Throws
// DegeneracyError if the kernel is not one-dimensional (detected via the
// residual of the normalized solution).
DensityMatrix steady_state_lindblad(
    const MatrixXcd& H, const JumpOperatorSet& jumps,
    const SteadyStateOptions& options = SteadyStateOptions{});

// The sparse superoperator acting on column-major vec(rho), for tests and
// small systems.
Eigen::SparseMatrix<std::complex<double>> superoperator(
    const MatrixXcd& H, const JumpOperatorSet& jumps);

// --- Observables and canonical initial states ---

// Equal populations over the 3 * nuclear_dim ground states.
MatrixXcd unpolarized_ground_state(const HilbertLayout& layout);
// Electronic populations spread uniformly over the nuclear register.
MatrixXcd state_from_populations(const HilbertLayout& layout,
                                 const LevelPopulations& pops);

double excited_population(const MatrixXcd& rho, const HilbertLayout& layout);
// Nuclear-traced electronic populations.
LevelPopulations electronic_populations(const MatrixXcd& rho,
                                        const HilbertLayout& layout);
// <I_z> per nucleus.
std::vector<double> nuclear_iz(const MatrixXcd& rho,
                               const HilbertLayout& layout);

// --- Photoluminescence traces and field maps ---

struct PlTrace {
  std::vector<double> times_ns;
  std::vector<double> excited;   // excited-manifold population
  std::vector<double> contrast;  // (sig + b) / (ref + b)
  double reference = 0.0;        // steady-state excited population
};

// Excited-population trace from rho0, normalized to the steady state with
// background counts b: contrast = (sig + b) / (ref + b).
PlTrace pl_time_trace(const MatrixXcd& H, const JumpOperatorSet& jumps,
                      const MatrixXcd& rho0,
                      const std::vector<double>& times_ns,
                      double background = 0.0,
                      const EvolveOptions& options = EvolveOptions{},
                      std::optional<double> reference = std::nullopt);

// First time (linearly interpolated) at which the trace crosses
// lo + threshold * (hi - lo), with lo = trace.front(). hi defaults to the
// steady-state contrast 1. Throws NoCrossingError if never reached.
double polarization_timescale(const std::vector<double>& times_ns,
                              const std::vector<double>& trace,
                              double threshold = 0.7, double hi = 1.0);

struct FieldSweepOptions {
  double tmax_ns = 800.0;  // trace length for timescale extraction
  int n_times = 120;
  double threshold = 0.7;
  double background = 0.0;
  // <I_z> is reported after this optical-pumping interval from the
  // unpolarized start (the model has no nuclear relaxation channel, so an
  // exact steady state would overstate off-resonant nuclear polarization).
  double iz_horizon_ns = 2000.0;
  // When only the repolarization timescale is wanted, skip the nuclear
  // polarization horizon and stop each trace at the threshold crossing.
  bool compute_iz = true;
  EvolveOptions evolve{1e-10, 1e-8, PropagationMethod::kKrylov};
};

struct FieldSweepPoint {
  double B_mT = 0.0;
  double theta_deg = 0.0;
  double timescale_ns = 0.0;       // NaN when the trace never crosses
  std::vector<double> iz;          // per nucleus; NaN entries on failure
  bool ok = false;
};

struct FieldSweepResult {
  std::vector<double> B_mT;
  std::vector<double> theta_deg;
  std::vector<FieldSweepPoint> points;  // theta outer, B inner

  const FieldSweepPoint& at(int theta_idx, int B_idx) const {
    return points.at(static_cast<std::size_t>(theta_idx) * B_mT.size() +
                     B_idx);
  }
};

// Polarization-timescale and nuclear-polarization maps over a field grid.
// Per-point failures are recorded as NaN, never aborting the sweep.
FieldSweepResult field_sweep(const SpinSystemConfig& cfg,
                             const ElectronicRates& rates,
                             const std::vector<double>& B_mT,
                             const std::vector<double>& theta_deg,
                             const FieldSweepOptions& options =
                                 FieldSweepOptions{});

}  // namespace vbsim
