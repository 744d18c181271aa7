#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "vbsim/config.hpp"
#include "vbsim/lindblad.hpp"
#include "vbsim/rate_model.hpp"

using namespace vbsim;
using Cplx = std::complex<double>;

namespace {

ElectronicRates random_rates(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ElectronicRates r;
  r.gamma_P = 50.0 * u(rng);
  r.gamma_E = 200.0 + 800.0 * u(rng);
  r.gamma_ISC = 100.0 + 1500.0 * u(rng);
  r.r = 0.3 * u(rng);
  r.gamma_s = 1.0 + 50.0 * u(rng);
  r.k = u(rng);
  r.gamma_1 = 0.2 * u(rng);
  r.gamma_2 = 20.0 * u(rng);
  return r;
}

MatrixXcd random_density(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  MatrixXcd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = Cplx(g(rng), g(rng));
  MatrixXcd rho = a * a.adjoint();
  return rho / rho.trace();
}

}  // namespace

TEST_CASE("Hilbert space layouts for the bundled registers") {
  CHECK(HilbertLayout::from(spin_system_bare()).total_dim == 7);
  CHECK(HilbertLayout::from(spin_system_n15()).total_dim == 56);
  CHECK(HilbertLayout::from(spin_system_n14()).total_dim == 189);
  HilbertLayout l = HilbertLayout::from(spin_system_n15());
  CHECK(l.flat_index(kE0, 3) == 4 * 8 + 3);
  auto [lev, nuc] = l.split_index(4 * 8 + 3);
  CHECK(lev == kE0);
  CHECK(nuc == 3);
  CHECK_THROWS_AS(l.flat_index(7, 0), InvalidArgument);
}

TEST_CASE("Hamiltonians are Hermitian in all registers") {
  MagneticField B{33.0, 7.0, 12.0};
  for (const auto& cfg :
       {spin_system_bare(), spin_system_n15(), spin_system_n14()}) {
    MatrixXcd H = build_hamiltonian(cfg, B);
    CHECK((H - H.adjoint()).norm() < 1e-12 * (1.0 + H.norm()));
    CHECK(H.rows() == cfg.total_dim());
  }
}

TEST_CASE("level anticrossings appear at B = D / gamma_e") {
  SpinSystemConfig cfg = spin_system_bare();
  // Ground-state LAC: |g,0> and |g,-1> degenerate.
  MatrixXcd Hg = build_hamiltonian(cfg, {cfg.D_gs / cfg.gamma_e, 0.0});
  CHECK(std::abs(Hg(kG0, kG0) - Hg(kGm1, kGm1)) < 1e-9);
  CHECK(std::abs(Hg(kE0, kE0) - Hg(kEm1, kEm1)) > 1.0);
  // Excited-state LAC at 2100 / 28 = 75 mT.
  MatrixXcd He = build_hamiltonian(cfg, {cfg.D_es / cfg.gamma_e, 0.0});
  CHECK(std::abs(He(kE0, kE0) - He(kEm1, kEm1)) < 1e-9);
  CHECK(cfg.D_es / cfg.gamma_e == doctest::Approx(75.0));
}

TEST_CASE("isotope scaling of hyperfine tensors") {
  Eigen::Matrix3d a = Eigen::Matrix3d::Identity() * 47.0;
  Eigen::Matrix3d b = scale_hyperfine_isotope(a);
  CHECK(b(2, 2) == doctest::Approx(47.0 * (-4.315 / 3.076)));
  NuclearSpecies n14 = bundled_hyperfine_14n()[0];
  NuclearSpecies n15 = nitrogen15_from(n14);
  CHECK(n15.spin == doctest::Approx(0.5));
  CHECK(n15.dim() == 2);
  CHECK(n15.Q_zz == doctest::Approx(0.0));
  CHECK(n15.gamma_n == doctest::Approx(kGammaN15));
  CHECK(n15.A_gs(2, 2) / n14.A_gs(2, 2) ==
        doctest::Approx(-4.315 / 3.076).epsilon(1e-12));
}

TEST_CASE("jump operator strengths: trace of the sink operator") {
  HilbertLayout layout = HilbertLayout::from(spin_system_bare());
  auto tr_keff = [&](const ElectronicRates& r) {
    return build_jump_operators(r, layout).keff.trace().real();
  };
  ElectronicRates z;  // all zero
  CHECK(tr_keff(z) == doctest::Approx(0.0));
  ElectronicRates p = z;
  p.gamma_P = 30.0;
  CHECK(tr_keff(p) == doctest::Approx(3.0 * 30.0 * 1e-3));
  ElectronicRates e = z;
  e.gamma_E = 849.0;
  CHECK(tr_keff(e) == doctest::Approx(3.0 * 849.0 * 1e-3));
  ElectronicRates isc = z;
  isc.gamma_ISC = 1286.0;
  isc.r = 0.04;
  CHECK(tr_keff(isc) == doctest::Approx((2.0 + 0.04) * 1286.0 * 1e-3));
  ElectronicRates s = z;
  s.gamma_s = 22.3;
  s.k = 0.21;
  CHECK(tr_keff(s) == doctest::Approx((1.0 + 2.0 * 0.21) * 22.3 * 1e-3));
  ElectronicRates d = z;
  d.gamma_2 = 16.0;
  // (S_g,z + S_e,z)^2 has trace 4 over the seven levels.
  CHECK(tr_keff(d) == doctest::Approx(4.0 * 16.0 * 1e-3));
}

TEST_CASE("the Lindblad right-hand side is traceless") {
  std::mt19937_64 rng(5);
  SpinSystemConfig cfg = spin_system_n15();
  HilbertLayout layout = HilbertLayout::from(cfg);
  MatrixXcd H = build_hamiltonian(cfg, {80.0, 1.0});
  ElectronicRates r = preset("vb-this-work-r004");
  r.gamma_P = 20.0;
  JumpOperatorSet jumps = build_jump_operators(r, layout);
  MatrixXcd rho = random_density(layout.total_dim, rng);
  MatrixXcd drho = lindblad_rhs(H, jumps, rho);
  CHECK(std::abs(drho.trace()) < 1e-12 * (1.0 + drho.norm()));
}

TEST_CASE("superoperator action equals the direct right-hand side") {
  std::mt19937_64 rng(9);
  HilbertLayout layout = HilbertLayout::from(spin_system_bare());
  MatrixXcd H = build_hamiltonian(spin_system_bare(), {12.0, 0.0});
  ElectronicRates r = random_rates(rng);
  JumpOperatorSet jumps = build_jump_operators(r, layout);
  auto L = superoperator(H, jumps);
  MatrixXcd rho = random_density(7, rng);
  Eigen::VectorXcd v = Eigen::Map<const Eigen::VectorXcd>(rho.data(), 49);
  Eigen::VectorXcd lv = L * v;
  MatrixXcd direct = lindblad_rhs(H, jumps, rho);
  Eigen::VectorXcd dv = Eigen::Map<const Eigen::VectorXcd>(direct.data(), 49);
  CHECK((lv - dv).norm() < 1e-12 * (1.0 + dv.norm()));
}

TEST_CASE("pure dephasing damps ground coherence at gamma_2 / 2") {
  HilbertLayout layout = HilbertLayout::from(spin_system_bare());
  MatrixXcd H = build_hamiltonian(spin_system_bare(), {12.0, 0.0});
  ElectronicRates r;  // only dephasing
  r.gamma_2 = 1000.0 / 62.0;
  JumpOperatorSet jumps = build_jump_operators(r, layout);
  MatrixXcd rho0 = MatrixXcd::Zero(7, 7);
  rho0(kG0, kG0) = rho0(kGm1, kGm1) = 0.5;
  rho0(kG0, kGm1) = rho0(kGm1, kG0) = 0.5;
  double t = 20.0;
  auto states = evolve_density_matrix(H, jumps, rho0, {t});
  // Coherence between m_s = 0 and m_s = -1: |rho01(t)| = 0.5 exp(-g2 t / 2).
  double expect = 0.5 * std::exp(-0.5 * r.gamma_2 * 1e-3 * t);
  CHECK(std::abs(states[0](kG0, kGm1)) ==
        doctest::Approx(expect).epsilon(1e-6));
  CHECK(states[0](kG0, kG0).real() == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("diagonal dynamics reduce to the classical rate model") {
  std::mt19937_64 rng(17);
  SpinSystemConfig cfg = spin_system_bare();
  HilbertLayout layout = HilbertLayout::from(cfg);
  MatrixXcd H = build_hamiltonian(cfg, {12.0, 0.0});
  std::vector<double> times;
  for (int i = 1; i <= 20; ++i) times.push_back(i * 25.0);
  for (int trial = 0; trial < 5; ++trial) {
    CAPTURE(trial);
    ElectronicRates r = random_rates(rng);
    JumpOperatorSet jumps = build_jump_operators(r, layout);
    MatrixXcd rho0 = unpolarized_ground_state(layout);
    auto states = evolve_density_matrix(H, jumps, rho0, times);
    RateMatrix m = build_rate_matrix(r);
    auto traj = evolve_populations(
        m, LevelPopulations::ground_unpolarized(), times);
    for (std::size_t i = 0; i < times.size(); ++i) {
      LevelPopulations lp = electronic_populations(states[i], layout);
      CHECK((lp.p - traj.states[i].p).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("adaptive RK and Krylov propagation agree") {
  SpinSystemConfig cfg = spin_system_n15();
  HilbertLayout layout = HilbertLayout::from(cfg);
  MatrixXcd H = build_hamiltonian(cfg, {74.0, 0.5});
  ElectronicRates r = preset("vb-this-work");
  r.gamma_P = 20.0;
  JumpOperatorSet jumps = build_jump_operators(r, layout);
  MatrixXcd rho0 = unpolarized_ground_state(layout);
  std::vector<double> times = {50.0, 200.0};
  EvolveOptions rk;
  EvolveOptions kr;
  kr.method = PropagationMethod::kKrylov;
  auto a = evolve_density_matrix(H, jumps, rho0, times, rk);
  auto b = evolve_density_matrix(H, jumps, rho0, times, kr);
  for (std::size_t i = 0; i < times.size(); ++i)
    CHECK((a[i] - b[i]).norm() < 1e-6);
}

TEST_CASE("propagation preserves trace, Hermiticity, and positivity") {
  SpinSystemConfig cfg = spin_system_n15();
  HilbertLayout layout = HilbertLayout::from(cfg);
  MatrixXcd H = build_hamiltonian(cfg, {124.0, 1.0});
  ElectronicRates r = preset("vb-this-work");
  r.gamma_P = 20.0;
  JumpOperatorSet jumps = build_jump_operators(r, layout);
  MatrixXcd rho0 = unpolarized_ground_state(layout);
  auto states = evolve_density_matrix(H, jumps, rho0, {10.0, 300.0});
  for (const auto& s : states) {
    DensityMatrix d{s};
    CHECK(d.trace() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_NOTHROW(d.validate());
  }
}

TEST_CASE("density-matrix validation rejects bad states") {
  MatrixXcd rho = MatrixXcd::Zero(7, 7);
  rho(0, 0) = 1.0;
  rho(0, 1) = Cplx(0.0, 0.5);  // not Hermitian
  CHECK_THROWS_AS(DensityMatrix{rho}.validate(), InvalidArgument);
  MatrixXcd half = MatrixXcd::Zero(7, 7);
  half(0, 0) = 0.5;  // trace != 1
  CHECK_THROWS_AS(DensityMatrix{half}.validate(), InvalidArgument);
}

TEST_CASE("Lindblad steady state matches the rate-model steady state") {
  SpinSystemConfig cfg = spin_system_bare();
  HilbertLayout layout = HilbertLayout::from(cfg);
  MatrixXcd H = build_hamiltonian(cfg, {12.0, 0.0});
  ElectronicRates r = preset("vb-this-work-r004");
  r.gamma_P = 20.0;
  JumpOperatorSet jumps = build_jump_operators(r, layout);
  DensityMatrix ss = steady_state_lindblad(H, jumps);
  LevelPopulations lb = electronic_populations(ss.rho, layout);
  LevelPopulations rm = steady_state(build_rate_matrix(r));
  CHECK((lb.p - rm.p).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("nuclear <I_z> decodes the register correctly") {
  SpinSystemConfig cfg = spin_system_bare();
  NuclearSpecies n;
  n.spin = 0.5;
  n.gamma_n = kGammaN15;
  cfg.nuclei = {n, n};
  HilbertLayout layout = HilbertLayout::from(cfg);
  CHECK(layout.nuclear_dim == 4);
  // |g0> x |up> x |down>: first nucleus is the slowest index.
  MatrixXcd rho = MatrixXcd::Zero(28, 28);
  int idx = layout.flat_index(kG0, 0 * 2 + 1);
  rho(idx, idx) = 1.0;
  std::vector<double> iz = nuclear_iz(rho, layout);
  REQUIRE(iz.size() == 2);
  CHECK(iz[0] == doctest::Approx(0.5));
  CHECK(iz[1] == doctest::Approx(-0.5));
}

TEST_CASE("polarization timescale: threshold crossing of 1 - exp(-t/tau)") {
  double tau = 37.0;
  std::vector<double> times, trace;
  for (int i = 0; i <= 400; ++i) {
    times.push_back(i * 0.5);
    trace.push_back(1.0 - std::exp(-times.back() / tau));
  }
  double t63 = polarization_timescale(times, trace, 1.0 - std::exp(-1.0));
  CHECK(t63 == doctest::Approx(tau).epsilon(1e-4));
  std::vector<double> flat(times.size(), 0.1);
  CHECK_THROWS_AS(polarization_timescale(times, flat, 0.7), NoCrossingError);
}

TEST_CASE("field sweep records per-point results on the grid") {
  SpinSystemConfig cfg = spin_system_bare();
  ElectronicRates r = preset("vb-this-work");
  r.gamma_P = 20.0;
  FieldSweepOptions opt;
  opt.tmax_ns = 400.0;
  opt.n_times = 60;
  opt.iz_horizon_ns = 400.0;
  FieldSweepResult res = field_sweep(cfg, r, {12.0, 50.0}, {0.0, 2.0}, opt);
  REQUIRE(res.points.size() == 4);
  for (const auto& p : res.points) {
    CHECK(p.ok);
    CHECK(std::isfinite(p.timescale_ns));
    CHECK(p.timescale_ns > 0.0);
  }
  CHECK(res.at(1, 0).theta_deg == doctest::Approx(2.0));
  CHECK(res.at(1, 0).B_mT == doctest::Approx(12.0));
}
