#include <doctest.h>

#include <random>

#include "vbsim/config.hpp"
#include "vbsim/rate_model.hpp"

using namespace vbsim;

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
}  // namespace

TEST_CASE("generator columns sum to zero (probability conservation)") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10; ++i) {
    RateMatrix m = build_rate_matrix(random_rates(rng),
                                     MwMixing{0.5 * i, 0.25 * i});
    CHECK(m.max_column_sum() < 1e-10);
  }
}

TEST_CASE("steady state is a normalized kernel vector") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 5; ++i) {
    RateMatrix m = build_rate_matrix(random_rates(rng));
    LevelPopulations ss = steady_state(m);
    CHECK(ss.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((m.M * ss.p).norm() < 1e-8 * m.M.norm());
    CHECK(ss.p.minCoeff() >= -1e-12);
  }
}

TEST_CASE("trajectories conserve probability and stay nonnegative") {
  ElectronicRates r = preset("vb-this-work");
  r.gamma_P = 20.0;
  RateMatrix m = build_rate_matrix(r);
  std::vector<double> times;
  for (int i = 1; i <= 50; ++i) times.push_back(i * 20.0);
  auto traj =
      evolve_populations(m, LevelPopulations::ground_unpolarized(), times);
  REQUIRE(traj.states.size() == times.size());
  for (const auto& s : traj.states) {
    CHECK(std::abs(s.sum() - 1.0) < 1e-9);
    CHECK(s.p.minCoeff() >= -1e-12);
  }
}

TEST_CASE("spectral propagator matches the matrix exponential") {
  std::mt19937_64 rng(3);
  ElectronicRates r = random_rates(rng);
  r.gamma_P = 12.0;
  RateMatrix m = build_rate_matrix(r);
  RatePropagator prop(m);
  LevelPopulations p0 = LevelPopulations::ground_unpolarized();
  for (double t : {1.0, 10.0, 123.0, 4000.0}) {
    auto traj = evolve_populations(m, p0, {t});
    Vector7d via_prop = prop.at(p0.p, t);
    CHECK((via_prop - traj.states[0].p).norm() < 1e-10);
  }
}

TEST_CASE("excited window average agrees with fine quadrature") {
  ElectronicRates r = preset("vb-this-work");
  r.gamma_P = 20.0;
  RateMatrix m = build_rate_matrix(r);
  RatePropagator prop(m);
  Vector7d p0 = LevelPopulations::ground_unpolarized().p;
  double t0 = 50.0, w = 125.0;
  double avg = prop.excited_window_average(p0, t0, w);
  // Trapezoid oracle on a fine grid.
  int n = 4000;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    double t = t0 + w * i / n;
    Vector7d p = prop.at(p0, t);
    double ex = p[kEp1] + p[kE0] + p[kEm1];
    acc += (i == 0 || i == n) ? 0.5 * ex : ex;
  }
  acc = acc * (w / n) / w;
  CHECK(avg == doctest::Approx(acc).epsilon(1e-7));
}

TEST_CASE("polarization of a pure m_s = 0 population is 1") {
  CHECK(polarization(LevelPopulations::pure(kG0)) == doctest::Approx(1.0));
  CHECK(polarization(LevelPopulations::ground_unpolarized()) ==
        doctest::Approx(1.0 / 3.0));
}

TEST_CASE("ODMR contrast vanishes without a drive and grows with it") {
  ElectronicRates r = preset("vb-this-work-r004");
  r.gamma_P = 20.0;
  CHECK(odmr_contrast(r, 0.0, 20.0) == doctest::Approx(0.0).epsilon(1e-9));
  double weak = odmr_contrast(r, 0.5, 20.0);
  double strong = odmr_contrast(r, 50.0, 20.0);
  CHECK(weak > 0.0);
  CHECK(strong > weak);
}

TEST_CASE("differential decay: zero at t=0, sign of the lifetime gap") {
  ElectronicRates r = preset("vb-this-work");
  CHECK(differential_decay(r, 0.0) == doctest::Approx(0.0));
  // tau0 > tau1, so the difference of survival probabilities is positive.
  CHECK(differential_decay(r, 0.7) > 0.0);
  CHECK(differential_decay(r, 100.0) == doctest::Approx(0.0).epsilon(1e-12));
}
