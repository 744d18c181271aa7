#include <doctest.h>

#include <complex>

#include "vbsim/spin_ops.hpp"

using namespace vbsim;
using Cplx = std::complex<double>;

TEST_CASE("spin operators satisfy su(2) commutation relations") {
  for (double I : {0.5, 1.0, 1.5, 4.5}) {
    CAPTURE(I);
    SpinOperators s = spin_operators(I);
    MatrixXcd comm = s.Sx * s.Sy - s.Sy * s.Sx;
    CHECK((comm - Cplx(0, 1) * s.Sz).norm() < 1e-12);
    comm = s.Sy * s.Sz - s.Sz * s.Sy;
    CHECK((comm - Cplx(0, 1) * s.Sx).norm() < 1e-12);
    comm = s.Sz * s.Sx - s.Sx * s.Sz;
    CHECK((comm - Cplx(0, 1) * s.Sy).norm() < 1e-12);
  }
}

TEST_CASE("Casimir invariant equals I(I+1)") {
  for (double I : {0.5, 1.0, 2.5}) {
    SpinOperators s = spin_operators(I);
    MatrixXcd c2 = s.Sx * s.Sx + s.Sy * s.Sy + s.Sz * s.Sz;
    int d = static_cast<int>(2 * I + 1);
    CHECK((c2 - I * (I + 1) * MatrixXcd::Identity(d, d)).norm() < 1e-12);
  }
}

TEST_CASE("Sz is diagonal with m = I ... -I") {
  SpinOperators s = spin_operators(1.0);
  CHECK(s.Sz(0, 0).real() == doctest::Approx(1.0));
  CHECK(s.Sz(1, 1).real() == doctest::Approx(0.0));
  CHECK(s.Sz(2, 2).real() == doctest::Approx(-1.0));
}

TEST_CASE("raising operator matrix elements") {
  double I = 1.0;
  MatrixXcd sp = spin_raising(I);
  // S+ |I, m> = sqrt(I(I+1) - m(m+1)) |I, m+1>; basis row 0 is m = +1.
  CHECK(std::abs(sp(0, 1)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(std::abs(sp(1, 2)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(std::abs(sp(0, 2)) == doctest::Approx(0.0));
  SpinOperators s = spin_operators(I);
  CHECK((sp - (s.Sx + Cplx(0, 1) * s.Sy)).norm() < 1e-12);
}

TEST_CASE("non-half-integer spin is rejected") {
  CHECK_THROWS_AS(spin_operators(0.3), InvalidArgument);
  CHECK_THROWS_AS(spin_operators(-1.0), InvalidArgument);
}
