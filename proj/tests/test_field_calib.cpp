#include <doctest.h>

#include "vbsim/field_calib.hpp"

using namespace vbsim;

TEST_CASE("Zeeman splitting is linear in B_z") {
  CHECK(zeeman_splitting(10.0, 28.0) == doctest::Approx(560.0));
  CHECK(zeeman_splitting(0.0, 28.0) == doctest::Approx(0.0));
}

TEST_CASE("transverse field shifts the +-1 center upward") {
  SpinSystemConfig cfg;  // D_gs = 3480, gamma_e = 28
  double bt = 5.0, bz = 10.0;
  double expect = 0.75 * 28.0 * 28.0 * bt * bt *
                  (1.0 / (3480.0 - 28.0 * bz) + 1.0 / (3480.0 + 28.0 * bz));
  CHECK(odmr_center_shift(bt, bz, cfg) == doctest::Approx(expect));
  CHECK(odmr_center_shift(0.0, bz, cfg) == doctest::Approx(0.0));
}

TEST_CASE("center shift diverges at the level-anticrossing pole") {
  SpinSystemConfig cfg;
  CHECK_THROWS_AS(odmr_center_shift(1.0, 3480.0 / 28.0, cfg), DomainError);
}
