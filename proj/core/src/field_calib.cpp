#include "vbsim/field_calib.hpp"

#include <cmath>

namespace vbsim {

double zeeman_splitting(double B_z_mT, double gamma_e_MHz_per_mT) {
  return 2.0 * gamma_e_MHz_per_mT * B_z_mT;
}

double odmr_center_shift(double B_t_mT, double B_z_mT,
                         const SpinSystemConfig& cfg) {
  double geBz = cfg.gamma_e * B_z_mT;
  double dm = cfg.D_gs - geBz;
  double dp = cfg.D_gs + geBz;
  if (dm == 0.0 || dp == 0.0)
    throw DomainError("odmr_center_shift: pole at gamma_e*B_z = +-D_gs");
  return 0.75 * cfg.gamma_e * cfg.gamma_e * B_t_mT * B_t_mT *
         (1.0 / dm + 1.0 / dp);
}

}  // namespace vbsim
