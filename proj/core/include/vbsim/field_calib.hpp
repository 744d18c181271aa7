#pragma once

// Magnetic-field calibration formulas for ODMR spectra.

#include "vbsim/types.hpp"

namespace vbsim {

// Splitting f_{+1} - f_{-1} = 2 * gamma_e * B_z, MHz.
double zeeman_splitting(double B_z_mT, double gamma_e_MHz_per_mT);

// Shift of the |m_s = +-1> center frequency by a transverse field:
//   df_c = 0.75 gamma_e^2 B_t^2 { 1/(D_gs - gamma_e B_z) + 1/(D_gs + gamma_e B_z) }
// Throws DomainError at the poles gamma_e B_z = +-D_gs.
double odmr_center_shift(double B_t_mT, double B_z_mT,
                         const SpinSystemConfig& cfg);

}  // namespace vbsim
