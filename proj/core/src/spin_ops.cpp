#include "vbsim/spin_ops.hpp"

#include <cmath>

namespace vbsim {

MatrixXcd spin_raising(double I) {
  double twoI = 2.0 * I;
  if (I < 0 || std::abs(twoI - std::lround(twoI)) > 1e-9)
    throw InvalidArgument("spin_raising: I must be a nonnegative half-integer");
  int d = static_cast<int>(std::lround(twoI)) + 1;
  MatrixXcd Sp = MatrixXcd::Zero(d, d);
  for (int i = 1; i < d; ++i) {
    double m = I - i;  // m of the lower state |I, m>
    Sp(i - 1, i) = std::sqrt(I * (I + 1) - m * (m + 1));
  }
  return Sp;
}

SpinOperators spin_operators(double I) {
  MatrixXcd Sp = spin_raising(I);
  MatrixXcd Sm = Sp.adjoint();
  SpinOperators ops;
  ops.Sx = 0.5 * (Sp + Sm);
  ops.Sy = std::complex<double>(0, -0.5) * (Sp - Sm);
  int d = static_cast<int>(Sp.rows());
  ops.Sz = MatrixXcd::Zero(d, d);
  for (int i = 0; i < d; ++i) ops.Sz(i, i) = I - i;
  return ops;
}

}  // namespace vbsim
