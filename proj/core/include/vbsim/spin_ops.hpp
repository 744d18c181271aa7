#pragma once

// Angular-momentum matrices for arbitrary half-integer spin.

#include <complex>

#include <Eigen/Dense>

#include "vbsim/types.hpp"

namespace vbsim {

using MatrixXcd = Eigen::MatrixXcd;

struct SpinOperators {
  MatrixXcd Sx, Sy, Sz;
};

// Standard (2I+1)-dimensional spin matrices in the |I,m> basis ordered
// m = I, I-1, ..., -I. Throws InvalidArgument for non-half-integer I.
SpinOperators spin_operators(double I);

// Raising/lowering operators S+ = Sx + i Sy, same basis ordering.
MatrixXcd spin_raising(double I);

}  // namespace vbsim
