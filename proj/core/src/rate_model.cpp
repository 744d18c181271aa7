#include "vbsim/rate_model.hpp"

#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

namespace vbsim {

RateMatrix build_rate_matrix(const ElectronicRates& rates,
                             std::optional<MwMixing> mw) {
  rates.validate();
  const double GP = rates.gamma_P, GE = rates.gamma_E, GI = rates.gamma_ISC,
               Gs = rates.gamma_s, r = rates.r, k = rates.k, g1 = rates.gamma_1;
  Matrix7d M = Matrix7d::Zero();
  M(kGp1, kGp1) = -GP - g1 / 2;
  M(kGp1, kG0) = g1 / 2;
  M(kGp1, kEp1) = GE;
  M(kGp1, kS) = k * Gs;
  M(kG0, kGp1) = g1 / 2;
  M(kG0, kG0) = -GP - g1;
  M(kG0, kGm1) = g1 / 2;
  M(kG0, kE0) = GE;
  M(kG0, kS) = Gs;
  M(kGm1, kG0) = g1 / 2;
  M(kGm1, kGm1) = -GP - g1 / 2;
  M(kGm1, kEm1) = GE;
  M(kGm1, kS) = k * Gs;
  M(kEp1, kGp1) = GP;
  M(kEp1, kEp1) = -GE - GI - g1 / 2;
  M(kEp1, kE0) = g1 / 2;
  M(kE0, kG0) = GP;
  M(kE0, kEp1) = g1 / 2;
  M(kE0, kE0) = -GE - r * GI - g1;
  M(kE0, kEm1) = g1 / 2;
  M(kEm1, kGm1) = GP;
  M(kEm1, kE0) = g1 / 2;
  M(kEm1, kEm1) = -GE - GI - g1 / 2;
  M(kS, kEp1) = GI;
  M(kS, kE0) = r * GI;
  M(kS, kEm1) = GI;
  M(kS, kS) = -(1 + 2 * k) * Gs;

  if (mw) {
    // Symmetric transfer g0 <-> g+-1, column sums preserved.
    M(kGp1, kG0) += mw->omega_p1;
    M(kG0, kGp1) += mw->omega_p1;
    M(kGp1, kGp1) -= mw->omega_p1;
    M(kG0, kG0) -= mw->omega_p1;
    M(kGm1, kG0) += mw->omega_m1;
    M(kG0, kGm1) += mw->omega_m1;
    M(kGm1, kGm1) -= mw->omega_m1;
    M(kG0, kG0) -= mw->omega_m1;
  }
  return RateMatrix{M};
}

PopulationTrajectory evolve_populations(const RateMatrix& m,
                                        const LevelPopulations& p0,
                                        const std::vector<double>& times_ns) {
  if (!m.M.allFinite())
    throw InvalidArgument("evolve_populations: non-finite rate matrix");
  p0.validate();
  PopulationTrajectory out;
  out.times_ns = times_ns;
  out.states.reserve(times_ns.size());
  Vector7d p = p0.p;
  double t_prev = 0.0;
  for (double t : times_ns) {
    if (t < t_prev)
      throw InvalidArgument("evolve_populations: times must be increasing");
    double dt = t - t_prev;
    if (dt > 0.0) {
      Matrix7d prop = (m.M * (dt * kMHzNs)).exp();
      p = prop * p;
    }
    t_prev = t;
    LevelPopulations lp;
    lp.p = p;
    out.states.push_back(lp);
  }
  return out;
}

LevelPopulations steady_state(const RateMatrix& m) {
  Eigen::JacobiSVD<Matrix7d> svd(m.M, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  double scale = sv(0);
  if (scale == 0.0) throw DegeneracyError("steady_state: zero generator");
  if (sv(5) < 1e-8 * scale)
    throw DegeneracyError("steady_state: kernel dimension > 1");
  Vector7d v = svd.matrixV().col(6);
  if (v.sum() < 0) v = -v;
  // Kernel vectors of a generator are nonnegative; clamp roundoff.
  v = v.cwiseMax(0.0);
  v /= v.sum();
  LevelPopulations lp;
  lp.p = v;
  return lp;
}

double polarization(const LevelPopulations& pops) {
  const auto& p = pops.p;
  double P1 = p[kGp1] + p[kEp1];
  double P0 = p[kG0] + p[kE0];
  double Pm = p[kGm1] + p[kEm1];
  double denom = P0 + P1 + Pm;
  if (denom <= 0.0)
    throw DomainError("polarization: undefined for all-singlet state");
  return P0 / denom;
}

double odmr_contrast(const ElectronicRates& rates, double omega_MHz,
                     double gamma_P_MHz, MwDrive drive) {
  if (omega_MHz < 0) throw InvalidArgument("odmr_contrast: omega < 0");
  if (!(gamma_P_MHz > 0)) throw InvalidArgument("odmr_contrast: gamma_P <= 0");
  ElectronicRates rr = rates;
  rr.gamma_P = gamma_P_MHz;
  auto excited_ss = [&](std::optional<MwMixing> mw) {
    LevelPopulations p = steady_state(build_rate_matrix(rr, mw));
    return p.p[kEp1] + p.p[kE0] + p.p[kEm1];
  };
  double off = excited_ss(std::nullopt);
  MwMixing mw;
  mw.omega_m1 = omega_MHz;
  mw.omega_p1 = (drive == MwDrive::kBothTransitions) ? omega_MHz : 0.0;
  double on = excited_ss(mw);
  return 1.0 - on / off;
}

double differential_decay(const ElectronicRates& rates, double t_ns) {
  if (t_ns < 0) throw InvalidArgument("differential_decay: t < 0");
  double a = (rates.gamma_E + rates.r * rates.gamma_ISC) * kMHzNs;
  double b = (rates.gamma_E + rates.gamma_ISC) * kMHzNs;
  return std::exp(-a * t_ns) - std::exp(-b * t_ns);
}

RatePropagator::RatePropagator(const RateMatrix& m) : m_(m.M) {
  Eigen::ComplexEigenSolver<Eigen::Matrix<std::complex<double>, 7, 7>> es(
      m_.cast<std::complex<double>>());
  if (es.info() == Eigen::Success) {
    v_ = es.eigenvectors();
    eig_ = es.eigenvalues();
    Eigen::FullPivLU<Eigen::Matrix<std::complex<double>, 7, 7>> lu(v_);
    if (lu.isInvertible()) {
      vinv_ = lu.inverse();
      double err = (v_ * vinv_ -
                    Eigen::Matrix<std::complex<double>, 7, 7>::Identity())
                       .cwiseAbs()
                       .maxCoeff();
      spectral_ = err < 1e-9;
    }
  }
}

Vector7d RatePropagator::at(const Vector7d& p0, double t_ns) const {
  if (spectral_) {
    Eigen::Matrix<std::complex<double>, 7, 1> c = vinv_ * p0.cast<std::complex<double>>();
    for (int i = 0; i < 7; ++i) c[i] *= std::exp(eig_[i] * (t_ns * kMHzNs));
    return (v_ * c).real();
  }
  return (m_ * (t_ns * kMHzNs)).exp() * p0;
}

double RatePropagator::excited_window_average(const Vector7d& p0,
                                              double t_start_ns,
                                              double window_ns) const {
  if (window_ns <= 0) return 0.0;
  if (spectral_) {
    // 1/w * integral_0^w exp(lambda (t0+s)) ds, per mode.
    Eigen::Matrix<std::complex<double>, 7, 1> c = vinv_ * p0.cast<std::complex<double>>();
    double w = window_ns * kMHzNs;
    for (int i = 0; i < 7; ++i) {
      std::complex<double> lam = eig_[i];
      std::complex<double> base = std::exp(lam * (t_start_ns * kMHzNs));
      if (std::abs(lam) * w < 1e-12) {
        c[i] *= base;
      } else {
        c[i] *= base * (std::exp(lam * w) - 1.0) / (lam * w);
      }
    }
    Vector7d avg = (v_ * c).real();
    return avg[kEp1] + avg[kE0] + avg[kEm1];
  }
  // Quadrature fallback (midpoint on 32 panels).
  const int n = 32;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    Vector7d p = at(p0, t_start_ns + (i + 0.5) * window_ns / n);
    sum += p[kEp1] + p[kE0] + p[kEm1];
  }
  return sum / n;
}

}  // namespace vbsim
