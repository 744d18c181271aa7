#pragma once

// Shared domain types for the V_B-/NV seven-level simulation engine.
//
// Unit conventions, used everywhere:
//   * rates and frequencies: ordinary (non-angular) MHz == 1/us
//   * times: ns
//   * magnetic fields: mT, gyromagnetic ratios: MHz/mT (electron),
//     kHz/mT (nuclear)
//   * Hamiltonians: angular frequency in rad/ns; the single 2*pi factor
//     is applied inside Hamiltonian construction and nowhere else.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vbsim {

using Matrix3d = Eigen::Matrix3d;

// MHz * ns -> dimensionless exponent
inline constexpr double kMHzNs = 1e-3;
// MHz -> rad/ns (the one 2*pi)
inline const double kOmegaPerMHz = 2.0 * M_PI * 1e-3;

// Basis ordering {g+1, g0, g-1, e+1, e0, e-1, s}, shared by all modules.
enum Level : int {
  kGp1 = 0,
  kG0 = 1,
  kGm1 = 2,
  kEp1 = 3,
  kE0 = 4,
  kEm1 = 5,
  kS = 6,
};
inline constexpr int kNumLevels = 7;
inline const std::array<std::string, 7> kLevelLabels = {
    "g_p1", "g_0", "g_m1", "e_p1", "e_0", "e_m1", "s"};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};
class DegeneracyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class NoCrossingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Electronic transition rates of the seven-level model. All in MHz.
struct ElectronicRates {
  double gamma_P = 0.0;    // optical pumping g_i -> e_i
  double gamma_E = 0.0;    // spin-conserving decay e_i -> g_i
  double gamma_ISC = 0.0;  // ISC from |e,+-1> to singlet
  double r = 0.0;          // ISC branching from |e,0>: rate r*gamma_ISC
  double gamma_s = 0.0;    // singlet -> |g,0>
  double k = 0.0;          // singlet -> |g,+-1>: rate k*gamma_s each
  double gamma_1 = 0.0;    // spin depolarization 1/T1
  double gamma_2 = 0.0;    // dephasing 1/T2 (Lindblad only)

  void validate() const {
    auto chk = [](double v, const char* n) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw InvalidArgument(std::string("ElectronicRates: ") + n +
                              " must be finite and >= 0");
    };
    chk(gamma_P, "gamma_P");
    chk(gamma_E, "gamma_E");
    chk(gamma_ISC, "gamma_ISC");
    chk(r, "r");
    chk(gamma_s, "gamma_s");
    chk(k, "k");
    chk(gamma_1, "gamma_1");
    chk(gamma_2, "gamma_2");
  }

  // 1/e decay times of the excited sublevels, ns.
  double tau0_ns() const { return 1e3 / (gamma_E + r * gamma_ISC); }
  double tau1_ns() const { return 1e3 / (gamma_E + gamma_ISC); }
};

// 7-vector of classical occupation probabilities.
struct LevelPopulations {
  Eigen::Matrix<double, 7, 1> p = Eigen::Matrix<double, 7, 1>::Zero();

  static LevelPopulations ground_unpolarized() {
    LevelPopulations lp;
    lp.p[kGp1] = lp.p[kG0] = lp.p[kGm1] = 1.0 / 3.0;
    return lp;
  }
  static LevelPopulations pure(Level l) {
    LevelPopulations lp;
    lp.p[l] = 1.0;
    return lp;
  }

  double sum() const { return p.sum(); }
  void validate(double neg_tol = 1e-12, double sum_tol = 1e-9) const {
    if (p.minCoeff() < -neg_tol)
      throw InvalidArgument("LevelPopulations: negative entry");
    if (std::abs(p.sum() - 1.0) > sum_tol)
      throw InvalidArgument("LevelPopulations: entries do not sum to 1");
  }
};

// One nuclear spin adjacent to the defect.
struct NuclearSpecies {
  double spin = 0.5;      // I, half-integer
  double gamma_n = 0.0;   // kHz/mT, signed
  double Q_zz = 0.0;      // quadrupole, MHz (zero for I=1/2)
  Matrix3d A_gs = Matrix3d::Zero();  // hyperfine, MHz, ground manifold
  Matrix3d A_es = Matrix3d::Zero();  // hyperfine, MHz, excited manifold

  int dim() const { return static_cast<int>(std::lround(2.0 * spin + 1.0)); }

  void validate() const {
    double twoI = 2.0 * spin;
    if (std::abs(twoI - std::lround(twoI)) > 1e-9 || spin <= 0)
      throw ConfigError("NuclearSpecies: spin must be a positive half-integer");
    if (dim() == 2 && Q_zz != 0.0)
      throw ConfigError("NuclearSpecies: Q_zz must be 0 for I=1/2");
    if (!A_gs.allFinite() || !A_es.allFinite() || !std::isfinite(gamma_n))
      throw ConfigError("NuclearSpecies: non-finite tensor or gamma_n");
  }
};

// Spin-system configuration: zero-field splittings plus the nuclear register.
struct SpinSystemConfig {
  double D_gs = 3480.0;   // MHz
  double D_es = 2100.0;   // MHz
  double gamma_e = 28.0;  // MHz/mT
  std::vector<NuclearSpecies> nuclei;

  int nuclear_dim() const {
    int d = 1;
    for (const auto& n : nuclei) d *= n.dim();
    return d;
  }
  int total_dim() const { return kNumLevels * nuclear_dim(); }

  void validate() const {
    if (!(D_gs > 0.0) || !(D_es > 0.0))
      throw ConfigError("SpinSystemConfig: D_gs and D_es must be > 0");
    if (!(gamma_e > 0.0))
      throw ConfigError("SpinSystemConfig: gamma_e must be > 0");
    for (const auto& n : nuclei) n.validate();
  }
};

// External field: magnitude plus tilt from the defect z-axis.
struct MagneticField {
  double B_mag = 0.0;   // mT
  double theta = 0.0;   // degrees, tilt from z
  double phi = 0.0;     // degrees, in-plane azimuth

  double Bz() const { return B_mag * std::cos(theta * M_PI / 180.0); }
  double Bx() const {
    return B_mag * std::sin(theta * M_PI / 180.0) * std::cos(phi * M_PI / 180.0);
  }
  double By() const {
    return B_mag * std::sin(theta * M_PI / 180.0) * std::sin(phi * M_PI / 180.0);
  }
  Eigen::Vector3d vec() const { return {Bx(), By(), Bz()}; }

  void validate() const {
    if (!(B_mag >= 0.0)) throw InvalidArgument("MagneticField: B_mag < 0");
  }
};

}  // namespace vbsim
