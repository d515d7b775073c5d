#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace qfb {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr Complex kI{0.0, 1.0};

// Global tolerance for state/operator validity checks. Configurable; checks
// themselves run only when validation is enabled.
inline double& validation_tolerance() {
  static double tol = 1e-9;
  return tol;
}

inline bool& validation_enabled() {
  static bool on = true;
  return on;
}

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct InvalidStateError : Error {
  using Error::Error;
};
struct TruncationError : Error {
  using Error::Error;
};
struct InvalidPovmError : Error {
  using Error::Error;
};
struct ZeroProbabilityError : Error {
  using Error::Error;
};
struct StepSizeError : Error {
  using Error::Error;
};
struct UnsupportedError : Error {
  using Error::Error;
};
struct SingularError : Error {
  using Error::Error;
};
struct InstabilityError : Error {
  using Error::Error;
};
struct CalibrationError : Error {
  using Error::Error;
};
struct ConditioningError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

inline void require_square(const Matrix& m, const char* who) {
  if (m.rows() != m.cols())
    throw DimensionError(std::string(who) + ": matrix must be square");
}

inline void require_same_dim(Index a, Index b, const char* who) {
  if (a != b)
    throw DimensionError(std::string(who) + ": dimension mismatch (" +
                         std::to_string(a) + " vs " + std::to_string(b) + ")");
}

inline bool is_hermitian(const Matrix& m, double tol) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

inline bool is_unitary(const Matrix& m, double tol) {
  Matrix g = m.adjoint() * m;
  g -= Matrix::Identity(m.rows(), m.cols());
  return g.cwiseAbs().maxCoeff() <= tol;
}

}  // namespace qfb
