#pragma once

#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

#include "qfb/common.hpp"

namespace qfb {

// exp(A) for a 2x2 complex matrix via Cayley-Hamilton; the hot path in
// single-qubit trajectory loops.
inline Matrix expm2(const Matrix& a) {
  const Complex s = (a(0, 0) + a(1, 1)) / 2.0;
  const Complex b00 = a(0, 0) - s, b01 = a(0, 1), b10 = a(1, 0);
  const Complex q2 = b00 * b00 + b01 * b10;  // B^2 = q^2 I for traceless B
  const Complex q = std::sqrt(q2);
  Complex ch, shq;  // cosh(q), sinh(q)/q
  if (std::abs(q) < 1e-8) {
    ch = 1.0 + q2 / 2.0;
    shq = 1.0 + q2 / 6.0;
  } else {
    ch = std::cosh(q);
    shq = std::sinh(q) / q;
  }
  const Complex es = std::exp(s);
  Matrix r(2, 2);
  r(0, 0) = es * (ch + shq * b00);
  r(0, 1) = es * shq * b01;
  r(1, 0) = es * shq * b10;
  r(1, 1) = es * (ch - shq * b00);
  return r;
}

inline Matrix expm(const Matrix& a) {
  if (a.rows() == 2 && a.cols() == 2) return expm2(a);
  return a.exp();
}

// Principal square root of a PSD Hermitian matrix, eigenvalues clipped at 0.
inline Matrix sqrtm_psd(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  RealVector ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
         es.eigenvectors().adjoint();
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

inline Vector kron(const Vector& a, const Vector& b) {
  Vector out(a.size() * b.size());
  for (Index i = 0; i < a.size(); ++i)
    out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

inline Matrix commutator(const Matrix& a, const Matrix& b) {
  return a * b - b * a;
}

inline Matrix anticommutator(const Matrix& a, const Matrix& b) {
  return a * b + b * a;
}

// Lindblad dissipator D[M]rho = M rho M^† - {M^†M, rho}/2.
inline Matrix dissipator(const Matrix& m, const Matrix& rho) {
  Matrix mm = m.adjoint() * m;
  return m * rho * m.adjoint() - 0.5 * (mm * rho + rho * mm);
}

// Measurement superoperator H[M]rho = M rho + rho M^† - <M+M^†> rho.
inline Matrix innovation(const Matrix& m, const Matrix& rho) {
  Matrix x = m * rho + rho * m.adjoint();
  return x - x.trace() * rho;
}

inline Complex expectation(const Matrix& op, const Matrix& rho) {
  return (op * rho).trace();
}

inline Complex expectation(const Matrix& op, const Vector& psi) {
  return psi.dot(op * psi);
}

// Pauli matrices and common single-qubit states.
inline const Matrix& sigma_x() {
  static const Matrix m = [] {
    Matrix s(2, 2);
    s << 0, 1, 1, 0;
    return s;
  }();
  return m;
}

inline const Matrix& sigma_y() {
  static const Matrix m = [] {
    Matrix s(2, 2);
    s << 0, Complex(0, -1), Complex(0, 1), 0;
    return s;
  }();
  return m;
}

inline const Matrix& sigma_z() {
  static const Matrix m = [] {
    Matrix s(2, 2);
    s << 1, 0, 0, -1;
    return s;
  }();
  return m;
}

// Lowering operator: sigma |0> = |1>, with |0> the excited state on top.
inline const Matrix& sigma_minus() {
  static const Matrix m = [] {
    Matrix s = Matrix::Zero(2, 2);
    s(1, 0) = 1;
    return s;
  }();
  return m;
}

inline Matrix sigma_axis(double delta) {
  return std::cos(delta) * sigma_x() + std::sin(delta) * sigma_y();
}

inline Vector basis_state(Index dim, Index k) {
  Vector v = Vector::Zero(dim);
  v(k) = 1.0;
  return v;
}

// N-site embedding of a single-site operator at position `site` (0-based).
inline Matrix embed(const Matrix& op, int n_sites, int site, Index local_dim = 2) {
  Matrix out = Matrix::Identity(1, 1);
  for (int s = 0; s < n_sites; ++s) {
    const Matrix& factor =
        (s == site) ? op : Matrix(Matrix::Identity(local_dim, local_dim));
    out = kron(out, factor);
  }
  return out;
}

}  // namespace qfb
