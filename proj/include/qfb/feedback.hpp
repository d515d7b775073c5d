#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "qfb/stochastic.hpp"

namespace qfb {

// Declared Hamiltonian directions available to the feedback controller.
// The multi-channel derivation assumes the basis commutes pairwise; a
// non-commuting basis is accepted but flagged.
struct FeedbackBasis {
  std::vector<Matrix> hamiltonians;
  bool commutes = true;

  static FeedbackBasis make(std::vector<Matrix> hs) {
    FeedbackBasis b;
    b.hamiltonians = std::move(hs);
    for (const auto& h : b.hamiltonians)
      if (!is_hermitian(h, 1e-10))
        throw DomainError("FeedbackBasis: Hamiltonians must be Hermitian");
    for (size_t i = 0; i < b.hamiltonians.size() && b.commutes; ++i)
      for (size_t j = i + 1; j < b.hamiltonians.size(); ++j)
        if (commutator(b.hamiltonians[i], b.hamiltonians[j]).cwiseAbs().maxCoeff() >
            1e-10) {
          b.commutes = false;
          break;
        }
    return b;
  }
};

struct PaqsCoefficients {
  RealMatrix A;  // channels x hamiltonians
  RealVector B;  // hamiltonians
  RealMatrix hessian;
  bool singular = false;        // pseudoinverse truncated singular values
  bool hessian_negative = true; // negative definite => local maximum
};

namespace detail {

inline double real_checked(Complex z, double scale, const char* who) {
  if (std::abs(z.imag()) > 1e-9 * std::max(1.0, scale))
    throw Error(std::string(who) + ": imaginary residue exceeds tolerance");
  return z.real();
}

inline Complex sandwich(const Vector& psi_t, const Matrix& op) {
  return psi_t.dot(op * psi_t);
}

}  // namespace detail

// Locally optimal single-channel coefficients. Requires the local-extremum
// consistency condition <psi_T|[H, rho]|psi_T> = 0; callers re-zero it with a
// corrective rotation when the residual grows.
inline std::pair<double, double> paqs_coeffs(const Matrix& rho, const Matrix& m,
                                             const Matrix& h, double eta,
                                             const Vector& target) {
  Matrix h_rho = commutator(h, rho);
  double op_scale = h.cwiseAbs().maxCoeff();
  if (h_rho.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, op_scale))
    return {0.0, 0.0};  // [H, rho] = 0: feedback has no effect

  Complex extremum = detail::sandwich(target, h_rho);
  if (std::abs(extremum) > 1e-8 * std::max(1.0, op_scale))
    throw DomainError("paqs_coeffs: local-extremum precondition violated");

  double denom = detail::real_checked(
      detail::sandwich(target, commutator(h, h_rho)), op_scale * op_scale,
      "paqs_coeffs denominator");
  double scale = std::max(1.0, op_scale * op_scale);
  if (std::abs(denom) < 1e-12 * scale)
    throw SingularError("paqs_coeffs: vanishing denominator, run global search");

  Matrix mr = m * rho + rho * m.adjoint();
  Complex a1_num = -kI * std::sqrt(eta) * detail::sandwich(target, commutator(h, mr));
  double a1 = detail::real_checked(a1_num, scale, "paqs_coeffs A1") / denom;

  Matrix inner = kI * dissipator(m, rho) +
                 std::sqrt(eta) * a1 * commutator(h, mr) +
                 kI * a1 * a1 * dissipator(h, rho);
  double a2 = detail::real_checked(-detail::sandwich(target, commutator(h, inner)),
                                   scale, "paqs_coeffs A2") /
              denom;
  return {a1, a2};
}

// Second derivative of the fidelity at the locally optimal angle; negative
// means the extremum is a maximum.
inline double second_derivative_test(const Matrix& rho_c, const Matrix& h,
                                     const Vector& target) {
  return detail::real_checked(
      -detail::sandwich(target, commutator(h, commutator(h, rho_c))),
      h.cwiseAbs().maxCoeff() + 1.0, "second_derivative_test");
}

// Brute-force argmax of <psi_T| e^{-iH theta} rho e^{iH theta} |psi_T> over
// [-pi, pi); ties break toward the smallest |theta|.
inline double global_angle_search(const Matrix& rho, const Matrix& h,
                                  const Vector& target, int resolution = 720) {
  if (resolution < 720)
    throw DomainError("global_angle_search: resolution must be >= 720");
  Eigen::SelfAdjointEigenSolver<Matrix> es(h);
  Vector tgt = es.eigenvectors().adjoint() * target;
  Matrix rho_t = es.eigenvectors().adjoint() * rho * es.eigenvectors();
  const RealVector& lam = es.eigenvalues();

  double best_f = -1.0, best_theta = 0.0;
  for (int k = 0; k < resolution; ++k) {
    double theta = -kPi + 2.0 * kPi * k / resolution;
    Vector phased(tgt.size());
    for (Index i = 0; i < tgt.size(); ++i)
      phased(i) = std::exp(Complex(0, lam(i) * theta)) * tgt(i);
    double f = (phased.dot(rho_t * phased)).real();
    if (f > best_f + 1e-12 ||
        (f > best_f - 1e-12 && std::abs(theta) < std::abs(best_theta))) {
      best_f = std::max(f, best_f);
      best_theta = theta;
    }
  }
  return best_theta;
}

struct PaqsStepResult {
  Matrix rho;
  double dr = 0.0;
};

// Wiseman-Milburn update with general coefficients: measurement, innovation,
// proportional feedback, noisy-feedback D[H] broadening and the correlated
// measurement-feedback commutator.
inline PaqsStepResult paqs_step(const Matrix& rho, const Matrix& m, const Matrix& h,
                                double eta, double a1, double a2, double dt,
                                NoiseSource& noise) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(m.adjoint() * m),
                                           Eigen::EigenvaluesOnly);
  if (dt * es.eigenvalues().maxCoeff() > stability_guard_limit())
    throw StepSizeError("paqs_step: dt * rate exceeds the stability guard");

  double dw = noise.wiener(dt);
  Matrix mr = m * rho + rho * m.adjoint();
  Matrix drho = dissipator(m, rho) * dt;
  drho += std::sqrt(eta) * innovation(m, rho) * dw;
  drho += -kI * a1 * commutator(h, rho) * dw;
  drho += a1 * a1 * dissipator(h, rho) * dt;
  drho += -kI * commutator(h, Matrix(std::sqrt(eta) * a1 * mr + a2 * rho)) * dt;

  Matrix out = rho + drho;
  out /= out.trace().real();
  double dr = std::sqrt(eta) * mr.trace().real() * dt + dw;
  return {std::move(out), dr};
}

// Multi-channel, multi-Hamiltonian generalization. A and B come from the
// Moore-Penrose pseudoinverse of the commutator-expectation matrix c; the
// Hessian is evaluated and reported so callers can fall back to a global
// search when it fails to be negative definite.
inline PaqsCoefficients multi_paqs_coeffs(const Matrix& rho,
                                          const std::vector<MeasurementChannel>& chans,
                                          const FeedbackBasis& basis,
                                          const Vector& target,
                                          double svd_rel_tol = 1e-10) {
  const int nh = static_cast<int>(basis.hamiltonians.size());
  const int nc = static_cast<int>(chans.size());
  if (nh == 0 || nc == 0)
    throw DomainError("multi_paqs_coeffs: empty basis or channel list");

  std::vector<Matrix> h_rho(nh);
  for (int j = 0; j < nh; ++j) h_rho[j] = commutator(basis.hamiltonians[j], rho);

  RealMatrix c(nh, nh);  // c(j, alpha)
  for (int j = 0; j < nh; ++j)
    for (int al = 0; al < nh; ++al) {
      Complex v =
          detail::sandwich(target, commutator(basis.hamiltonians[al], h_rho[j]));
      c(j, al) = detail::real_checked(v, 1.0 + std::abs(v), "multi_paqs c");
    }

  // a(i, alpha) is purely imaginary; store the imaginary part.
  RealMatrix a_im(nc, nh);
  std::vector<Matrix> mrho(nc);
  for (int i = 0; i < nc; ++i) {
    mrho[i] = chans[i].collapse * rho + rho * chans[i].collapse.adjoint();
    for (int al = 0; al < nh; ++al) {
      Complex v = std::sqrt(chans[i].eta) *
                  detail::sandwich(target, commutator(basis.hamiltonians[al], mrho[i]));
      if (std::abs(v.real()) > 1e-9 * (1.0 + std::abs(v.imag())))
        throw Error("multi_paqs_coeffs: a matrix has a real residue");
      a_im(i, al) = v.imag();
    }
  }

  // Pseudoinverse of c with relative singular-value truncation.
  Eigen::JacobiSVD<RealMatrix> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
  RealVector sv = svd.singularValues();
  double cutoff = svd_rel_tol * (sv.size() ? sv(0) : 0.0);
  bool truncated = false;
  RealVector inv = RealVector::Zero(sv.size());
  for (Index k = 0; k < sv.size(); ++k) {
    if (sv(k) > cutoff && sv(k) > 0)
      inv(k) = 1.0 / sv(k);
    else
      truncated = true;
  }
  RealMatrix c_pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();

  PaqsCoefficients out;
  out.singular = truncated;
  // A = -i a c^+ with a = i a_im: -i * (i a_im) c^+ = a_im c^+.
  out.A = a_im * c_pinv;

  RealVector b_im(nh);
  for (int al = 0; al < nh; ++al) {
    Matrix acc = Matrix::Zero(rho.rows(), rho.cols());
    for (int i = 0; i < nc; ++i) {
      acc += dissipator(chans[i].collapse, rho);
      for (int j = 0; j < nh; ++j)
        acc += -kI * std::sqrt(chans[i].eta) * out.A(i, j) *
               commutator(basis.hamiltonians[j], mrho[i]);
      for (int j = 0; j < nh; ++j)
        for (int k = 0; k < nh; ++k) {
          if (out.A(i, j) == 0.0 || out.A(i, k) == 0.0) continue;
          const Matrix& hj = basis.hamiltonians[j];
          const Matrix& hk = basis.hamiltonians[k];
          acc += out.A(i, j) * out.A(i, k) *
                 (hk * rho * hj - 0.5 * (hj * hk * rho + rho * hj * hk));
        }
    }
    Complex v = detail::sandwich(target, commutator(basis.hamiltonians[al], acc));
    if (std::abs(v.real()) > 1e-8 * (1.0 + std::abs(v.imag())))
      throw Error("multi_paqs_coeffs: b vector has a real residue");
    b_im(al) = v.imag();
  }
  out.B = c_pinv.transpose() * b_im;

  out.hessian = RealMatrix(nh, nh);
  for (int al = 0; al < nh; ++al)
    for (int j = 0; j < nh; ++j) out.hessian(al, j) = -c(j, al);
  Eigen::SelfAdjointEigenSolver<RealMatrix> hes(out.hessian, Eigen::EigenvaluesOnly);
  out.hessian_negative = hes.eigenvalues().maxCoeff() < 1e-10;
  return out;
}

// Drift of the multi-channel feedback master equation; with dW terms dropped
// this is the ASLO (average-state) generator.
inline Matrix multi_paqs_drift(const Matrix& rho,
                               const std::vector<MeasurementChannel>& chans,
                               const FeedbackBasis& basis,
                               const PaqsCoefficients& k) {
  const int nh = static_cast<int>(basis.hamiltonians.size());
  const int nc = static_cast<int>(chans.size());
  Matrix d = Matrix::Zero(rho.rows(), rho.cols());
  for (int i = 0; i < nc; ++i) d += dissipator(chans[i].collapse, rho);
  for (int j = 0; j < nh; ++j)
    d += -kI * k.B(j) * commutator(basis.hamiltonians[j], rho);
  for (int i = 0; i < nc; ++i) {
    Matrix mr = chans[i].collapse * rho + rho * chans[i].collapse.adjoint();
    for (int j = 0; j < nh; ++j)
      if (k.A(i, j) != 0.0)
        d += -kI * std::sqrt(chans[i].eta) * k.A(i, j) *
             commutator(basis.hamiltonians[j], mr);
    for (int j = 0; j < nh; ++j)
      for (int l = 0; l < nh; ++l) {
        if (k.A(i, j) == 0.0 || k.A(i, l) == 0.0) continue;
        const Matrix& hj = basis.hamiltonians[j];
        const Matrix& hl = basis.hamiltonians[l];
        d += k.A(i, j) * k.A(i, l) *
             (hl * rho * hj - 0.5 * (hj * hl * rho + rho * hj * hl));
      }
  }
  return d;
}

// Filtered-mode stochastic step of the multi-channel feedback equation.
inline SmeResult multi_paqs_step(const Matrix& rho,
                                 const std::vector<MeasurementChannel>& chans,
                                 const FeedbackBasis& basis,
                                 const PaqsCoefficients& k, double dt,
                                 NoiseSource& noise) {
  check_step_size(dt, chans);
  Matrix drho = multi_paqs_drift(rho, chans, basis, k) * dt;
  std::vector<double> dr(chans.size());
  for (size_t i = 0; i < chans.size(); ++i) {
    double dw = noise.wiener(dt);
    Matrix mr = chans[i].collapse * rho + rho * chans[i].collapse.adjoint();
    Matrix noise_op = std::sqrt(chans[i].eta) * innovation(chans[i].collapse, rho);
    for (size_t j = 0; j < basis.hamiltonians.size(); ++j)
      if (k.A(i, j) != 0.0)
        noise_op += -kI * k.A(i, j) * commutator(basis.hamiltonians[j], rho);
    drho += noise_op * dw;
    dr[i] = std::sqrt(chans[i].eta) * mr.trace().real() * dt + dw;
  }
  Matrix out = rho + drho;
  out /= out.trace().real();
  return {std::move(out), std::move(dr)};
}

// Deterministic propagation of the average state over one step (RK4), with
// coefficients recomputed from rho_bar at each stage start.
inline Matrix aslo_step(const Matrix& rho_bar,
                        const std::vector<MeasurementChannel>& chans,
                        const FeedbackBasis& basis, const Vector& target,
                        double dt) {
  auto rhs = [&](const Matrix& r) {
    PaqsCoefficients k = multi_paqs_coeffs(r, chans, basis, target);
    return multi_paqs_drift(r, chans, basis, k);
  };
  Matrix k1 = rhs(rho_bar);
  Matrix k2 = rhs(Matrix(rho_bar + 0.5 * dt * k1));
  Matrix k3 = rhs(Matrix(rho_bar + 0.5 * dt * k2));
  Matrix k4 = rhs(Matrix(rho_bar + dt * k3));
  Matrix out = rho_bar + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  out = 0.5 * (out + out.adjoint().eval());
  out /= out.trace().real();
  return out;
}

inline Matrix aslo_propagate(Matrix rho_bar,
                             const std::vector<MeasurementChannel>& chans,
                             const FeedbackBasis& basis, const Vector& target,
                             double dt, double t_final) {
  int n = static_cast<int>(std::llround(t_final / dt));
  for (int s = 0; s < n; ++s) rho_bar = aslo_step(rho_bar, chans, basis, target, dt);
  return rho_bar;
}

// Noise-cancellation certificate: |psi> admits deterministic evolution under
// proportional feedback gain P iff it is a right eigenvector of M - iPH; the
// offset V0 absorbs the residual expectation values.
struct DeterministicMode {
  Vector state;
  Complex eigenvalue;
  double v0 = 0.0;
  double residual = 0.0;
  bool certified = false;
};

inline std::vector<DeterministicMode> deterministic_check(const Matrix& m,
                                                          const Matrix& h,
                                                          double gain) {
  require_same_dim(m.rows(), h.rows(), "deterministic_check");
  Eigen::ComplexEigenSolver<Matrix> es(Matrix(m - kI * gain * h));
  std::vector<DeterministicMode> out;
  for (Index k = 0; k < m.rows(); ++k) {
    DeterministicMode mode;
    mode.state = es.eigenvectors().col(k).normalized();
    mode.eigenvalue = es.eigenvalues()(k);
    Complex m_anti = expectation(Matrix(m.adjoint() - m), mode.state);  // imaginary
    Complex h_exp = expectation(h, mode.state);
    if (std::abs(gain) > 1e-300)
      mode.v0 = (m_anti / (2.0 * kI * gain)).real() - h_exp.real();
    double m_mean = 0.5 * expectation(Matrix(m + m.adjoint()), mode.state).real();
    Vector r = (m - m_mean * Matrix::Identity(m.rows(), m.cols()) -
                kI * gain * (h + mode.v0 * Matrix::Identity(m.rows(), m.cols()))) *
               mode.state;
    mode.residual = r.norm();
    mode.certified = mode.residual < 1e-9;
    out.push_back(std::move(mode));
  }
  return out;
}

inline double deterministic_residual(const Vector& psi, const Matrix& m,
                                     const Matrix& h, double gain, double v0) {
  double m_mean = 0.5 * expectation(Matrix(m + m.adjoint()), psi).real();
  Vector r = (m - m_mean * Matrix::Identity(m.rows(), m.cols()) -
              kI * gain * (h + v0 * Matrix::Identity(m.rows(), m.cols()))) *
             psi;
  return r.norm();
}

}  // namespace qfb
