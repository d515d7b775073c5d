#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "qfb/linalg.hpp"
#include "qfb/noise.hpp"
#include "qfb/qstate.hpp"
#include "qfb/record.hpp"

namespace qfb {

// One monitored bath. The collapse operator M carries the rate (units
// sqrt(frequency)); phase(t) is the detected quadrature angle and
// envelope(t) an optional amplitude modulation of the coupling.
struct MeasurementChannel {
  Matrix collapse;
  double eta = 1.0;
  std::function<double(double)> phase;     // null -> 0
  std::function<double(double)> envelope;  // null -> 1

  static MeasurementChannel make(Matrix m, double eta = 1.0,
                                 std::function<double(double)> phase = nullptr,
                                 std::function<double(double)> envelope = nullptr) {
    require_square(m, "MeasurementChannel");
    if (eta < 0.0 || eta > 1.0)
      throw DomainError("MeasurementChannel: eta outside [0,1]");
    MeasurementChannel c;
    c.collapse = std::move(m);
    c.eta = eta;
    c.phase = std::move(phase);
    c.envelope = std::move(envelope);
    Eigen::SelfAdjointEigenSolver<Matrix> es(
        Matrix(c.collapse.adjoint() * c.collapse), Eigen::EigenvaluesOnly);
    c.rate_ = es.eigenvalues().maxCoeff();
    return c;
  }

  double rate() const { return rate_; }
  double phase_at(double t) const { return phase ? phase(t) : 0.0; }
  double envelope_at(double t) const { return envelope ? envelope(t) : 1.0; }

  // envelope(t) e^{-i phase(t)} M, the operator entering the record terms.
  Matrix detected_at(double t) const {
    Complex f = envelope_at(t) * std::exp(Complex(0, -phase_at(t)));
    return f * collapse;
  }

 private:
  double rate_ = 0.0;
};

inline double stability_guard_limit() { return 0.05; }

inline void check_step_size(double dt, const std::vector<MeasurementChannel>& chans,
                            double t = 0.0) {
  for (const auto& c : chans) {
    double env = c.envelope_at(t);
    if (dt * c.rate() * env * env > stability_guard_limit())
      throw StepSizeError("dt * rate exceeds the stability guard");
  }
}

// ---------------------------------------------------------------------------
// Kraus maps

// With an outcome index: conditional state and its probability. Without:
// the unconditional Kraus map.
inline std::pair<QuantumState, double> kraus_apply(const QuantumState& state,
                                                   const std::vector<Matrix>& kraus,
                                                   int outcome) {
  if (kraus.empty()) throw DomainError("kraus_apply: empty operator set");
  const Index d = state.dim();
  Matrix sum = Matrix::Zero(d, d);
  for (const auto& k : kraus) {
    require_same_dim(k.rows(), d, "kraus_apply");
    sum += k.adjoint() * k;
  }
  sum -= Matrix::Identity(d, d);
  if (sum.cwiseAbs().maxCoeff() > 1e-8)
    throw InvalidPovmError("kraus_apply: completeness violated");

  if (outcome < 0 || outcome >= static_cast<int>(kraus.size()))
    throw DomainError("kraus_apply: outcome index out of range");
  const Matrix& omega = kraus[outcome];
  if (state.is_pure()) {
    Vector phi = omega * state.vec();
    double p = phi.squaredNorm();
    if (p < 1e-14) throw ZeroProbabilityError("kraus_apply: outcome probability ~ 0");
    return {QuantumState::pure(phi / std::sqrt(p)), p};
  }
  Matrix r = omega * state.mat() * omega.adjoint();
  double p = r.trace().real();
  if (p < 1e-14) throw ZeroProbabilityError("kraus_apply: outcome probability ~ 0");
  return {QuantumState::density(r / p), p};
}

inline QuantumState kraus_apply(const QuantumState& state,
                                const std::vector<Matrix>& kraus) {
  if (kraus.empty()) throw DomainError("kraus_apply: empty operator set");
  const Index d = state.dim();
  Matrix sum = Matrix::Zero(d, d);
  for (const auto& k : kraus) {
    require_same_dim(k.rows(), d, "kraus_apply");
    sum += k.adjoint() * k;
  }
  sum -= Matrix::Identity(d, d);
  if (sum.cwiseAbs().maxCoeff() > 1e-8)
    throw InvalidPovmError("kraus_apply: completeness violated");
  Matrix rho = state.to_density();
  Matrix out = Matrix::Zero(d, d);
  for (const auto& k : kraus) out += k * rho * k.adjoint();
  return QuantumState::density(out);
}

// ---------------------------------------------------------------------------
// Diffusive steps

struct SmeResult {
  Matrix rho;
  std::vector<double> dr;
};

// Euler-Maruyama step of the diffusive SME. Kept alongside the exponential
// backend for convergence testing.
inline SmeResult sme_step(const Matrix& rho, const std::vector<MeasurementChannel>& chans,
                          const Matrix& H, double dt, NoiseSource& noise,
                          double t = 0.0) {
  check_step_size(dt, chans, t);
  Matrix drho = -kI * commutator(H, rho) * dt;
  std::vector<double> dr(chans.size());
  for (size_t i = 0; i < chans.size(); ++i) {
    const auto& c = chans[i];
    double env = c.envelope_at(t);
    Matrix m = env * c.collapse;
    Matrix mdet = c.detected_at(t);
    double dw = noise.wiener(dt);
    drho += dissipator(m, rho) * dt;
    drho += std::sqrt(c.eta) * innovation(mdet, rho) * dw;
    dr[i] = std::sqrt(c.eta) * ((mdet + mdet.adjoint()) * rho).trace().real() * dt + dw;
  }
  Matrix out = rho + drho;
  out /= out.trace().real();
  return {std::move(out), std::move(dr)};
}

struct SseResult {
  Vector psi;
  double dr;
};

// Euler step of the normalized SSE; valid only at unit efficiency. An
// optional (possibly non-Hermitian) Hamiltonian models no-jump evolution.
inline SseResult sse_step(const Vector& psi, const MeasurementChannel& chan,
                          double dt, NoiseSource& noise, double t = 0.0,
                          const std::optional<Matrix>& hamiltonian = std::nullopt) {
  if (chan.eta != 1.0)
    throw UnsupportedError("sse_step: unraveling requires eta = 1");
  check_step_size(dt, {chan}, t);
  Matrix m = chan.detected_at(t);
  Complex mexp = expectation(Matrix(m + m.adjoint()), psi);
  double mr = mexp.real();
  double dw = noise.wiener(dt);
  Vector dpsi = (m * psi - 0.5 * mr * psi) * dw;
  dpsi -= 0.5 * (m.adjoint() * (m * psi) - mr * (m * psi) + 0.25 * mr * mr * psi) * dt;
  if (hamiltonian) dpsi -= kI * (*hamiltonian) * psi * dt;
  double dr = mr * dt + dw;
  return {psi + dpsi, dr};
}

struct LinearSseResult {
  Vector psi;     // unnormalized
  double weight;  // <psi|psi>, usable as trajectory probability density
};

// Linear (unnormalized) SSE step driven by an externally supplied dW.
inline LinearSseResult linear_sse_step(const Vector& psi,
                                       const MeasurementChannel& chan, double dt,
                                       double dw, double t = 0.0) {
  Matrix m = chan.detected_at(t);
  Vector out = psi + m * psi * dw - 0.5 * (m.adjoint() * (m * psi)) * dt;
  return {out, out.squaredNorm()};
}

struct JumpResult {
  Vector psi;
  bool jumped = false;
};

// Quantum jump unraveling: jump with probability gamma dt <c^† c>, else
// evolve under the no-jump contraction and renormalize.
inline JumpResult jump_step(const Vector& psi, const Matrix& c, double gamma,
                            double dt, NoiseSource& noise) {
  if (gamma * dt > stability_guard_limit())
    throw StepSizeError("jump_step: gamma dt exceeds the stability guard");
  Matrix cc = c.adjoint() * c;
  double p_jump = gamma * dt * expectation(cc, psi).real();
  if (noise.uniform() < p_jump) {
    Vector phi = c * psi;
    return {phi / phi.norm(), true};
  }
  Vector phi = expm(Matrix(-0.5 * gamma * dt * cc)) * psi;
  return {phi / phi.norm(), false};
}

// ---------------------------------------------------------------------------
// Unconditioned (Lindblad) evolution

inline Matrix lindblad_rhs(const Matrix& rho, const Matrix& H,
                           const std::vector<MeasurementChannel>& chans,
                           double t = 0.0) {
  Matrix d = -kI * commutator(H, rho);
  for (const auto& c : chans) {
    Matrix m = c.envelope_at(t) * c.collapse;
    d += dissipator(m, rho);
  }
  return d;
}

// Classic RK4 step; trace preserved to integrator order.
inline Matrix lindblad_step(const Matrix& rho, const Matrix& H,
                            const std::vector<MeasurementChannel>& chans,
                            double dt, double t = 0.0) {
  Matrix k1 = lindblad_rhs(rho, H, chans, t);
  Matrix k2 = lindblad_rhs(rho + 0.5 * dt * k1, H, chans, t + 0.5 * dt);
  Matrix k3 = lindblad_rhs(rho + 0.5 * dt * k2, H, chans, t + 0.5 * dt);
  Matrix k4 = lindblad_rhs(rho + dt * k3, H, chans, t + dt);
  return rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Superoperator of the time-independent generator, column-major vec
// convention: vec(A X B) = (B^T (x) A) vec(X).
inline Matrix lindblad_generator(const Matrix& H,
                                 const std::vector<MeasurementChannel>& chans) {
  const Index d = H.rows();
  Matrix id = Matrix::Identity(d, d);
  Matrix L = -kI * (kron(id, H) - kron(H.transpose(), id));
  for (const auto& c : chans) {
    const Matrix& m = c.collapse;
    Matrix mm = m.adjoint() * m;
    L += kron(m.conjugate(), m) - 0.5 * kron(id, mm) - 0.5 * kron(mm.transpose(), id);
  }
  return L;
}

// Exact dense solution rho(t) = exp(L t) rho(0); completely positive.
inline Matrix lindblad_solve(const Matrix& rho0, const Matrix& H,
                             const std::vector<MeasurementChannel>& chans,
                             double t) {
  const Index d = rho0.rows();
  Matrix L = lindblad_generator(H, chans);
  Matrix prop = (L * t).exp();
  Vector v = Eigen::Map<const Vector>(rho0.data(), d * d);
  Vector out = prop * v;
  return Eigen::Map<const Matrix>(out.data(), d, d);
}

// ---------------------------------------------------------------------------
// Exact finite-time QND solution

// Finite-time Kraus family Omega_r ~ exp(-(r - 2MT)^2 / 4T) for Hermitian M,
// with outcome density P(r) a Gaussian mixture weighted by the populations.
class QndSolution {
 public:
  QndSolution(const Matrix& m, const Matrix& rho, double T) : T_(T) {
    if (T <= 0) throw DomainError("qnd_solution: T must be positive");
    if (!is_hermitian(m, 1e-10))
      throw UnsupportedError("qnd_solution: M must be Hermitian");
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    eigvals_ = es.eigenvalues();
    eigvecs_ = es.eigenvectors();
    weights_ = (eigvecs_.adjoint() * rho * eigvecs_).diagonal().real();
  }

  const RealVector& eigenvalues() const { return eigvals_; }
  const RealVector& weights() const { return weights_; }
  double T() const { return T_; }

  Matrix omega(double r) const {
    RealVector g(eigvals_.size());
    for (Index i = 0; i < eigvals_.size(); ++i) {
      double x = r - 2.0 * eigvals_(i) * T_;
      g(i) = std::exp(-x * x / (4.0 * T_));
    }
    double norm = std::pow(2.0 * kPi * T_, -0.25);
    return norm * eigvecs_ * g.cast<Complex>().asDiagonal() * eigvecs_.adjoint();
  }

  double pdf(double r) const {
    double p = 0;
    for (Index i = 0; i < eigvals_.size(); ++i) {
      double x = r - 2.0 * eigvals_(i) * T_;
      p += weights_(i) * std::exp(-x * x / (2.0 * T_));
    }
    return p / std::sqrt(2.0 * kPi * T_);
  }

  double cdf(double r) const {
    double p = 0;
    for (Index i = 0; i < eigvals_.size(); ++i) {
      double x = (r - 2.0 * eigvals_(i) * T_) / std::sqrt(2.0 * T_);
      p += weights_(i) * 0.5 * std::erfc(-x);
    }
    return p;
  }

 private:
  double T_;
  RealVector eigvals_;
  RealVector weights_;
  Matrix eigvecs_;
};

inline QndSolution qnd_solution(const Matrix& m, const Matrix& rho, double T) {
  return QndSolution(m, rho, T);
}

// ---------------------------------------------------------------------------
// Exponential-Kraus step (default backend)

namespace detail {

inline Matrix exp_kraus_operator(const std::vector<MeasurementChannel>& chans,
                                 const Matrix& H, double dt,
                                 const std::vector<double>& dr, double t) {
  const Index d = H.rows();
  Matrix arg = -kI * H * dt;
  for (size_t i = 0; i < chans.size(); ++i) {
    const auto& c = chans[i];
    Matrix mdet = c.detected_at(t);
    double env = c.envelope_at(t);
    Matrix m = env * c.collapse;
    arg -= 0.5 * c.eta * (m.adjoint() * m) * dt;
    arg -= 0.5 * c.eta * (mdet * mdet) * dt;
    arg += std::sqrt(c.eta) * mdet * dr[i];
  }
  (void)d;
  return expm(arg);
}

}  // namespace detail

struct ExpKrausResult {
  QuantumState state;
  std::vector<double> dr;
};

// Record-driven update. The normalized exponential Kraus operator keeps the
// state positive at any finite dt and agrees with sme_step to O(dt^2) per
// step. Inefficiency is applied as an extra dephasing map over the
// unobserved channel fraction.
inline QuantumState exp_kraus_apply(const QuantumState& state,
                                    const std::vector<MeasurementChannel>& chans,
                                    const Matrix& H, double dt,
                                    const std::vector<double>& dr, double t = 0.0) {
  if (dr.size() != chans.size())
    throw DimensionError("exp_kraus_apply: one record increment per channel");
  Matrix omega = detail::exp_kraus_operator(chans, H, dt, dr, t);

  bool all_efficient = true;
  for (const auto& c : chans)
    if (c.eta < 1.0) all_efficient = false;

  if (state.is_pure() && all_efficient) {
    Vector phi = omega * state.vec();
    double n = phi.norm();
    if (n < 1e-150) throw ZeroProbabilityError("exp_kraus_apply: vanishing norm");
    return QuantumState::pure(phi / n);
  }

  Matrix rho = omega * state.to_density() * omega.adjoint();
  for (const auto& c : chans) {
    if (c.eta >= 1.0) continue;
    double w = (1.0 - c.eta) * dt;
    double env = c.envelope_at(t);
    Matrix m = env * c.collapse;
    Matrix mm = m.adjoint() * m;
    Matrix v0 = Matrix::Identity(rho.rows(), rho.cols()) - 0.5 * w * mm;
    rho = v0 * rho * v0.adjoint() + w * m * rho * m.adjoint();
  }
  double tr = rho.trace().real();
  if (tr < 1e-150) throw ZeroProbabilityError("exp_kraus_apply: vanishing trace");
  return QuantumState::density(rho / tr);
}

// Noise-driven variant: synthesizes dr from the current state and the
// supplied Wiener increments.
inline ExpKrausResult exp_kraus_step(const QuantumState& state,
                                     const std::vector<MeasurementChannel>& chans,
                                     const Matrix& H, double dt, NoiseSource& noise,
                                     double t = 0.0) {
  Matrix rho = state.to_density();
  std::vector<double> dr(chans.size());
  for (size_t i = 0; i < chans.size(); ++i) {
    Matrix mdet = chans[i].detected_at(t);
    double mean = ((mdet + mdet.adjoint()) * rho).trace().real();
    dr[i] = std::sqrt(chans[i].eta) * mean * dt + noise.wiener(dt);
  }
  return {exp_kraus_apply(state, chans, H, dt, dr, t), std::move(dr)};
}

}  // namespace qfb
