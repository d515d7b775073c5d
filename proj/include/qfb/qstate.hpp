#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "qfb/linalg.hpp"

namespace qfb {

// Pure vector or density matrix plus normalization metadata. Values are
// immutable after construction; all operations below are pure functions.
class QuantumState {
 public:
  enum class Rep { Pure, Density };
  enum class NormMode { Normalized, Unnormalized };

  static QuantumState pure(Vector psi, NormMode mode = NormMode::Normalized) {
    QuantumState s;
    s.rep_ = Rep::Pure;
    s.mode_ = mode;
    s.psi_ = std::move(psi);
    s.validate();
    return s;
  }

  static QuantumState density(Matrix rho, NormMode mode = NormMode::Normalized) {
    QuantumState s;
    s.rep_ = Rep::Density;
    s.mode_ = mode;
    s.rho_ = std::move(rho);
    require_square(s.rho_, "QuantumState");
    s.validate();
    return s;
  }

  Rep rep() const { return rep_; }
  NormMode norm_mode() const { return mode_; }
  bool is_pure() const { return rep_ == Rep::Pure; }
  Index dim() const { return is_pure() ? psi_.size() : rho_.rows(); }

  const Vector& vec() const {
    if (!is_pure()) throw InvalidStateError("not a pure state");
    return psi_;
  }

  const Matrix& mat() const {
    if (is_pure()) throw InvalidStateError("not a density matrix");
    return rho_;
  }

  Matrix to_density() const {
    return is_pure() ? Matrix(psi_ * psi_.adjoint()) : rho_;
  }

  // <psi|psi> or Tr rho; the trajectory weight for unnormalized states.
  double norm2() const {
    return is_pure() ? psi_.squaredNorm() : rho_.trace().real();
  }

  QuantumState normalized() const {
    double n = norm2();
    if (n <= 0) throw InvalidStateError("cannot normalize zero state");
    if (is_pure()) return pure(psi_ / std::sqrt(n));
    return density(rho_ / n);
  }

 private:
  void validate() const {
    if (!validation_enabled() || mode_ == NormMode::Unnormalized) return;
    const double tol = validation_tolerance();
    if (is_pure()) {
      if (std::abs(1.0 - psi_.squaredNorm()) > tol)
        throw InvalidStateError("pure state is not normalized");
    } else {
      if (std::abs(1.0 - rho_.trace().real()) > tol)
        throw InvalidStateError("density matrix trace differs from 1");
      if (!is_hermitian(rho_, 1e-10 + 10 * tol))
        throw InvalidStateError("density matrix is not Hermitian");
      Eigen::SelfAdjointEigenSolver<Matrix> es(rho_, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -tol)
        throw InvalidStateError("density matrix has negative eigenvalues");
    }
  }

  Rep rep_ = Rep::Pure;
  NormMode mode_ = NormMode::Normalized;
  Vector psi_;
  Matrix rho_;
};

// Ordered tensor-factor dimensions of a composite space.
struct SubsystemLayout {
  std::vector<Index> factor_dims;

  Index total_dim() const {
    Index d = 1;
    for (Index f : factor_dims) d *= f;
    return d;
  }
};

inline Matrix tensor(const Matrix& a, const Matrix& b) { return kron(a, b); }
inline Vector tensor(const Vector& a, const Vector& b) { return kron(a, b); }

inline QuantumState tensor(const QuantumState& a, const QuantumState& b) {
  if (a.is_pure() && b.is_pure())
    return QuantumState::pure(kron(a.vec(), b.vec()));
  return QuantumState::density(kron(a.to_density(), b.to_density()));
}

// Partial trace keeping the factors listed in `keep` (in layout order).
inline Matrix partial_trace(const Matrix& rho, const SubsystemLayout& layout,
                            const std::vector<int>& keep) {
  require_square(rho, "partial_trace");
  if (layout.total_dim() != rho.rows())
    throw DimensionError("partial_trace: layout does not match state");
  const int n = static_cast<int>(layout.factor_dims.size());
  std::vector<bool> keep_mask(n, false);
  for (int k : keep) {
    if (k < 0 || k >= n) throw DimensionError("partial_trace: bad keep index");
    keep_mask[k] = true;
  }

  Index kept_dim = 1, traced_dim = 1;
  for (int s = 0; s < n; ++s)
    (keep_mask[s] ? kept_dim : traced_dim) *= layout.factor_dims[s];

  // Strides of each factor in the full index.
  std::vector<Index> stride(n);
  Index acc = 1;
  for (int s = n - 1; s >= 0; --s) {
    stride[s] = acc;
    acc *= layout.factor_dims[s];
  }

  auto full_index = [&](Index kept, Index traced) {
    Index idx = 0;
    // Decompose kept/traced multi-indices factor by factor, layout order.
    Index kq = kept, tq = traced;
    Index kden = kept_dim, tden = traced_dim;
    for (int s = 0; s < n; ++s) {
      Index d = layout.factor_dims[s];
      if (keep_mask[s]) {
        kden /= d;
        idx += (kq / kden) * stride[s];
        kq %= kden;
      } else {
        tden /= d;
        idx += (tq / tden) * stride[s];
        tq %= tden;
      }
    }
    return idx;
  };

  Matrix out = Matrix::Zero(kept_dim, kept_dim);
  for (Index i = 0; i < kept_dim; ++i)
    for (Index j = 0; j < kept_dim; ++j)
      for (Index t = 0; t < traced_dim; ++t)
        out(i, j) += rho(full_index(i, t), full_index(j, t));
  return out;
}

inline Matrix partial_trace(const QuantumState& s, const SubsystemLayout& layout,
                            const std::vector<int>& keep) {
  return partial_trace(s.to_density(), layout, keep);
}

struct BlochVector {
  double x = 0, y = 0, z = 0;
  double r() const { return std::sqrt(x * x + y * y + z * z); }
};

inline BlochVector to_bloch(const Matrix& rho) {
  if (rho.rows() != 2) throw DimensionError("to_bloch: dim must be 2");
  return {expectation(sigma_x(), rho).real(), expectation(sigma_y(), rho).real(),
          expectation(sigma_z(), rho).real()};
}

inline Matrix from_bloch(const BlochVector& b) {
  if (b.r() > 1.0 + 1e-9)
    throw InvalidStateError("from_bloch: |r| > 1 is not a state");
  return 0.5 * (Matrix::Identity(2, 2) + b.x * sigma_x() + b.y * sigma_y() +
                b.z * sigma_z());
}

inline double purity(const Matrix& rho) { return (rho * rho).trace().real(); }

// |<psi*| sigma_y x sigma_y |psi>| for a normalized two-qubit pure state.
inline double concurrence(const Vector& psi) {
  if (psi.size() != 4) throw DimensionError("concurrence: dim must be 4");
  Matrix yy = kron(sigma_y(), sigma_y());
  return std::abs((psi.transpose() * yy * psi).value());
}

inline double concurrence(const QuantumState& s) { return concurrence(s.vec()); }

// Fidelity to the closest maximally entangled state (singlet fraction).
inline double max_entangled_fidelity(double c) {
  if (c < -1e-12 || c > 1.0 + 1e-12)
    throw DomainError("max_entangled_fidelity: concurrence outside [0,1]");
  return (c + 1.0) / 2.0;
}

inline double binary_entropy(double p) {
  double e = 0.0;
  if (p > 0) e -= p * std::log2(p);
  if (p < 1) e -= (1 - p) * std::log2(1 - p);
  return e;
}

// Von Neumann entropy (base 2). Eigenvalues are clipped at zero within a
// 1e-9 budget before the log; 0 log 0 := 0.
inline double von_neumann_entropy(const Matrix& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho, Eigen::EigenvaluesOnly);
  double out = 0.0;
  for (Index i = 0; i < rho.rows(); ++i) {
    double p = es.eigenvalues()(i);
    if (p < -1e-9) throw InvalidStateError("entropy of a non-PSD matrix");
    if (p > 1e-15) out -= p * std::log2(p);
  }
  return out;
}

inline double entanglement_entropy(const Vector& psi,
                                   const SubsystemLayout& layout) {
  Matrix rho1 = partial_trace(psi * psi.adjoint(), layout, {0});
  return von_neumann_entropy(rho1);
}

namespace detail {
inline double poisson_tail_mass(double lambda, Index n) {
  // P(X >= n) for X ~ Poisson(lambda), by direct summation of the head.
  double term = std::exp(-lambda), cdf = term;
  for (Index k = 1; k < n; ++k) {
    term *= lambda / static_cast<double>(k);
    cdf += term;
  }
  return 1.0 - cdf;
}
}  // namespace detail

inline Matrix ladder_a(Index dim) {
  Matrix a = Matrix::Zero(dim, dim);
  for (Index n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(double(n));
  return a;
}

// exp(alpha a^† - alpha* a) on a Fock space truncated to `dim` levels. The
// truncation must hold the Poisson tail mass of |alpha|^2 beyond dim under
// 1e-8, so the error is explicit and testable.
inline Matrix displacement_op(Complex alpha, Index dim) {
  if (detail::poisson_tail_mass(std::norm(alpha), dim) >= 1e-8)
    throw TruncationError("displacement_op: Fock truncation too small");
  Matrix a = ladder_a(dim);
  return expm(alpha * a.adjoint() - std::conj(alpha) * a);
}

inline Vector coherent_state(Complex alpha, Index dim) {
  return displacement_op(alpha, dim) * basis_state(dim, 0);
}

// exp((z* a^2 - z a^†2)/2) with the same tail-mass rule; squeezed photon
// number is sinh^2|z|.
inline Matrix squeeze_op(Complex z, Index dim) {
  double nbar = std::sinh(std::abs(z)) * std::sinh(std::abs(z));
  if (detail::poisson_tail_mass(nbar + 1.0, dim) >= 1e-8)
    throw TruncationError("squeeze_op: Fock truncation too small");
  Matrix a = ladder_a(dim);
  Matrix a2 = a * a;
  return expm(0.5 * (std::conj(z) * a2 - z * a2.adjoint()));
}

inline double husimi_q(const Matrix& rho, Complex alpha) {
  Vector coh = coherent_state(alpha, rho.rows());
  return (coh.dot(rho * coh)).real() / kPi;
}

}  // namespace qfb
