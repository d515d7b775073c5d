#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "qfb/feedback.hpp"
#include "qfb/qstate.hpp"
#include "qfb/stochastic.hpp"

namespace qfb {

// ---------------------------------------------------------------------------
// Two-qubit Schmidt parameterization

// Concurrence plus local Euler angles; C may carry a sign (only |C| is the
// concurrence). The antisymmetric phi redundancy is fixed at zero.
struct SchmidtParam {
  double C = 0;
  double theta = 0, dtheta = 0;  // symmetric / antisymmetric theta
  double phi = 0;                // symmetric phi (delta-phi fixed at 0)
  double gamma = 0, dgamma = 0;
};

namespace detail {

inline Matrix euler_zyz(double gamma, double theta, double phi) {
  auto rz = [](double a) {
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = std::exp(Complex(0, -a / 2));
    m(1, 1) = std::exp(Complex(0, a / 2));
    return m;
  };
  auto ry = [](double a) {
    Matrix m(2, 2);
    m << std::cos(a / 2), -std::sin(a / 2), std::sin(a / 2), std::cos(a / 2);
    return m;
  };
  return rz(gamma) * ry(theta) * rz(phi);
}

}  // namespace detail

inline Vector schmidt_state(const SchmidtParam& p) {
  if (std::abs(p.C) > 1.0 + 1e-12)
    throw DomainError("schmidt_state: |C| must not exceed 1");
  double s = std::sqrt(std::max(0.0, 1.0 - p.C * p.C));
  Vector core = Vector::Zero(4);
  core(0) = std::sqrt((1.0 + s) / 2.0);
  core(3) = -std::sqrt((1.0 - s) / 2.0);
  Matrix u1 = detail::euler_zyz(p.gamma + p.dgamma, p.theta + p.dtheta, p.phi);
  Matrix u2 = detail::euler_zyz(p.gamma - p.dgamma, p.theta - p.dtheta, p.phi);
  return kron(u1, u2) * core;
}

// ---------------------------------------------------------------------------
// Concurrence equations of motion under parity measurement and local feedback

enum class Parity { Half, Full };

// One Ito increment of the concurrence under control variables u = cos(theta),
// v = cos(dtheta), w = cos(2 phi). Both branch cases are implemented as
// printed; |C| < 1e-9 selects the C = 0 branch.
inline double concurrence_sde_step(double c, double u, double v, double w,
                                   double dt, double dw_noise, Parity which) {
  if (std::abs(c) > 1.0 + 1e-12) throw DomainError("concurrence_sde_step: |C| > 1");
  for (double x : {u, v, w})
    if (std::abs(x) > 1.0 + 1e-12)
      throw DomainError("concurrence_sde_step: |control| > 1");
  const bool zero_branch = std::abs(c) < 1e-9;
  if (which == Parity::Half) {
    if (zero_branch) return std::abs(v * v - u * u) * dt;
    return 2.0 * c * std::sqrt(std::max(0.0, 1.0 - c * c)) * u * v * dw_noise +
           ((v * v - u * u) * w - c * (v * v + u * u)) * dt;
  }
  if (zero_branch) return (u * u - v * v) * dw_noise;
  double d2 = (u * u - v * v);
  return (1.0 - c * c) *
         (d2 * w * c * dw_noise + d2 * d2 * (1.0 - w * w) * dt / (2.0 * c));
}

// Effective-qubit identifications for the full-parity protocol: the
// concurrence obeys the Bloch-vector-length equation with u~ = w and
// rate~ = 2 (u^2 - v^2)^2.
struct EffectiveQubit {
  double u_tilde = 0;
  double gamma_tilde = 0;
};

inline EffectiveQubit effective_qubit_map(double u, double v, double w) {
  double d = u * u - v * v;
  return {w, 2.0 * d * d};
}

inline double effective_qubit_drift(double r, const EffectiveQubit& q) {
  if (q.gamma_tilde == 0.0) return 0.0;
  return (1.0 - r * r) * q.gamma_tilde * (1.0 - q.u_tilde * q.u_tilde) / (4.0 * r);
}

inline double effective_qubit_noise(double r, const EffectiveQubit& q) {
  return (1.0 - r * r) * std::sqrt(q.gamma_tilde / 2.0) * q.u_tilde;
}

// Entanglement-entropy ceiling reachable under fixed single-qubit dephasing
// rate; binary entropy of (1 +- e^{-t/2})/2.
inline double entropy_bound(double t) {
  if (t < 0) throw DomainError("entropy_bound: t must be nonnegative");
  return binary_entropy((1.0 + std::exp(-t / 2.0)) / 2.0);
}

// Closed-form concurrence trajectories under the optimal protocols.
inline double half_parity_concurrence(double c0, double t) {
  return 1.0 - (1.0 - c0) * std::exp(-t);
}

inline double full_parity_concurrence(double c0, double t) {
  return std::sqrt(std::max(0.0, 1.0 - (1.0 - c0 * c0) * std::exp(-t)));
}

// States on the optimal paths (gamma = dgamma = 0 representatives).
inline Vector half_parity_path_state(double c) {
  Vector psi(4);
  double a = std::sqrt(std::max(0.0, 1.0 - c)) / 2.0;
  double b = std::sqrt(1.0 + c) / 2.0;
  psi << a, b, b, a;
  return psi;
}

inline Vector full_parity_path_state(double c) {
  double e = std::sqrt(std::max(0.0, 1.0 - c * c));  // e^{-t/2}
  double s = std::sqrt(std::max(0.0, 1.0 - e));
  double cc = std::sqrt(1.0 + e);
  Complex lo(s, -cc), hi(s, cc);
  Vector psi(4);
  psi << lo, hi, hi, lo;
  return psi / std::sqrt(8.0);
}

// ---------------------------------------------------------------------------
// Protocol runs

struct ProtocolRun {
  std::vector<double> times;
  std::vector<double> concurrence, fidelity, purity;
  std::vector<double> concurrence_sd, fidelity_sd;
  std::vector<std::vector<double>> gains;  // per-channel feedback gains
  bool deterministic = false;
  std::map<std::string, double> summary;
};

enum class EntangleMode { Feedback, NoFeedback, FixedGain };

struct EntangleOptions {
  Parity which = Parity::Half;
  EntangleMode mode = EntangleMode::Feedback;
  double c0 = 0.0;
  double t_final = 5.0;
  double dt = 1e-4;
  int ensemble = 1;
  uint64_t seed = 1;
  int checkpoints = 100;
  double fixed_gain = 1.0;
  double eta = 1.0;
};

namespace detail {

struct ParityConfig {
  Matrix m, h;
  Vector target;
  Vector psi0;
};

inline ParityConfig parity_config(Parity which, double c0) {
  ParityConfig cfg;
  Matrix z1 = embed(sigma_z(), 2, 0), z2 = embed(sigma_z(), 2, 1);
  if (which == Parity::Half) {
    cfg.m = 0.5 * (z1 + z2);
    cfg.h = 0.5 * (embed(sigma_y(), 2, 0) + embed(sigma_y(), 2, 1));
    cfg.target = Vector::Zero(4);
    cfg.target(1) = cfg.target(2) = 1.0 / std::sqrt(2.0);
    cfg.psi0 = half_parity_path_state(c0);
  } else {
    cfg.m = 0.5 * z1 * z2;
    cfg.h = embed(sigma_x(), 2, 0);
    cfg.target = full_parity_path_state(1.0);
    cfg.psi0 = full_parity_path_state(c0);
  }
  return cfg;
}

// Accumulates mean and variance over trajectories at each checkpoint.
struct Accumulator {
  std::vector<double> sum, sum2;
  int n = 0;
  void add(const std::vector<double>& x) {
    if (sum.empty()) {
      sum.assign(x.size(), 0.0);
      sum2.assign(x.size(), 0.0);
    }
    for (size_t i = 0; i < x.size(); ++i) {
      sum[i] += x[i];
      sum2[i] += x[i] * x[i];
    }
    ++n;
  }
  double mean(size_t i) const { return sum[i] / n; }
  double sd(size_t i) const {
    if (n < 2) return 0.0;
    double v = (sum2[i] - sum[i] * sum[i] / n) / (n - 1);
    return std::sqrt(std::max(0.0, v));
  }
};

}  // namespace detail

// Mixed-state concurrence via the Wootters spin-flip construction; used to
// score density matrices produced by the trajectory engines.
inline double concurrence_mixed(const Matrix& rho) {
  Matrix yy = kron(sigma_y(), sigma_y());
  Matrix rt = rho * yy * rho.conjugate() * yy;
  Eigen::ComplexEigenSolver<Matrix> es(rt);
  std::vector<double> lam(4);
  for (int i = 0; i < 4; ++i)
    lam[i] = std::sqrt(std::max(0.0, es.eigenvalues()(i).real()));
  std::sort(lam.begin(), lam.end(), std::greater<double>());
  return std::max(0.0, lam[0] - lam[1] - lam[2] - lam[3]);
}

// Steady state of the fixed-gain (Wiseman-Milburn) feedback master equation,
// from the null vector of the superoperator.
inline Matrix fixed_gain_steady_state(const Matrix& m, const Matrix& h, double gain,
                                      double eta) {
  const Index d = m.rows();
  Matrix id = Matrix::Identity(d, d);
  auto sandwich_op = [&](const Matrix& a, const Matrix& b) {  // A rho B
    return kron(b.transpose(), a);
  };
  Matrix mm = m.adjoint() * m;
  Matrix L = sandwich_op(m, m.adjoint()) - 0.5 * sandwich_op(mm, id) -
             0.5 * sandwich_op(id, mm);
  Matrix hh = h * h;
  L += gain * gain *
       (sandwich_op(h, h) - 0.5 * sandwich_op(hh, id) - 0.5 * sandwich_op(id, hh));
  // -i sqrt(eta) P [H, M rho + rho M^†]
  Matrix hm = h * m;
  L += -kI * std::sqrt(eta) * gain *
       (sandwich_op(hm, id) + sandwich_op(h, m.adjoint()) - sandwich_op(m, h) -
        sandwich_op(id, Matrix(m.adjoint() * h)));
  Eigen::ComplexEigenSolver<Matrix> es(L);
  Index best = 0;
  for (Index i = 1; i < es.eigenvalues().size(); ++i)
    if (std::abs(es.eigenvalues()(i)) < std::abs(es.eigenvalues()(best))) best = i;
  Vector v = es.eigenvectors().col(best);
  Matrix rho = Eigen::Map<const Matrix>(v.data(), d, d);
  rho = 0.5 * (rho + rho.adjoint().eval());
  rho /= rho.trace().real();
  return rho;
}

// Runs a parity-measurement entanglement protocol on the full two-qubit
// state. Feedback mode recomputes locally optimal coefficients every step;
// a failed second-derivative test or a drifting extremum condition triggers
// the global angle search, with a periodic audit every 100 steps.
inline ProtocolRun run_entangling(const EntangleOptions& opt) {
  detail::ParityConfig cfg = detail::parity_config(opt.which, opt.c0);
  const int n_steps = static_cast<int>(std::llround(opt.t_final / opt.dt));
  const int stride = std::max(1, n_steps / std::max(1, opt.checkpoints));

  ProtocolRun run;
  run.deterministic = opt.mode == EntangleMode::Feedback;

  if (opt.mode == EntangleMode::FixedGain) {
    Matrix rho = fixed_gain_steady_state(cfg.m, cfg.h, opt.fixed_gain, opt.eta);
    run.times = {0.0};
    run.concurrence = {concurrence_mixed(rho)};
    run.fidelity = {(cfg.target.dot(rho * cfg.target)).real()};
    run.purity = {purity(rho)};
    run.summary["steady_state_fidelity"] = run.fidelity[0];
    return run;
  }

  std::vector<detail::Accumulator> acc_c, acc_f, acc_p;
  std::vector<double> times;

  for (int traj = 0; traj < opt.ensemble; ++traj) {
    NoiseSource noise(opt.seed, static_cast<uint64_t>(traj));
    Matrix rho = cfg.psi0 * cfg.psi0.adjoint();
    std::vector<double> cs, fs, ps;
    std::vector<MeasurementChannel> mc = {MeasurementChannel::make(cfg.m, opt.eta)};

    int checkpoint = 0;
    for (int s = 0; s <= n_steps; ++s) {
      if (s % stride == 0 || s == n_steps) {
        cs.push_back(concurrence_mixed(rho));
        fs.push_back((cfg.target.dot(rho * cfg.target)).real());
        ps.push_back(purity(rho));
        if (traj == 0) times.push_back(s * opt.dt);
        ++checkpoint;
      }
      if (s == n_steps) break;

      if (opt.mode == EntangleMode::NoFeedback) {
        QuantumState st = QuantumState::density(rho, QuantumState::NormMode::Unnormalized);
        rho = exp_kraus_step(st, mc, Matrix::Zero(4, 4), opt.dt, noise).state.to_density();
        continue;
      }

      // Feedback mode: keep the extremum condition pinned, then step.
      Complex extremum = cfg.target.dot(commutator(cfg.h, rho) * cfg.target);
      bool audit = (s % 100 == 0);
      if (std::abs(extremum) > 1e-6 || audit) {
        double theta = global_angle_search(rho, cfg.h, cfg.target, 1440);
        if (std::abs(theta) > 1e-12) {
          Matrix u = expm(Matrix(-kI * theta * cfg.h));
          rho = u * rho * u.adjoint();
        }
      }
      double a1 = 0.0, a2 = 0.0;
      try {
        auto [ca1, ca2] = paqs_coeffs(rho, cfg.m, cfg.h, opt.eta, cfg.target);
        a1 = ca1;
        a2 = ca2;
      } catch (const SingularError&) {
        double theta = global_angle_search(rho, cfg.h, cfg.target, 1440);
        if (std::abs(theta) > 1e-12) {
          Matrix u = expm(Matrix(-kI * theta * cfg.h));
          rho = u * rho * u.adjoint();
        }
      } catch (const DomainError&) {
        // extremum drifted within one step; re-pinned next pass
      }
      if (second_derivative_test(rho, cfg.h, cfg.target) > 0) {
        double theta = global_angle_search(rho, cfg.h, cfg.target, 1440);
        if (std::abs(theta) > 1e-12) {
          Matrix u = expm(Matrix(-kI * theta * cfg.h));
          rho = u * rho * u.adjoint();
        }
      }
      rho = paqs_step(rho, cfg.m, cfg.h, opt.eta, a1, a2, opt.dt, noise).rho;
    }

    if (acc_c.size() < cs.size()) {
      acc_c.resize(cs.size());
      acc_f.resize(cs.size());
      acc_p.resize(cs.size());
    }
    for (size_t i = 0; i < cs.size(); ++i) {
      acc_c[i].add({cs[i]});
      acc_f[i].add({fs[i]});
      acc_p[i].add({ps[i]});
    }
  }

  run.times = times;
  for (size_t i = 0; i < acc_c.size(); ++i) {
    run.concurrence.push_back(acc_c[i].mean(0));
    run.concurrence_sd.push_back(acc_c[i].sd(0));
    run.fidelity.push_back(acc_f[i].mean(0));
    run.fidelity_sd.push_back(acc_f[i].sd(0));
    run.purity.push_back(acc_p[i].mean(0));
  }
  run.summary["final_concurrence"] = run.concurrence.back();
  run.summary["final_fidelity"] = run.fidelity.back();
  return run;
}

// ---------------------------------------------------------------------------
// Hamilton-Jacobi-Bellman verification

struct HjbReport {
  double max_relative_residual = 0.0;
  bool protocol_attains_max = true;
  // Min-time variant: smallest grid concurrence at which the protocol's
  // controls stop attaining the HJB maximum (NaN when none).
  double argmax_failure_onset = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void sde_coefficients(Parity which, double c, double u, double v, double w,
                             double& drift, double& noise) {
  if (which == Parity::Half) {
    if (c < 1e-12) {
      drift = std::abs(v * v - u * u);
      noise = 0.0;
    } else {
      drift = (v * v - u * u) * w - c * (v * v + u * u);
      noise = 2.0 * c * std::sqrt(std::max(0.0, 1.0 - c * c)) * u * v;
    }
    return;
  }
  double d2 = u * u - v * v;
  if (c < 1e-12) {
    drift = 0.0;
    noise = d2;
  } else {
    drift = (1.0 - c * c) * d2 * d2 * (1.0 - w * w) / (2.0 * c);
    noise = (1.0 - c * c) * d2 * w * c;
  }
}

}  // namespace detail

// Max-concurrence goal: checks d(cost-to-go)/dt = max_u G on a grid of
// resolution^4 points over (C, u, v, w); the exponential time factor of the
// half-parity cost-to-go cancels in the relative residual, and the
// full-parity case is evaluated across a time grid as well.
inline HjbReport hjb_max_concurrence(Parity which, int resolution = 50) {
  if (resolution < 50) throw DomainError("hjb residual: resolution must be >= 50");
  HjbReport rep;
  auto grid = [&](int k, double lo, double hi) {
    return lo + (hi - lo) * k / (resolution - 1);
  };

  std::vector<double> horizon{0.0};
  if (which == Parity::Full) {
    horizon.clear();
    for (int k = 0; k < resolution; ++k) horizon.push_back(grid(k, 0.05, 3.0));
  }

  for (double t_left : horizon) {
    double e = std::exp(-t_left);  // e^{t-T}
    for (int kc = 0; kc < resolution; ++kc) {
      double c = grid(kc, 0.0, 1.0);
      double dcdt, dcdC, d2cdC2;
      if (which == Parity::Half) {
        dcdt = (1.0 - c);  // common factor e^{t-T} divided out
        dcdC = -1.0;
        d2cdC2 = 0.0;
      } else {
        double s = 1.0 - (1.0 - c * c) * e;
        double sq = std::sqrt(std::max(1e-300, s));
        dcdt = (1.0 - c * c) * e / (2.0 * sq);
        dcdC = -c * e / sq;
        d2cdC2 = -e / sq + c * c * e * e / (s * sq);
      }
      double best = -1e300, best_protocol = -1e300;
      for (int ku = 0; ku < resolution; ++ku)
        for (int kv = 0; kv < resolution; ++kv)
          for (int kw = 0; kw < resolution; ++kw) {
            double u = grid(ku, -1.0, 1.0), v = grid(kv, -1.0, 1.0),
                   w = grid(kw, -1.0, 1.0);
            double a, b;
            detail::sde_coefficients(which, c, u, v, w, a, b);
            double g = -0.5 * b * b * d2cdC2 - a * dcdC;
            best = std::max(best, g);
            bool is_protocol =
                which == Parity::Half
                    ? (std::abs(u) < 1e-12 && std::abs(std::abs(v) - 1.0) < 1e-12 &&
                       std::abs(w - 1.0) < 1e-12)
                    : (std::abs(u) < 1e-12 && std::abs(std::abs(v) - 1.0) < 1e-12 &&
                       std::abs(w) < 1e-12);
            if (is_protocol) best_protocol = std::max(best_protocol, g);
          }
      double scale = std::max(1.0, std::abs(dcdt));
      rep.max_relative_residual =
          std::max(rep.max_relative_residual, std::abs(dcdt - best) / scale);
      if (best_protocol < best - 1e-9 * scale) rep.protocol_attains_max = false;
    }
  }
  return rep;
}

// Min-time goal for the half-parity protocol: the stationary HJB demands
// max_u [ -A c' - B^2 c''/2 ] = 1 with c the P_H hitting time; the protocol's
// argmax fails beyond C = 1/sqrt(2).
inline HjbReport hjb_min_time_half(int resolution = 50) {
  if (resolution < 50) throw DomainError("hjb residual: resolution must be >= 50");
  HjbReport rep;
  auto grid = [&](int k, double lo, double hi) {
    return lo + (hi - lo) * k / (resolution - 1);
  };
  for (int kc = 0; kc < resolution; ++kc) {
    double c = grid(kc, 0.0, 0.995);
    double dcdC = -1.0 / (1.0 - c);
    double d2cdC2 = -1.0 / ((1.0 - c) * (1.0 - c));
    double best = -1e300, protocol_value = -1e300;
    for (int ku = 0; ku < resolution; ++ku)
      for (int kv = 0; kv < resolution; ++kv)
        for (int kw = 0; kw < resolution; ++kw) {
          double u = grid(ku, -1.0, 1.0), v = grid(kv, -1.0, 1.0),
                 w = grid(kw, -1.0, 1.0);
          double a, b;
          detail::sde_coefficients(Parity::Half, c, u, v, w, a, b);
          double g = -a * dcdC - 0.5 * b * b * d2cdC2;
          best = std::max(best, g);
          if (std::abs(u) < 1e-12 && std::abs(std::abs(v) - 1.0) < 1e-12 &&
              std::abs(w - 1.0) < 1e-12)
            protocol_value = std::max(protocol_value, g);
        }
    rep.max_relative_residual =
        std::max(rep.max_relative_residual, std::abs(protocol_value - 1.0));
    if (best > protocol_value + 1e-9 && std::isnan(rep.argmax_failure_onset)) {
      rep.argmax_failure_onset = c;
      rep.protocol_attains_max = false;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Dicke state preparation (symmetric subspace)

struct DickeOptions {
  int n_qubits = 2;
  int n_excitations = 1;
  double t_final = 3.0;
  double dt = 1e-3;
  int checkpoints = 60;
};

// ASLO run with M = sum sigma_z, H = sum sigma_y restricted to the
// (N+1)-dimensional symmetric subspace. M is diagonal there and H
// tridiagonal, which keeps every drift term at O(d^2).
inline ProtocolRun dicke_run(const DickeOptions& opt) {
  const int N = opt.n_qubits, n = opt.n_excitations;
  if (N < 2 || N > 100) throw DomainError("dicke_run: N must lie in [2, 100]");
  if (n < 0 || n > N) throw DomainError("dicke_run: excitation number out of range");
  const int d = N + 1;

  RealVector mdiag(d);
  for (int k = 0; k < d; ++k) mdiag(k) = N - 2 * k;
  Matrix h = Matrix::Zero(d, d);  // 2 J_y
  double j = N / 2.0;
  for (int k = 1; k < d; ++k) {
    double m_from = j - k;  // J_+ |k> -> |k-1>
    double amp = std::sqrt(j * (j + 1) - m_from * (m_from + 1));
    h(k - 1, k) = Complex(0, -amp);  // 2 J_y = (J_+ - J_-)/i
    h(k, k - 1) = Complex(0, amp);
  }

  Vector psi0(d);
  {
    double log2n = N * std::log(2.0);
    for (int k = 0; k < d; ++k) {
      double logc = std::lgamma(N + 1.0) - std::lgamma(k + 1.0) -
                    std::lgamma(N - k + 1.0);
      psi0(k) = std::exp(0.5 * (logc - log2n));
    }
  }
  Matrix rho = psi0 * psi0.adjoint();
  const int target = n;

  auto drift = [&](const Matrix& r) -> Matrix {
    // Locally optimal coefficients against |target>.
    Matrix hr = commutator(h, r);
    Matrix hhr = commutator(h, hr);
    double denom = hhr(target, target).real();
    Matrix mr = mdiag.cast<Complex>().asDiagonal() * r;
    mr += r * mdiag.cast<Complex>().asDiagonal();
    double a1 = 0.0, a2 = 0.0;
    if (std::abs(denom) > 1e-12 * N * N) {
      Matrix hmr = commutator(h, mr);
      a1 = (-kI * hmr(target, target)).real() / denom;
      Matrix dm = Matrix::Zero(d, d);
      for (int p = 0; p < d; ++p)
        for (int q = 0; q < d; ++q) {
          double gap = mdiag(p) - mdiag(q);
          dm(p, q) = -0.5 * gap * gap * r(p, q);
        }
      Matrix inner = kI * dm + a1 * hmr + kI * a1 * a1 * dissipator(h, r);
      a2 = (-commutator(h, inner)(target, target)).real() / denom;
    }
    Matrix out(d, d);
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q) {
        double gap = mdiag(p) - mdiag(q);
        out(p, q) = -0.5 * gap * gap * r(p, q);
      }
    out += a1 * a1 * dissipator(h, r);
    out += -kI * commutator(h, Matrix(a1 * mr + a2 * r));
    return out;
  };

  // RK4 with a dephasing-stability step bound.
  double max_gap = 2.0 * N;
  double dt = std::min(opt.dt, 2.0 / (max_gap * max_gap));
  int n_steps = static_cast<int>(std::ceil(opt.t_final / dt));
  dt = opt.t_final / n_steps;
  int stride = std::max(1, n_steps / std::max(1, opt.checkpoints));

  ProtocolRun run;
  run.deterministic = true;
  for (int s = 0; s <= n_steps; ++s) {
    if (s % stride == 0 || s == n_steps) {
      run.times.push_back(s * dt);
      run.fidelity.push_back(rho(target, target).real());
      run.purity.push_back(purity(rho));
    }
    if (s == n_steps) break;
    Matrix k1 = drift(rho);
    Matrix k2 = drift(Matrix(rho + 0.5 * dt * k1));
    Matrix k3 = drift(Matrix(rho + 0.5 * dt * k2));
    Matrix k4 = drift(Matrix(rho + dt * k3));
    rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    rho = 0.5 * (rho + rho.adjoint().eval());
    rho /= rho.trace().real();
  }
  run.summary["asymptotic_fidelity"] = run.fidelity.back();
  run.summary["final_purity"] = run.purity.back();
  return run;
}

// ---------------------------------------------------------------------------
// GHZ state preparation (multi-channel ASLO, full register)

struct GhzOptions {
  int n_qubits = 3;
  double t_final = 8.0;
  double dt = 1e-3;
  int checkpoints = 60;
};

inline ProtocolRun ghz_run(const GhzOptions& opt) {
  const int N = opt.n_qubits;
  if (N < 2 || N > 8) throw DomainError("ghz_run: N must lie in [2, 8]");
  const Index d = Index(1) << N;

  std::vector<MeasurementChannel> chans;
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j)
      chans.push_back(MeasurementChannel::make(
          0.5 * (embed(sigma_z(), N, i) - embed(sigma_z(), N, j))));
  std::vector<Matrix> hs;
  for (int i = 0; i + 1 < N; ++i)
    hs.push_back(0.5 * (embed(sigma_y(), N, i) - embed(sigma_y(), N, i + 1)));
  FeedbackBasis basis = FeedbackBasis::make(hs);

  Vector target = Vector::Zero(d);
  target(0) = target(d - 1) = 1.0 / std::sqrt(2.0);
  Vector plus = Vector::Ones(2).normalized();
  Vector psi0 = Vector::Ones(1);
  for (int i = 0; i < N; ++i) psi0 = kron(psi0, plus);

  Matrix rho = psi0 * psi0.adjoint();
  int n_steps = static_cast<int>(std::llround(opt.t_final / opt.dt));
  int stride = std::max(1, n_steps / std::max(1, opt.checkpoints));

  ProtocolRun run;
  run.deterministic = true;
  for (int s = 0; s <= n_steps; ++s) {
    if (s % stride == 0 || s == n_steps) {
      run.times.push_back(s * opt.dt);
      run.fidelity.push_back((target.dot(rho * target)).real());
      run.purity.push_back(purity(rho));
    }
    if (s == n_steps) break;
    rho = aslo_step(rho, chans, basis, target, opt.dt);
  }
  run.summary["asymptotic_fidelity"] = run.fidelity.back();
  run.summary["final_purity"] = run.purity.back();
  return run;
}

// ---------------------------------------------------------------------------
// Zeno gate

struct ZenoGateConfig {
  double gamma = 100.0;    // measurement rate
  double omega_r = 1.0;    // Rabi rate on the e <-> f transition
  int n_qubits = 2;
  double phase_target = kPi;

  void validate() const {
    if (gamma <= 0 || omega_r <= 0)
      throw DomainError("ZenoGateConfig: rates must be positive");
    if (n_qubits < 2) throw DomainError("ZenoGateConfig: need at least 2 qubits");
    if (phase_target <= 0 || phase_target > kPi)
      throw DomainError("ZenoGateConfig: phase must lie in (0, pi]");
  }
};

namespace detail {

inline Index qutrit_index(const std::vector<int>& levels) {
  Index idx = 0;
  for (int l : levels) idx = idx * 3 + l;
  return idx;
}

}  // namespace detail

// Ideal-Zeno-limit unitary: I - (1 - e^{i phi}) Pi on the driven-and-blocked
// subspace (both e- and f-row components of every x != e...e).
inline Matrix zeno_unitary(int n_qubits, double phase) {
  if (phase <= 0 || phase > kPi)
    throw DomainError("zeno_unitary: phase must lie in (0, pi]");
  Index dim = 1;
  for (int q = 0; q < n_qubits; ++q) dim *= 3;
  Matrix u = Matrix::Identity(dim, dim);
  Complex factor = Complex(1, 0) - std::exp(Complex(0, phase));
  // Enumerate x_2..x_N over {g, e}; skip x = e...e.
  int n_rest = n_qubits - 1;
  for (int bits = 0; bits < (1 << n_rest); ++bits) {
    bool all_e = true;
    std::vector<int> rest(n_rest);
    for (int k = 0; k < n_rest; ++k) {
      rest[k] = (bits >> k) & 1;  // 0 -> g, 1 -> e
      if (rest[k] != 1) all_e = false;
    }
    if (all_e) continue;
    for (int first : {1, 2}) {  // e, f
      std::vector<int> levels(1, first);
      levels.insert(levels.end(), rest.begin(), rest.end());
      Index idx = detail::qutrit_index(levels);
      u(idx, idx) -= factor;
    }
  }
  return u;
}

enum class ZenoOrder { First, Second, Herald };

struct ZenoFidelity {
  double fidelity = 0.0;
  double success_probability = 1.0;
};

// Closed-form finite-rate fidelities of the two-qubit gate as a function of
// the initial |ee> population.
inline ZenoFidelity zeno_fidelity(const ZenoGateConfig& cfg, ZenoOrder order,
                                  double ee_population) {
  cfg.validate();
  if (cfg.gamma < cfg.omega_r)
    throw DomainError("zeno_fidelity: closed forms require Gamma/Omega >= 1");
  double x = kPi * cfg.omega_r / cfg.gamma;
  double p0 = (1.0 - std::exp(-4.0 * x)) / 2.0;
  double f1 = 1.0 - ee_population * p0;
  double herald_num = 1.0 - ee_population * (1.0 - std::exp(-x));
  double herald_den = std::sqrt(1.0 - ee_population * (1.0 - std::exp(-2.0 * x)));
  double fh = herald_num / herald_den;
  switch (order) {
    case ZenoOrder::First:
      return {f1, 1.0};
    case ZenoOrder::Herald:
      return {fh, f1};
    case ZenoOrder::Second:
      return {f1 + fh - 1.0, 1.0};
  }
  throw DomainError("zeno_fidelity: bad order");
}

inline double zeno_average_first_order(const ZenoGateConfig& cfg) {
  return (7.0 + std::exp(-4.0 * kPi * cfg.omega_r / cfg.gamma)) / 8.0;
}

struct ZenoRunResult {
  ProtocolRun run;
  double unheralded_fidelity = 0.0;
  double heralded_fidelity = 0.0;
  double herald_success = 0.0;
};

// Full two-qutrit master equation for the n = 2 gate, with the heralded
// branch propagated under the no-jump contraction.
inline ZenoRunResult zeno_sme_run(const ZenoGateConfig& cfg, const Vector& psi0,
                                  int checkpoints = 40) {
  cfg.validate();
  if (cfg.n_qubits != 2)
    throw UnsupportedError("zeno_sme_run: master-equation run covers n = 2");
  const Index d = 9;
  if (psi0.size() != d) throw DimensionError("zeno_sme_run: state must be 9-dim");

  Matrix h = Matrix::Zero(d, d);
  {
    Matrix ef = Matrix::Zero(3, 3);
    ef(1, 2) = Complex(0, cfg.omega_r / 2.0);
    ef(2, 1) = Complex(0, -cfg.omega_r / 2.0);
    h = kron(ef, Matrix::Identity(3, 3));
  }
  Matrix proj = Matrix::Identity(d, d);
  proj(detail::qutrit_index({2, 1}), detail::qutrit_index({2, 1})) = 0;  // |fe>
  proj(detail::qutrit_index({1, 2}), detail::qutrit_index({1, 2})) = 0;  // |ef>
  std::vector<MeasurementChannel> chans = {
      MeasurementChannel::make(std::sqrt(cfg.gamma) * proj)};

  double t_final = 2.0 * kPi / cfg.omega_r;
  Vector ideal = zeno_unitary(2, cfg.phase_target) * psi0;

  ZenoRunResult out;
  Matrix hzeno = proj * h * proj;
  for (int k = 0; k <= checkpoints; ++k) {
    double t = t_final * k / checkpoints;
    Matrix rho = lindblad_solve(psi0 * psi0.adjoint(), h, chans, t);
    Vector path = expm(Matrix(-kI * t * hzeno)) * psi0;
    out.run.times.push_back(t);
    out.run.fidelity.push_back((path.dot(rho * path)).real() / path.squaredNorm());
    out.run.purity.push_back(purity(rho));
  }
  {
    Matrix rho = lindblad_solve(psi0 * psi0.adjoint(), h, chans, t_final);
    out.unheralded_fidelity = (ideal.dot(rho * ideal)).real();
  }
  {
    // No-jump propagation: |fe> amplitude decays at Gamma/2.
    Matrix nj = -kI * h;
    Index fe = detail::qutrit_index({2, 1});
    nj(fe, fe) -= cfg.gamma / 2.0;
    Vector psi = expm(Matrix(nj * t_final)) * psi0;
    out.herald_success = psi.squaredNorm();
    out.heralded_fidelity = std::norm(ideal.dot(psi)) / psi.squaredNorm();
  }
  out.run.deterministic = true;
  out.run.summary["unheralded_fidelity"] = out.unheralded_fidelity;
  out.run.summary["heralded_fidelity"] = out.heralded_fidelity;
  out.run.summary["herald_success"] = out.herald_success;
  return out;
}

// ---------------------------------------------------------------------------
// Zeno dragging

enum class ZenoDragMode { Optimal, FixedRate };

struct ZenoDragOptions {
  double chi0 = kPi / 3.0;  // initial polar angle from the target
  double t_final = 1.0;
  double dt = 1e-3;
  int ensemble = 1000;
  uint64_t seed = 1;
  ZenoDragMode mode = ZenoDragMode::Optimal;
  double drag_rate = 1.0;  // fixed-rate mode: d(delta)/dt
  int checkpoints = 50;
};

// Measurement-only control in the XZ plane at unit efficiency. The optimal
// policy keeps the measurement axis halfway between state and target; the
// per-step update is the exact Gaussian Kraus exp(M dr - M^2 dt).
inline ProtocolRun zeno_drag_run(const ZenoDragOptions& opt) {
  int n_steps = static_cast<int>(std::llround(opt.t_final / opt.dt));
  int stride = std::max(1, n_steps / std::max(1, opt.checkpoints));

  std::vector<detail::Accumulator> acc;
  std::vector<double> times;
  for (int traj = 0; traj < opt.ensemble; ++traj) {
    NoiseSource noise(opt.seed, static_cast<uint64_t>(traj));
    double ce = std::cos(opt.chi0 / 2.0), cg = std::sin(opt.chi0 / 2.0);
    std::vector<double> fs;
    for (int s = 0; s <= n_steps; ++s) {
      if (s % stride == 0 || s == n_steps) {
        if (traj == 0) times.push_back(s * opt.dt);
        if (opt.mode == ZenoDragMode::Optimal) {
          fs.push_back(ce * ce / (ce * ce + cg * cg));
        } else {
          double delta = opt.drag_rate * s * opt.dt;
          double a = std::cos(delta / 2.0) * ce + std::sin(delta / 2.0) * cg;
          fs.push_back(a * a / (ce * ce + cg * cg));
        }
      }
      if (s == n_steps) break;
      double delta;
      if (opt.mode == ZenoDragMode::Optimal) {
        double chi = 2.0 * std::atan2(cg, ce);
        delta = chi / 2.0;
      } else {
        delta = opt.drag_rate * s * opt.dt;
      }
      // M = cos(delta) sigma_z + sin(delta) sigma_x; M^2 = I, so the
      // normalized update is exp(M dr) up to a scalar.
      double mz = std::cos(delta), mx = std::sin(delta);
      double norm2 = ce * ce + cg * cg;
      double mexp = (mz * (ce * ce - cg * cg) + 2.0 * mx * ce * cg) / norm2;
      double dr = 2.0 * mexp * opt.dt + noise.wiener(opt.dt);
      double ch = std::cosh(dr), sh = std::sinh(dr);
      double ne = ch * ce + sh * (mz * ce + mx * cg);
      double ng = ch * cg + sh * (mx * ce - mz * cg);
      double scale = std::sqrt(ne * ne + ng * ng);
      ce = ne / scale;
      cg = ng / scale;
    }
    if (acc.size() < fs.size()) acc.resize(fs.size());
    for (size_t i = 0; i < fs.size(); ++i) acc[i].add({fs[i]});
  }

  ProtocolRun run;
  run.times = times;
  for (size_t i = 0; i < acc.size(); ++i) {
    run.fidelity.push_back(acc[i].mean(0));
    run.fidelity_sd.push_back(acc[i].sd(0));
  }
  run.summary["final_mean_fidelity"] = run.fidelity.back();
  run.summary["n_trajectories"] = opt.ensemble;
  return run;
}

// Embedding of the dragging measurement operator in a d-dim space: the
// target/orthogonal block carries the qubit dynamics, the rest is untouched.
inline Matrix drag_operator_embedded(const Vector& target, const Vector& orth,
                                     double delta) {
  Matrix m = std::cos(delta) * (target * target.adjoint() - orth * orth.adjoint());
  m += std::sin(delta) * (orth * target.adjoint() + target * orth.adjoint());
  return m;
}

}  // namespace qfb
