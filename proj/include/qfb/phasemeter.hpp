#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qfb/noise.hpp"
#include "qfb/qstate.hpp"

namespace qfb {

// ---------------------------------------------------------------------------
// Shaped single-photon emission

// Time-dependent cooling rate and the resulting emitted intensity
// u(t) = gamma(t) exp(-int gamma). The flat shape uses gamma = 1/(tau - t)
// capped at gamma_max, then cools at the cap until the residual excited
// population is negligible.
struct PhotonMode {
  double tau = 1.0;
  double gamma_max = 14.0;
  double dt = 1e-4;
  double t_total = 1.3;
  std::vector<double> gamma;  // sampled at step starts
  std::vector<double> u;      // emitted intensity
  std::vector<double> u_int;  // cumulative integral of u at step starts

  size_t n_steps() const { return gamma.size(); }
};

inline PhotonMode make_mode(double tau, double gamma_max, double dt,
                            double t_total) {
  if (t_total <= tau) throw DomainError("make_mode: t_total must exceed tau");
  if (tau <= 0 || gamma_max <= 0 || dt <= 0)
    throw DomainError("make_mode: parameters must be positive");
  PhotonMode mode;
  mode.tau = tau;
  mode.gamma_max = gamma_max;
  mode.dt = dt;
  mode.t_total = t_total;
  size_t n = static_cast<size_t>(std::llround(t_total / dt));
  mode.gamma.resize(n);
  mode.u.resize(n);
  mode.u_int.resize(n);
  double integral = 0.0;  // int_0^t gamma
  double u_cum = 0.0;
  for (size_t k = 0; k < n; ++k) {
    double t = k * dt;
    double g = (t < tau) ? std::min(1.0 / (tau - t), gamma_max) : gamma_max;
    mode.gamma[k] = g;
    mode.u[k] = g * std::exp(-integral);
    mode.u_int[k] = u_cum;
    integral += g * dt;
    u_cum += mode.u[k] * dt;
  }
  double residual = std::exp(-integral);  // excited population at t_total
  if (residual >= 0.01)
    throw DomainError("make_mode: residual excited population exceeds 1%");
  return mode;
}

// ---------------------------------------------------------------------------
// Receiver policies

enum class ReceiverKind { Homodyne, Heterodyne, Adaptivedyne, Replay };

struct ReceiverPolicy {
  ReceiverKind kind = ReceiverKind::Adaptivedyne;
  double heterodyne_omega = 0.0;
  int delay = 0;  // feedback latency in steps
  double eta = 1.0;
  const std::vector<double>* replay_phi = nullptr;

  static ReceiverPolicy homodyne(double eta = 1.0) {
    return {ReceiverKind::Homodyne, 0.0, 0, eta, nullptr};
  }
  static ReceiverPolicy heterodyne(double omega, double eta = 1.0) {
    if (omega <= 0) throw DomainError("heterodyne: omega must be positive");
    return {ReceiverKind::Heterodyne, omega, 0, eta, nullptr};
  }
  static ReceiverPolicy adaptivedyne(int delay = 0, double eta = 1.0) {
    if (delay < 0) throw DomainError("adaptivedyne: delay must be nonnegative");
    return {ReceiverKind::Adaptivedyne, 0.0, delay, eta, nullptr};
  }
  static ReceiverPolicy replay(const std::vector<double>& phi, double eta = 1.0) {
    return {ReceiverKind::Replay, 0.0, 0, eta, &phi};
  }
};

struct PhaseShot {
  double theta_true = 0.0;
  Complex R{0.0, 0.0};
  double theta_hat = 0.0;
  bool theta_defined = true;
  bool phase_condition = false;  // |R| evolved deterministically
  std::vector<double> phi_trace;
  std::vector<double> record;             // r(t) dt increments
  std::vector<double> excited_population; // |c_+|^2 of the normalized state
};

// Single shot of the adaptive receiver. The source qubit is propagated with
// the unnormalized two-level SSE (c_+ decays deterministically; c_- picks up
// the record), while the record itself is drawn from the normalized state.
// The adaptive controller integrates d(phi) = P(t) r(t) dt through an
// integer-step delay buffer; with the phase condition maintained, |R| follows
// the deterministic law |R|^2 = int u.
inline PhaseShot run_shot(double theta_true, const PhotonMode& mode,
                          const ReceiverPolicy& policy, NoiseSource& noise,
                          bool keep_traces = false) {
  const size_t n = mode.n_steps();
  const double dt = mode.dt;
  const double sqrt_eta = std::sqrt(policy.eta);

  Complex cm = 1.0 / std::sqrt(2.0);
  Complex cp = std::exp(Complex(0, theta_true)) / std::sqrt(2.0);

  PhaseShot shot;
  shot.theta_true = theta_true;
  if (keep_traces) {
    shot.phi_trace.reserve(n);
    shot.record.reserve(n);
    shot.excited_population.reserve(n);
  }

  double phi = 0.0;        // applied measurement phase
  double theta_ctrl = 0.0; // controller estimate (adaptivedyne)
  bool ctrl_started = false;
  std::deque<double> pending;  // delayed d(theta) increments
  Complex r_raw = 0.0;

  const bool adaptive = policy.kind == ReceiverKind::Adaptivedyne;
  if (policy.kind == ReceiverKind::Replay &&
      (!policy.replay_phi || policy.replay_phi->size() < n))
    throw DomainError("replay policy: phi trace too short");

  for (size_t k = 0; k < n; ++k) {
    switch (policy.kind) {
      case ReceiverKind::Homodyne:
        phi = 0.0;
        break;
      case ReceiverKind::Heterodyne:
        phi = policy.heterodyne_omega * k * dt;
        break;
      case ReceiverKind::Replay:
        phi = (*policy.replay_phi)[k];
        break;
      case ReceiverKind::Adaptivedyne:
        phi = theta_ctrl + kPi / 2.0;
        break;
    }

    double g = mode.gamma[k];
    double sg = std::sqrt(g);
    // Homodyne record from the normalized state: dr = sqrt(eta g)
    // <sigma e^{-i phi} + h.c.> dt + dW.
    double norm2 = std::norm(cm) + std::norm(cp);
    Complex coh = std::conj(cm) * cp / norm2;  // <sigma>
    double mean = 2.0 * (std::exp(Complex(0, -phi)) * coh).real();
    double dr = sqrt_eta * sg * mean * dt + noise.wiener(dt);

    if (keep_traces) {
      shot.phi_trace.push_back(phi);
      shot.record.push_back(dr);
      shot.excited_population.push_back(std::norm(cp) / norm2);
    }

    // Unnormalized SSE update; only the observed fraction drives c_-.
    cm += sqrt_eta * sg * std::exp(Complex(0, -phi)) * cp * dr;
    cp *= std::exp(-0.5 * g * dt);

    double sqrt_u = std::sqrt(mode.u[k]);
    r_raw += std::exp(Complex(0, phi)) * sqrt_u * dr;

    if (adaptive) {
      double u_int = std::max(mode.u_int[k], 1e-12);
      double p_gain = sqrt_u / std::sqrt(u_int);
      double dtheta;
      if (!ctrl_started && mode.u_int[k] < 10.0 * dt) {
        // Warm-up: proportional gain diverges while int u ~ 0; seed the
        // estimate from the raw integral instead.
        dtheta = 0.0;
        if (std::abs(r_raw) > 0) {
          theta_ctrl = std::arg(r_raw);
          ctrl_started = true;
        }
      } else {
        ctrl_started = true;
        dtheta = p_gain * dr;
      }
      pending.push_back(dtheta);
      if (static_cast<int>(pending.size()) > policy.delay) {
        theta_ctrl += pending.front();
        pending.pop_front();
      }
    }
  }

  if (adaptive) {
    // Phase condition held: |R|^2 = int u is deterministic and the estimate
    // is the integrated controller phase.
    double u_total = mode.u_int.back() + mode.u.back() * dt;
    shot.phase_condition = policy.delay == 0;
    shot.R = std::sqrt(u_total) * std::exp(Complex(0, theta_ctrl));
  } else {
    shot.R = r_raw;
  }
  if (std::abs(shot.R) < 1e-12) {
    shot.theta_defined = false;
    shot.theta_hat = 0.0;
  } else {
    shot.theta_hat = std::arg(shot.R);
  }
  return shot;
}

// Offline estimator R = int e^{i phi} sqrt(u) r dt from a stored record.
inline std::pair<Complex, double> phase_estimate(const std::vector<double>& record,
                                                 const std::vector<double>& phi_trace,
                                                 const PhotonMode& mode) {
  if (record.size() != phi_trace.size() || record.size() != mode.n_steps())
    throw DimensionError("phase_estimate: series must be aligned");
  Complex r = 0.0;
  for (size_t k = 0; k < record.size(); ++k)
    r += std::exp(Complex(0, phi_trace[k])) * std::sqrt(mode.u[k]) * record[k];
  double theta = std::abs(r) < 1e-12 ? 0.0 : std::arg(r);
  return {r, theta};
}

// Holevo variance |<e^{i(theta - Theta)}>|^{-2} - 1; infinity for uniform
// residuals.
inline double holevo_variance(const std::vector<double>& angles,
                              const std::vector<double>& reference) {
  if (angles.empty() || angles.size() != reference.size())
    throw DomainError("holevo_variance: empty or mismatched inputs");
  Complex mean = 0.0;
  for (size_t i = 0; i < angles.size(); ++i)
    mean += std::exp(Complex(0, angles[i] - reference[i]));
  mean /= static_cast<double>(angles.size());
  double a2 = std::norm(mean);
  if (a2 < 1e-300) return std::numeric_limits<double>::infinity();
  return 1.0 / a2 - 1.0;
}

// ---------------------------------------------------------------------------
// POVM reconstruction

// Empirical measurement operator per outcome bin, in the {|->, |+>} basis:
// E_b = [[e, c*], [c, e']] with only s = (e + e')/2 and c identifiable from
// equatorial preparations. The canonical-phase witness is |c|/s ~ |R| with a
// 1 + cos(theta - Theta) fringe.
struct PovmBin {
  double theta_center = 0.0;
  double diag_mean = 0.0;      // (E_-- + E_++)/2
  Complex off_diagonal{0, 0};  // E_+-
  double visibility = 0.0;     // |off_diagonal| / diag_mean
};

struct PovmReconstruction {
  std::vector<PovmBin> bins;
  double mean_visibility = 0.0;
  double fringe_chi2_dof = 0.0;  // residual of the 1 + cos fit
};

inline PovmReconstruction povm_reconstruct(
    const std::vector<double>& theta_true, const std::vector<double>& theta_hat,
    int n_bins = 36) {
  if (theta_true.size() != theta_hat.size() || theta_true.empty())
    throw DomainError("povm_reconstruct: mismatched shot arrays");

  // Group by preparation.
  std::map<long long, std::vector<double>> by_prep;
  for (size_t i = 0; i < theta_true.size(); ++i) {
    long long key = std::llround(theta_true[i] * 1e9);
    by_prep[key].push_back(theta_hat[i]);
  }
  const int n_prep = static_cast<int>(by_prep.size());
  if (n_prep < 4)
    throw ConditioningError(
        "povm_reconstruct: need >= 4 preparations spanning the equator");

  // Design matrix columns: s, Re c, Im c. P(b|Theta) = s + Re[c e^{i Theta}].
  RealMatrix design(n_prep, 3);
  std::vector<double> prep_angle(n_prep);
  {
    int r = 0;
    for (const auto& [key, v] : by_prep) {
      double theta = static_cast<double>(key) * 1e-9;
      prep_angle[r] = theta;
      design(r, 0) = 1.0;
      design(r, 1) = std::cos(theta);
      design(r, 2) = -std::sin(theta);
      ++r;
    }
  }
  Eigen::JacobiSVD<RealMatrix> svd(design,
                                   Eigen::ComputeThinU | Eigen::ComputeThinV);
  double cond = svd.singularValues()(0) /
                std::max(1e-300, svd.singularValues()(svd.singularValues().size() - 1));
  if (cond > 1e6)
    throw ConditioningError("povm_reconstruct: preparation set is ill-conditioned");

  PovmReconstruction out;
  out.bins.resize(n_bins);
  RealMatrix counts = RealMatrix::Zero(n_bins, n_prep);
  std::vector<double> totals(n_prep, 0.0);
  {
    int r = 0;
    for (const auto& [key, v] : by_prep) {
      for (double th : v) {
        int b = static_cast<int>(std::floor((th + kPi) / (2.0 * kPi) * n_bins));
        b = std::clamp(b, 0, n_bins - 1);
        counts(b, r) += 1.0;
      }
      totals[r] = static_cast<double>(v.size());
      ++r;
    }
  }

  double chi2 = 0.0;
  int dof = 0;
  for (int b = 0; b < n_bins; ++b) {
    RealVector p(n_prep);
    for (int r = 0; r < n_prep; ++r) p(r) = counts(b, r) / totals[r];
    RealVector coef = svd.solve(p);
    PovmBin& bin = out.bins[b];
    bin.theta_center = -kPi + (b + 0.5) * 2.0 * kPi / n_bins;
    bin.diag_mean = coef(0);
    bin.off_diagonal = Complex(coef(1), coef(2));
    bin.visibility =
        coef(0) > 1e-12 ? std::abs(bin.off_diagonal) / coef(0) : 0.0;
    out.mean_visibility += bin.visibility / n_bins;

    // Fringe test against A (1 + cos(theta_b - Theta)).
    for (int r = 0; r < n_prep; ++r) {
      double expectation =
          coef(0) * (1.0 + std::cos(bin.theta_center - prep_angle[r]) *
                               (coef(0) > 1e-12
                                    ? std::abs(bin.off_diagonal) / coef(0)
                                    : 0.0));
      double sigma2 = std::max(expectation / totals[r], 1e-9);
      chi2 += (p(r) - expectation) * (p(r) - expectation) / sigma2;
      ++dof;
    }
  }
  out.fringe_chi2_dof = chi2 / std::max(1, dof - 3 * n_bins);
  return out;
}

// ---------------------------------------------------------------------------
// Benchmarking

struct PolicyStats {
  std::string name;
  double holevo = 0.0;
  double holevo_lo = 0.0, holevo_hi = 0.0;  // bootstrap 95% interval
  double var_abs_r = 0.0;
  int undefined_shots = 0;
};

struct BenchmarkResult {
  std::vector<PolicyStats> policies;
  double paired_p_replay_vs_heterodyne = 1.0;
  double paired_diff_adaptive_vs_heterodyne_lo = 0.0;  // bootstrap CI of het - adapt
  double paired_diff_adaptive_vs_heterodyne_hi = 0.0;
};

namespace detail {

inline double holevo_of(const std::vector<Complex>& residuals) {
  Complex mean = 0.0;
  for (const Complex& z : residuals) mean += z;
  mean /= static_cast<double>(residuals.size());
  double a2 = std::norm(mean);
  if (a2 < 1e-300) return std::numeric_limits<double>::infinity();
  return 1.0 / a2 - 1.0;
}

}  // namespace detail

// Paired-seed comparison of receiver policies over a common mode. Shot k of
// every policy replays the same Wiener substream; replay shots reuse the phi
// trace recorded by adaptivedyne shot k+1, which shares its statistics but
// not its noise.
inline BenchmarkResult benchmark(const PhotonMode& mode, int n_shots, double eta,
                                 int delay, uint64_t seed,
                                 double heterodyne_omega, int bootstrap = 200) {
  std::vector<double> theta_true(n_shots);
  {
    NoiseSource prep(seed, 0xA11CE);
    for (int k = 0; k < n_shots; ++k)
      theta_true[k] = (2.0 * prep.uniform() - 1.0) * kPi;
  }

  struct ShotOutcome {
    Complex residual;
    double abs_r;
    bool defined;
  };
  auto run_policy = [&](const ReceiverPolicy& pol, uint64_t stream_salt,
                        std::vector<std::vector<double>>* phi_store,
                        const std::vector<std::vector<double>>* phi_source)
      -> std::vector<ShotOutcome> {
    std::vector<ShotOutcome> out(n_shots);
    for (int k = 0; k < n_shots; ++k) {
      NoiseSource noise(seed ^ stream_salt, static_cast<uint64_t>(k));
      ReceiverPolicy p = pol;
      if (pol.kind == ReceiverKind::Replay)
        p.replay_phi = &(*phi_source)[(k + 1) % n_shots];
      PhaseShot shot =
          run_shot(theta_true[k], mode, p, noise, phi_store != nullptr);
      if (phi_store) (*phi_store)[k] = std::move(shot.phi_trace);
      out[k] = {std::exp(Complex(0, shot.theta_hat - theta_true[k])),
                std::abs(shot.R), shot.theta_defined};
    }
    return out;
  };

  std::vector<std::vector<double>> phi_traces(n_shots);
  auto adaptive = run_policy(ReceiverPolicy::adaptivedyne(delay, eta), 0, &phi_traces,
                             nullptr);
  auto heterodyne = run_policy(ReceiverPolicy::heterodyne(heterodyne_omega, eta), 0,
                               nullptr, nullptr);
  auto replay =
      run_policy(ReceiverPolicy::replay(phi_traces[0], eta), 0, nullptr, &phi_traces);

  auto stats_of = [&](const char* name,
                      const std::vector<ShotOutcome>& shots) -> PolicyStats {
    PolicyStats st;
    st.name = name;
    std::vector<Complex> res;
    std::vector<double> absr;
    for (const auto& s : shots) {
      if (!s.defined) {
        ++st.undefined_shots;
        continue;
      }
      res.push_back(s.residual);
      absr.push_back(s.abs_r);
    }
    st.holevo = detail::holevo_of(res);
    double mean = 0.0, m2 = 0.0;
    for (double a : absr) mean += a;
    mean /= absr.size();
    for (double a : absr) m2 += (a - mean) * (a - mean);
    st.var_abs_r = m2 / std::max<size_t>(1, absr.size() - 1);

    NoiseSource boot(0xB007, 0);
    std::vector<double> hv(bootstrap);
    for (int b = 0; b < bootstrap; ++b) {
      std::vector<Complex> sample(res.size());
      for (size_t i = 0; i < res.size(); ++i)
        sample[i] = res[static_cast<size_t>(boot.uniform() * res.size()) %
                        res.size()];
      hv[b] = detail::holevo_of(sample);
    }
    std::sort(hv.begin(), hv.end());
    st.holevo_lo = hv[static_cast<size_t>(0.025 * bootstrap)];
    st.holevo_hi = hv[static_cast<size_t>(0.975 * bootstrap)];
    return st;
  };

  BenchmarkResult out;
  out.policies.push_back(stats_of("adaptivedyne", adaptive));
  out.policies.push_back(stats_of("heterodyne", heterodyne));
  out.policies.push_back(stats_of("replay", replay));

  // Paired bootstrap over shot indices.
  NoiseSource boot(0xB007, 1);
  int het_minus_adapt_nonpos = 0;
  int rep_minus_het_pos = 0, rep_minus_het_neg = 0;
  std::vector<double> diff_ha(bootstrap);
  for (int b = 0; b < bootstrap; ++b) {
    std::vector<Complex> ra, rh, rr;
    ra.reserve(n_shots);
    for (int i = 0; i < n_shots; ++i) {
      int k = static_cast<int>(boot.uniform() * n_shots) % n_shots;
      ra.push_back(adaptive[k].residual);
      rh.push_back(heterodyne[k].residual);
      rr.push_back(replay[k].residual);
    }
    double ha = detail::holevo_of(rh) - detail::holevo_of(ra);
    diff_ha[b] = ha;
    if (ha <= 0) ++het_minus_adapt_nonpos;
    double rhd = detail::holevo_of(rr) - detail::holevo_of(rh);
    if (rhd > 0) ++rep_minus_het_pos;
    if (rhd < 0) ++rep_minus_het_neg;
  }
  std::sort(diff_ha.begin(), diff_ha.end());
  out.paired_diff_adaptive_vs_heterodyne_lo =
      diff_ha[static_cast<size_t>(0.025 * bootstrap)];
  out.paired_diff_adaptive_vs_heterodyne_hi =
      diff_ha[static_cast<size_t>(0.975 * bootstrap)];
  out.paired_p_replay_vs_heterodyne =
      2.0 * std::min(rep_minus_het_pos, rep_minus_het_neg) / double(bootstrap);
  return out;
}

}  // namespace qfb
