#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridtest/harmonics.hpp"
#include "hybridtest/substructuring.hpp"
#include "hybridtest/virtual_rig.hpp"

namespace hybridtest::coupler {

enum class ResidualForm {
  /// R = U_P - D_N^-1 (F_N^e - F_P), in mm.
  Displacement,
  /// D_N R = D_N U_P - F_N^e + F_P, in force units; norms are still reported
  /// on D_N^-1 of it.
  Force,
};

inline const char* to_string(ResidualForm f) { return f == ResidualForm::Force ? "force" : "displacement"; }

struct BroydenConfig {
  bool probe_initial = true;   ///< finite-difference Jacobian at the first point
  double probe_volts = 1.0;    ///< perturbation per voltage coefficient
  double step_damping = 1.0;
  int max_halvings = 3;
  double secant_floor = 0.013;  ///< mm; secant pairs whose residual change is smaller are not used
};

struct CouplerConfig {
  Frequency f_start = Frequency::from_hz(16.0);
  Frequency f_stop = Frequency::from_hz(19.0);
  Frequency f_step = Frequency::from_hz(0.1);
  int n_periods = 30;
  double transient_tol = 0.013;   ///< mm
  double convergence_tol = 0.02;  ///< mm
  int max_iter = 100;
  int max_wait_blocks = 20;       ///< cap on n-period blocks spent waiting for a steady residual
  int n_harmonics = 1;
  double compensation_angle = 0.06;  ///< rad at the fundamental; harmonic k uses k times this
  ResidualForm form = ResidualForm::Displacement;
  double initial_voltage = 0.1;  ///< V, shaker 1, fundamental, at the first sweep point
  BroydenConfig broyden;

  std::vector<std::string> validation_errors() const {
    std::vector<std::string> e;
    if (!(f_start.khz() > 0) || !(f_stop >= f_start)) e.push_back("sweep range must be positive and ascending");
    if (!(f_step.khz() > 0)) e.push_back("sweep step must be positive");
    if (n_periods < 1) e.push_back("n_periods must be at least 1");
    if (!(transient_tol > 0) || !(convergence_tol > 0)) e.push_back("tolerances must be positive");
    if (!(convergence_tol >= transient_tol)) e.push_back("convergence_tol must not be below transient_tol");
    if (max_iter < 1) e.push_back("max_iter must be at least 1");
    if (max_wait_blocks < 2) e.push_back("max_wait_blocks must be at least 2");
    if (n_harmonics < 1) e.push_back("n_harmonics must be at least 1");
    if (!(broyden.probe_volts > 0)) e.push_back("probe voltage must be positive");
    if (!(broyden.step_damping > 0 && broyden.step_damping <= 1)) e.push_back("step damping must lie in (0, 1]");
    if (broyden.max_halvings < 0) e.push_back("max_halvings must be non-negative");
    if (!(broyden.secant_floor >= 0)) e.push_back("secant floor must be non-negative");
    return e;
  }

  void validate() const {
    const auto errors = validation_errors();
    if (!errors.empty()) {
      std::string msg = "invalid coupler configuration:";
      for (const auto& x : errors) msg += "\n  - " + x;
      throw std::invalid_argument(msg);
    }
  }

  std::vector<Frequency> frequencies() const {
    std::vector<Frequency> out;
    const int n = static_cast<int>(std::floor((f_stop.khz() - f_start.khz()) / f_step.khz() + 1e-9));
    for (int i = 0; i <= n; ++i) out.push_back(Frequency::from_khz(f_start.khz() + i * f_step.khz()));
    return out;
  }
};

/// The numerical side: condensed model plus a harmonic point force on the
/// interface deflection DOF (kN amplitude, cosine phase).
struct NumericalSide {
  substructure::SubModel model;
  double force_amplitude = 0.0;

  Eigen::Matrix2cd D(Frequency f, int k) const {
    try {
      return substructure::condense(model, cplx(0.0, k * f.angular())).D;
    } catch (const NearPoleError&) {
      throw NumericalFailure("numerical-side dynamic stiffness singular at harmonic " + std::to_string(k) +
                             " (" + std::to_string(k * f.hz()) + " Hz)");
    }
  }

  Eigen::Vector2cd external(int k) const {
    return k == 1 ? Eigen::Vector2cd(force_amplitude, 0.0) : Eigen::Vector2cd::Zero();
  }
};

inline const std::vector<std::string>& displacement_channels() {
  static const std::vector<std::string> c{"deflection", "rotation"};
  return c;
}

/// Interface displacement and force of the physical side at harmonic k, the
/// force in DOF directions.
inline Eigen::Vector2cd measured_displacement(const HarmonicVector& m, int k) {
  return {m.at("deflection", k), m.at("rotation", k)};
}
inline Eigen::Vector2cd measured_force(const HarmonicVector& m, int k) {
  return {m.at("shear", k), -m.at("moment", k)};
}

/// Per-harmonic residual U_P - D_N^-1 (F_N^e - F_P). Harmonic 0 is left at
/// zero.
inline HarmonicVector residual(const HarmonicVector& measured, const std::vector<Eigen::Matrix2cd>& DN,
                               const NumericalSide& ns) {
  const int nh = measured.n_harmonics();
  if (static_cast<int>(DN.size()) < nh + 1) throw std::invalid_argument("need D_N for every harmonic");
  HarmonicVector R(measured.omega(), displacement_channels(), nh);
  for (int k = 1; k <= nh; ++k) {
    const Eigen::FullPivLU<Eigen::Matrix2cd> lu(DN[k]);
    if (!(lu.rcond() > 1e-14)) {
      throw NumericalFailure("numerical-side dynamic stiffness singular at harmonic " + std::to_string(k));
    }
    const Eigen::Vector2cd r =
        measured_displacement(measured, k) - lu.solve(ns.external(k) - measured_force(measured, k));
    R.set(0, k, r(0));
    R.set(1, k, r(1));
  }
  return R;
}

/// Euclidean norm over real and imaginary parts of harmonics k >= 1, with the
/// rotation channel scaled by d_l into mm.
inline double residual_norm(const HarmonicVector& R, double d_l) {
  double sum = 0.0;
  for (int k = 1; k <= R.n_harmonics(); ++k) {
    sum += std::norm(R(0, k)) + std::norm(d_l * R(1, k));
  }
  return std::sqrt(sum);
}

/// Real vector driven to zero by the Broyden iteration.
inline Eigen::VectorXd flatten_residual(const HarmonicVector& R, const std::vector<Eigen::Matrix2cd>& DN,
                                        ResidualForm form, double d_l) {
  const int nh = R.n_harmonics();
  Eigen::VectorXd out(4 * nh);
  for (int k = 1; k <= nh; ++k) {
    Eigen::Vector2cd r(R(0, k), R(1, k));
    if (form == ResidualForm::Force) {
      r = DN[k] * r;
      r(1) /= d_l;
    } else {
      r(1) *= d_l;
    }
    out.segment<4>(4 * (k - 1)) << r(0).real(), r(0).imag(), r(1).real(), r(1).imag();
  }
  return out;
}

/// Voltage harmonics (row per shaker, column per harmonic) to and from the
/// real unknown vector; harmonic 0 is not an unknown.
inline Eigen::VectorXd flatten_voltage(const Eigen::MatrixXcd& V) {
  const int nh = static_cast<int>(V.cols()) - 1;
  Eigen::VectorXd x(4 * nh);
  for (int k = 1; k <= nh; ++k)
    for (int i = 0; i < 2; ++i) {
      x(4 * (k - 1) + 2 * i) = V(i, k).real();
      x(4 * (k - 1) + 2 * i + 1) = V(i, k).imag();
    }
  return x;
}

inline Eigen::MatrixXcd unflatten_voltage(const Eigen::VectorXd& x) {
  const int nh = static_cast<int>(x.size()) / 4;
  Eigen::MatrixXcd V = Eigen::MatrixXcd::Zero(2, nh + 1);
  for (int k = 1; k <= nh; ++k)
    for (int i = 0; i < 2; ++i) V(i, k) = cplx(x(4 * (k - 1) + 2 * i), x(4 * (k - 1) + 2 * i + 1));
  return V;
}

/// Steady when the last two residual norms differ by less than tol.
inline bool steady_check(const std::vector<double>& norms, double tol) {
  if (norms.size() < 2) throw std::invalid_argument("steady check needs two residual evaluations");
  return std::abs(norms[norms.size() - 1] - norms[norms.size() - 2]) < tol;
}

/// Good Broyden iteration on the inverse Jacobian.
struct BroydenState {
  Eigen::MatrixXd H;  ///< inverse Jacobian estimate
  std::optional<Eigen::VectorXd> x_prev, f_prev;
  double min_change = 0.0;  ///< pairs with |f - f_prev| below this are skipped
  int skipped_updates = 0;

  bool initialized() const { return H.size() > 0; }
};

/// Sherman-Morrison update with the secant pair (x_prev -> x, f_prev -> f).
inline void broyden_update(BroydenState& st, const Eigen::VectorXd& x, const Eigen::VectorXd& f) {
  if (st.x_prev && st.f_prev && st.x_prev->size() == x.size()) {
    const Eigen::VectorXd dx = x - *st.x_prev;
    const Eigen::VectorXd df = f - *st.f_prev;
    const Eigen::VectorXd u = st.H * df;
    const double den = dx.dot(u);
    if (std::abs(den) > 1e-14 * dx.norm() * u.norm() && dx.norm() > 0 && df.norm() >= st.min_change) {
      st.H += ((dx - u) / den) * (dx.transpose() * st.H);
    } else {
      ++st.skipped_updates;
    }
  }
  st.x_prev = x;
  st.f_prev = f;
}

/// One quasi-Newton step: update with the newest pair, then x - damping H f.
inline Eigen::VectorXd broyden_step(BroydenState& st, const Eigen::VectorXd& x, const Eigen::VectorXd& f,
                                    double damping = 1.0) {
  if (!st.initialized()) throw std::logic_error("Broyden state used before initialisation");
  broyden_update(st, x, f);
  return x - damping * (st.H * f);
}

struct SyncMetric {
  double delay = std::numeric_limits<double>::quiet_NaN();          ///< ms
  double amplification = std::numeric_limits<double>::quiet_NaN();  ///< |PS|/|NS| - 1
  bool defined = false;
};

/// Delay and amplification of each physical-side channel relative to the
/// numerical side, for deflection, rotation, shear, moment.
inline std::array<SyncMetric, 4> sync_metrics(Frequency omega, const Eigen::Vector2cd& U_N,
                                              const Eigen::Vector2cd& F_N_section,
                                              const Eigen::Vector2cd& U_P,
                                              const Eigen::Vector2cd& F_P_section) {
  const cplx ns[4] = {U_N(0), U_N(1), F_N_section(0), F_N_section(1)};
  const cplx ps[4] = {U_P(0), U_P(1), F_P_section(0), F_P_section(1)};
  std::array<SyncMetric, 4> out;
  for (int c = 0; c < 4; ++c) {
    const double a = std::abs(ns[c]);
    if (!(a > 1e-12) || a < 1e-6 * std::abs(ps[c])) continue;
    const double dphi = std::remainder(std::arg(ps[c]) - std::arg(ns[c]), 2 * std::numbers::pi);
    out[c] = {-dphi / omega.angular(), std::abs(ps[c]) / a - 1.0, true};
  }
  return out;
}

inline const std::array<const char*, 4>& sync_channel_names() {
  static const std::array<const char*, 4> n{"deflection", "rotation", "shear", "moment"};
  return n;
}

struct SweepRecord {
  Frequency omega;           ///< snapped
  int period_samples = 0;
  Eigen::MatrixXcd V;        ///< converged (or last) voltage harmonics
  HarmonicVector measured;   ///< deflection, rotation, shear, moment after compensation
  HarmonicVector U_N;        ///< command displacement D_N^-1 (F_N^e - F_P)
  HarmonicVector F_N;        ///< implied numerical-side section forces F_N^e - D_N U_P as (shear, moment)
  std::vector<Eigen::Matrix2cd> DN;
  double residual_norm = 0.0;
  int iterations = 0;
  int probes = 0;
  int blocks = 0;            ///< n-period blocks simulated
  bool converged = false;
  std::array<SyncMetric, 4> sync{};
  std::vector<double> residual_history;
};

/// Flowchart loop driving one virtual rig.
class HybridTest {
 public:
  HybridTest(NumericalSide ns, rig::VirtualRig& rig, CouplerConfig cfg)
      : ns_(std::move(ns)), rig_(rig), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (ns_.model.side != substructure::Side::Numerical) {
      throw std::invalid_argument("coupler needs the numerical side of a partition");
    }
  }

  const CouplerConfig& config() const { return cfg_; }
  const BroydenState& broyden() const { return broyden_; }
  void set_broyden(BroydenState st) { broyden_ = std::move(st); }

  struct Evaluation {
    HarmonicVector measured;
    HarmonicVector R;
    double norm;
    int blocks;
  };

  /// Apply V and measure n-period blocks until the residual norm is steady.
  Evaluation evaluate(const Eigen::MatrixXcd& V, const SampledFrequency& sf,
                      const std::vector<Eigen::Matrix2cd>& DN) {
    std::vector<double> norms;
    std::optional<Evaluation> last;
    const double d_l = rig_.config().sensors.laser_separation;
    for (int b = 0; b < cfg_.max_wait_blocks; ++b) {
      const auto w = rig::measure_window(rig_, V, sf, cfg_.n_periods);
      const auto ch = rig::interface_channels(w.raw, rig_.config());
      auto h = extract_harmonics(ch, w.first_index, sf, cfg_.n_periods, cfg_.n_harmonics,
                                 rig::interface_channel_names());
      h = compensate_phase(std::move(h), proportional_angles(cfg_.compensation_angle, cfg_.n_harmonics),
                           {"shear", "moment"});
      auto R = residual(h, DN, ns_);
      const double n = residual_norm(R, d_l);
      norms.push_back(n);
      last = Evaluation{std::move(h), std::move(R), n, b + 1};
      if (norms.size() >= 2 && steady_check(norms, cfg_.transient_tol)) break;
    }
    return *last;
  }

  SweepRecord solve_point(Frequency f, Eigen::MatrixXcd V0) {
    const auto sf = snap_frequency(f, rig_.dt());
    const int nh = cfg_.n_harmonics;
    if (V0.rows() != 2) throw std::invalid_argument("initial voltages need one row per shaker");
    if (V0.cols() != nh + 1) {
      Eigen::MatrixXcd V = Eigen::MatrixXcd::Zero(2, nh + 1);
      const Eigen::Index kk = std::min<Eigen::Index>(V0.cols(), nh + 1);
      V.leftCols(kk) = V0.leftCols(kk);
      V0 = V;
    }
    V0.col(0).setZero();
    std::vector<Eigen::Matrix2cd> DN(nh + 1, Eigen::Matrix2cd::Zero());
    for (int k = 1; k <= nh; ++k) DN[k] = ns_.D(sf.omega, k);
    const double d_l = rig_.config().sensors.laser_separation;
    auto flat = [&](const HarmonicVector& R) { return flatten_residual(R, DN, cfg_.form, d_l); };

    SweepRecord rec{sf.omega, sf.period_samples, V0,
                    HarmonicVector(sf.omega, rig::interface_channel_names(), nh),
                    HarmonicVector(sf.omega, displacement_channels(), nh),
                    HarmonicVector(sf.omega, {"shear", "moment"}, nh),
                    DN, 0.0, 0, 0, 0, false, {}, {}};

    Eigen::VectorXd x = flatten_voltage(V0);
    auto ev = evaluate(V0, sf, DN);
    rec.blocks += ev.blocks;
    Eigen::VectorXd fx = flat(ev.R);

    if (!broyden_.initialized() || broyden_.H.rows() != x.size()) {
      const int n = static_cast<int>(x.size());
      if (cfg_.broyden.probe_initial) {
        Eigen::MatrixXd J(n, n);
        for (int j = 0; j < n; ++j) {
          Eigen::VectorXd xp = x;
          xp(j) += cfg_.broyden.probe_volts;
          const auto pe = evaluate(unflatten_voltage(xp), sf, DN);
          rec.blocks += pe.blocks;
          ++rec.probes;
          J.col(j) = (flat(pe.R) - fx) / cfg_.broyden.probe_volts;
        }
        const Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        if (!lu.isInvertible()) throw NumericalFailure("probed Jacobian is singular");
        broyden_.H = lu.inverse();
      } else {
        broyden_.H = Eigen::MatrixXd::Identity(n, n);
      }
    }
    broyden_.x_prev.reset();
    broyden_.f_prev.reset();
    broyden_.min_change = cfg_.broyden.secant_floor;
    if (cfg_.form == ResidualForm::Force) {
      const Eigen::Matrix2d Sf = Eigen::Vector2d(1.0, 1.0 / d_l).asDiagonal();
      const Eigen::Matrix2d Sd = Eigen::Vector2d(1.0, 1.0 / d_l).asDiagonal();
      const Eigen::JacobiSVD<Eigen::Matrix2cd> svd(Sf.cast<cplx>() * DN[1] * Sd.cast<cplx>());
      broyden_.min_change *= svd.singularValues()(0);
    }
    broyden_update(broyden_, x, fx);

    rec.residual_history.push_back(ev.norm);
    while (ev.norm >= cfg_.convergence_tol && rec.iterations < cfg_.max_iter) {
      double scale = cfg_.broyden.step_damping;
      for (int halving = 0;; ++halving) {
        const Eigen::VectorXd x_try = x - scale * (broyden_.H * fx);
        auto trial = evaluate(unflatten_voltage(x_try), sf, DN);
        rec.blocks += trial.blocks;
        ++rec.iterations;
        const Eigen::VectorXd f_try = flat(trial.R);
        // Secant information from every trial, accepted or not.
        broyden_update(broyden_, x_try, f_try);
        const bool improved = trial.norm < ev.norm;
        if (improved || halving >= cfg_.broyden.max_halvings || rec.iterations >= cfg_.max_iter) {
          x = x_try;
          fx = f_try;
          ev = std::move(trial);
          break;
        }
        // Fall back to the previous point for the next pair.
        broyden_.x_prev = x;
        broyden_.f_prev = fx;
        scale *= 0.5;
      }
      rec.residual_history.push_back(ev.norm);
    }

    rec.V = unflatten_voltage(x);
    rec.measured = ev.measured;
    rec.residual_norm = ev.norm;
    rec.converged = ev.norm < cfg_.convergence_tol;
    fill_numerical_side(rec);
    return rec;
  }

  std::vector<SweepRecord> sweep(const std::vector<Frequency>& freqs) {
    for (std::size_t i = 1; i < freqs.size(); ++i) {
      if (!(freqs[i] > freqs[i - 1])) throw std::invalid_argument("sweep frequencies must ascend");
    }
    std::vector<SweepRecord> out;
    Eigen::MatrixXcd V = Eigen::MatrixXcd::Zero(2, cfg_.n_harmonics + 1);
    V(0, 1) = cfg_.initial_voltage;
    for (const auto& f : freqs) {
      out.push_back(solve_point(f, V));
      V = out.back().V;
    }
    return out;
  }

 private:
  void fill_numerical_side(SweepRecord& rec) const {
    const int nh = cfg_.n_harmonics;
    for (int k = 1; k <= nh; ++k) {
      const Eigen::Vector2cd UP = measured_displacement(rec.measured, k);
      const Eigen::Vector2cd FP = measured_force(rec.measured, k);
      const Eigen::Vector2cd UN = rec.DN[k].fullPivLu().solve(ns_.external(k) - FP);
      const Eigen::Vector2cd FN = ns_.external(k) - rec.DN[k] * UP;
      rec.U_N.set(0, k, UN(0));
      rec.U_N.set(1, k, UN(1));
      rec.F_N.set(0, k, FN(0));
      rec.F_N.set(1, k, -FN(1));
    }
    rec.sync = sync_metrics(rec.omega, {rec.U_N(0, 1), rec.U_N(1, 1)}, {rec.F_N(0, 1), rec.F_N(1, 1)},
                            {rec.measured.at("deflection", 1), rec.measured.at("rotation", 1)},
                            {rec.measured.at("shear", 1), rec.measured.at("moment", 1)});
  }

  NumericalSide ns_;
  rig::VirtualRig& rig_;
  CouplerConfig cfg_;
  BroydenState broyden_;
};

/// Interface response of the monolithic structure, (D_N + D_P)^-1 F_N^e.
inline Eigen::Vector2cd reference_response(const NumericalSide& ns, const substructure::SubModel& physical,
                                           Frequency f) {
  const cplx s(0.0, f.angular());
  return substructure::hybrid_frf(substructure::condense(ns.model, s), substructure::condense(physical, s),
                                  ns.external(1));
}

/// Force amplitude giving a peak interface deflection of `target` mm over
/// the given frequencies.
inline double calibrate_forcing(const substructure::SubModel& numerical, const substructure::SubModel& physical,
                                const std::vector<Frequency>& freqs, double target) {
  if (!(target > 0)) throw std::invalid_argument("target amplitude must be positive");
  NumericalSide unit{numerical, 1.0};
  double peak = 0.0;
  for (const auto& f : freqs) peak = std::max(peak, std::abs(reference_response(unit, physical, f)(0)));
  if (!(peak > 0)) throw NumericalFailure("reference response vanishes over the sweep");
  return target / peak;
}

}  // namespace hybridtest::coupler
