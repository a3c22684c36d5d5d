#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridtest/beam_fe.hpp"
#include "hybridtest/errors.hpp"
#include "hybridtest/harmonics.hpp"
#include "hybridtest/substructuring.hpp"
#include "hybridtest/units.hpp"

namespace hybridtest::rig {

/// Rigid transfer system holding the physical beam at the interface.
/// Units: kg, kg mm^2, kN/mm, kN mm/rad, lever-arm positions in mm along the
/// beam axis measured from the interface (negative = behind the clamp).
struct ClampConfig {
  double mass = 0.3;
  double rotary_inertia = 100.0;
  double k_translation = 0.0426;
  double k_rotation = 14.2;
  double damping_ratio = 0.02;  ///< viscous damping of each support spring against the clamp alone
  std::array<double, 2> lever_arms{-15.0, -65.0};

  double c_translation() const { return 2.0 * damping_ratio * std::sqrt(k_translation * mass); }
  double c_rotation() const { return 2.0 * damping_ratio * std::sqrt(k_rotation * rotary_inertia); }
};

/// Shaker: static gain (kN/V), first-order lag (ms), optional pure delay (ms,
/// rounded to whole samples).
struct ActuatorConfig {
  double gain = 0.01;
  double lag = 1.0;
  double delay = 0.0;
};

enum class GaugeModel {
  /// Strains synthesised from the exact interface section forces.
  Consistent,
  /// Strains from the FE curvature at the gauge stations.
  Curvature,
};

struct SensorConfig {
  double laser_separation = 30.0;  ///< d_l, mm
  double d1 = 10.0;                ///< gauge stations from the interface, mm
  double d2 = 30.0;
  double c = 0.0;  ///< strain-to-moment constant, kN mm; 0 selects 2 E I / h
  GaugeModel model = GaugeModel::Consistent;
};

/// Disturbances on the gauge channels (strain units).
struct NoiseConfig {
  double mains_amplitude = 2.5e-5;  ///< strain
  Frequency mains_frequency = Frequency::from_hz(50.0);
  std::optional<double> mains_phase;  ///< drawn from the seed when empty
  double mains_phase_offset = 0.1;    ///< extra phase on gauge 2, rad
  double white_sigma = 2e-7;          ///< strain, per sample
  std::uint64_t seed = 1;
};

/// Second-order low pass on the gauge channels, discretised with the bilinear
/// transform pre-warped at the cut-off.
struct FilterConfig {
  bool enabled = true;
  Frequency cutoff = Frequency::from_hz(500.0);
  double damping = 0.8865;
};

struct RigConfig {
  fe::FEModel ps_model;  ///< physical beam, interface at node 0, both ends free in the model
  ClampConfig clamp;
  std::array<ActuatorConfig, 2> actuators;
  SensorConfig sensors;
  NoiseConfig noise;
  FilterConfig filter;
  double dt = 0.2;  ///< ms

  double gauge_constant() const {
    const auto& p = ps_model.props;
    return sensors.c > 0 ? sensors.c : 2.0 * p.bending_stiffness() / p.h();
  }

  void validate() const {
    std::vector<std::string> errors = validation_errors();
    if (!errors.empty()) {
      std::string msg = "invalid rig configuration:";
      for (const auto& e : errors) msg += "\n  - " + e;
      throw std::invalid_argument(msg);
    }
  }

  std::vector<std::string> validation_errors() const {
    std::vector<std::string> e;
    if (!(dt > 0)) e.push_back("dt must be positive");
    if (!(sensors.d1 > 0)) e.push_back("gauge station d1 must be positive");
    if (!(sensors.d2 > sensors.d1)) e.push_back("gauge station d2 must exceed d1");
    if (!(sensors.d2 < ps_model.length())) e.push_back("gauge station d2 lies beyond the physical beam");
    if (!(sensors.laser_separation > 0)) e.push_back("laser separation must be positive");
    if (!(sensors.c >= 0)) e.push_back("strain-to-moment constant must be positive (or 0 for default)");
    if (clamp.mass < 0 || clamp.rotary_inertia < 0 || clamp.k_translation < 0 || clamp.k_rotation < 0 ||
        clamp.damping_ratio < 0) {
      e.push_back("clamp mass, inertia, springs and damping must be non-negative");
    }
    if (clamp.lever_arms[0] == clamp.lever_arms[1]) e.push_back("shaker lever arms must differ");
    for (const auto& a : actuators) {
      if (!(a.gain != 0)) e.push_back("actuator gain must be non-zero");
      if (!(a.lag >= 0)) e.push_back("actuator lag must be non-negative");
      if (!(a.delay >= 0)) e.push_back("actuator delay must be non-negative");
    }
    if (noise.mains_amplitude < 0 || noise.white_sigma < 0) e.push_back("noise levels must be non-negative");
    if (filter.enabled && !(filter.cutoff.khz() > 0 && filter.cutoff.khz() < 0.5 / dt)) {
      e.push_back("filter cut-off must lie between 0 and the Nyquist frequency");
    }
    if (filter.enabled && !(filter.damping > 0)) e.push_back("filter damping must be positive");
    if (ps_model.bc != fe::BoundaryCondition::free_free()) {
      e.push_back("physical beam model must have both ends free (interface DOFs at node 0)");
    }
    return e;
  }

  /// Rig around the physical side of a partition.
  static RigConfig around(const substructure::SubModel& physical) {
    if (physical.side != substructure::Side::Physical) {
      throw std::invalid_argument("rig needs the physical side of a partition");
    }
    RigConfig cfg{physical.model, {}, {}, {}, {}, {}, 0.2};
    return cfg;
  }
};

struct SensorFrame {
  double t = 0;  ///< ms
  double l1 = 0, l2 = 0;      ///< laser readings, mm
  double eps1 = 0, eps2 = 0;  ///< gauge strains after noise and filter
};

/// Laser pair to interface motion: u = l1, phi = (l1 - l2) / d_l.
inline std::pair<double, double> reconstruct_displacement(double l1, double l2, double d_l) {
  if (!(d_l > 0)) throw std::invalid_argument("laser separation must be positive");
  return {l1, (l1 - l2) / d_l};
}

/// Gauge pair to section forces at the interface (shear T, moment M), from a
/// linear moment field c eps(x) = M + T x.
inline std::pair<double, double> reconstruct_forces(double eps1, double eps2, double d1, double d2,
                                                    double c) {
  if (!(d2 > d1)) throw std::invalid_argument("gauge stations must satisfy d2 > d1");
  const double slope = (eps2 - eps1) / (d2 - d1);
  return {c * slope, c * (eps1 - d1 * slope)};
}

/// Section forces (T, M) to the interface force acting on the physical beam in
/// DOF directions (deflection, rotation).
inline Eigen::Vector2d section_to_dof_force(double T, double M) { return {T, -M}; }

/// Errors on the cosine and sine coefficients of a harmonic signal caused by
/// a sinusoidal disturbance T_N sin(rho_N Omega t + phi_N), averaged over n
/// periods of the signal.
struct CoefficientErrors {
  double cosine;
  double sine;
};

inline CoefficientErrors noise_bound(double T_N, double rho_N, double phi_N, int n) {
  if (n < 1) throw std::invalid_argument("number of periods must be at least 1");
  if (std::abs(rho_N - 1.0) < 1e-12) {
    throw std::invalid_argument("disturbance frequency coincides with the signal frequency");
  }
  const double pi = std::numbers::pi;
  const double a = 2.0 * T_N / (n * pi) / (rho_N * rho_N - 1.0);
  // sin(n pi rho) with the argument reduced first, so whole numbers of
  // disturbance periods give exactly zero.
  const double x = n * rho_N;
  const double r = std::remainder(x, 2.0);
  const double w = (r == std::trunc(r)) ? 0.0 : std::sin(pi * r);
  const double arg = pi * r + phi_N;
  return {a * rho_N * std::sin(arg) * w, a * std::cos(arg) * w};
}

/// Phase-independent bound on both coefficient errors.
inline double noise_bound_magnitude(double T_N, double rho_N, int n) {
  if (n < 1) throw std::invalid_argument("number of periods must be at least 1");
  if (std::abs(rho_N - 1.0) < 1e-12) {
    throw std::invalid_argument("disturbance frequency coincides with the signal frequency");
  }
  return 2.0 * T_N / (n * std::numbers::pi) * std::max(rho_N, 1.0) / std::abs(rho_N * rho_N - 1.0);
}

/// Biquad coefficients of the gauge low pass.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  static Biquad lowpass(const FilterConfig& f, double dt) {
    if (!f.enabled) return {};
    const double wc = f.cutoff.angular();
    const double K = wc / std::tan(wc * dt / 2.0);
    const double den = K * K + 2 * f.damping * wc * K + wc * wc;
    Biquad q;
    q.b0 = wc * wc / den;
    q.b1 = 2 * q.b0;
    q.b2 = q.b0;
    q.a1 = 2 * (wc * wc - K * K) / den;
    q.a2 = (K * K - 2 * f.damping * wc * K + wc * wc) / den;
    return q;
  }

  cplx response(Frequency f, double dt) const {
    const cplx z1 = std::polar(1.0, -f.angular() * dt);
    return (b0 + b1 * z1 + b2 * z1 * z1) / (1.0 + a1 * z1 + a2 * z1 * z1);
  }
};

/// Phase lag (rad, positive = lag) of the gauge filter at f.
inline double filter_phase_lag(const FilterConfig& f, double dt, Frequency freq) {
  return -std::arg(Biquad::lowpass(f, dt).response(freq, dt));
}

struct RigState {
  Eigen::VectorXd q, qd, qdd;
  std::array<double, 2> force{0, 0};      ///< actuator outputs, kN
  std::array<double, 2> voltage{0, 0};    ///< voltage reaching each actuator at the current sample
  std::deque<std::array<double, 2>> pending;  ///< delayed commands
  std::array<std::array<double, 2>, 2> filter{};  ///< direct-form-II-transposed states per gauge
  long step = 0;
  double t = 0;
};

/// Small-signal transfer from shaker voltages to the rig outputs at one
/// frequency. Columns: shaker 1, shaker 2.
struct RigFrequencyResponse {
  Eigen::Matrix2cd displacement;  ///< (u, phi)
  Eigen::Matrix2cd force;         ///< interface force on the beam in DOF directions
  Eigen::Matrix2cd strain;        ///< (eps1, eps2) after the filter
};

enum class Discretization {
  /// Continuous-time model of the same rig.
  Continuous,
  /// The exact sampled response of the time stepper (trapezoidal map).
  Sampled,
};

class VirtualRig {
 public:
  explicit VirtualRig(RigConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& ps = cfg_.ps_model;
    const int n = ps.size();
    Eigen::MatrixXd M = ps.M, C = ps.C, K = ps.K;
    M(0, 0) += cfg_.clamp.mass;
    M(1, 1) += cfg_.clamp.rotary_inertia;
    K(0, 0) += cfg_.clamp.k_translation;
    K(1, 1) += cfg_.clamp.k_rotation;
    C(0, 0) += cfg_.clamp.c_translation();
    C(1, 1) += cfg_.clamp.c_rotation();
    M_ = M.sparseView();
    C_ = C.sparseView();
    K_ = K.sparseView();
    const double h = cfg_.dt;
    const Eigen::SparseMatrix<double> Keff = K_ + (2.0 / h) * C_ + (4.0 / h / h) * M_;
    solver_.compute(Keff);
    if (solver_.info() != Eigen::Success) throw NumericalFailure("rig effective stiffness factorisation failed");

    const int nb = std::min(n, 4);
    ps_M_ = ps.M.topLeftCorner(2, nb);
    ps_C_ = ps.C.topLeftCorner(2, nb);
    ps_K_ = ps.K.topLeftCorner(2, nb);

    B_ = Eigen::MatrixXd::Zero(n, 2);
    for (int i = 0; i < 2; ++i) {
      B_(0, i) = 1.0;
      B_(1, i) = cfg_.clamp.lever_arms[i];
    }
    for (int i = 0; i < 2; ++i) {
      delay_samples_[i] = static_cast<int>(std::lround(cfg_.actuators[i].delay / h));
    }
    biquad_ = Biquad::lowpass(cfg_.filter, h);
    c_ = cfg_.gauge_constant();
    if (cfg_.sensors.model == GaugeModel::Curvature) {
      stations_ = {locate(cfg_.sensors.d1), locate(cfg_.sensors.d2)};
    }
    reset();
  }

  const RigConfig& config() const { return cfg_; }
  const RigState& state() const { return state_; }
  double dt() const { return cfg_.dt; }
  double time() const { return state_.t; }
  long step_index() const { return state_.step; }
  double mains_phase() const { return mains_phase_; }
  double gauge_constant() const { return c_; }

  /// Back to rest at t = 0 with the noise generator re-seeded.
  void reset() {
    const int n = cfg_.ps_model.size();
    state_ = RigState{};
    state_.q = state_.qd = state_.qdd = Eigen::VectorXd::Zero(n);
    const int dmax = std::max(delay_samples_[0], delay_samples_[1]);
    state_.pending.assign(dmax, {0.0, 0.0});
    rng_.seed(cfg_.noise.seed);
    std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
    mains_phase_ = cfg_.noise.mains_phase ? *cfg_.noise.mains_phase : phase(rng_);
  }

  /// Advance one sample. `command` is the voltage pair at the end of the step;
  /// between samples the command is interpolated linearly.
  SensorFrame step(const std::array<double, 2>& command) {
    const double h = cfg_.dt;
    auto& s = state_;

    std::array<double, 2> v_next{};
    s.pending.push_back(command);
    for (int i = 0; i < 2; ++i) {
      const int d = delay_samples_[i];
      v_next[i] = s.pending[s.pending.size() - 1 - d][i];
    }
    s.pending.pop_front();

    for (int i = 0; i < 2; ++i) {
      const auto& a = cfg_.actuators[i];
      const double v0 = s.voltage[i], v1 = v_next[i];
      if (a.lag > 0) {
        const double e = std::exp(-h / a.lag);
        const double beta = 1.0 - (a.lag / h) * (1.0 - e);
        s.force[i] = e * s.force[i] + a.gain * ((1.0 - e) * v0 + beta * (v1 - v0));
      } else {
        s.force[i] = a.gain * v1;
      }
      s.voltage[i] = v1;
    }

    const Eigen::Vector2d f(s.force[0], s.force[1]);
    const double a0 = 4.0 / (h * h), a1 = 2.0 / h, a2 = 4.0 / h;
    Eigen::VectorXd rhs = B_ * f;
    rhs += M_ * (a0 * s.q + a2 * s.qd + s.qdd);
    rhs += C_ * (a1 * s.q + s.qd);
    const Eigen::VectorXd q1 = solver_.solve(rhs);
    const Eigen::VectorXd qdd1 = a0 * (q1 - s.q) - a2 * s.qd - s.qdd;
    s.qd += 0.5 * h * (s.qdd + qdd1);
    s.qdd = qdd1;
    s.q = q1;
    ++s.step;
    s.t = s.step * h;
    return sense();
  }

  /// Total mechanical energy of clamp and beam.
  double energy() const {
    return 0.5 * state_.qd.dot(M_ * state_.qd) + 0.5 * state_.q.dot(K_ * state_.q);
  }

  Eigen::Vector2d interface_displacement() const { return state_.q.head<2>(); }

  /// Exact force the clamp applies to the beam, in DOF directions.
  Eigen::Vector2d interface_force() const {
    const int nb = static_cast<int>(ps_M_.cols());
    return ps_M_ * state_.qdd.head(nb) + ps_C_ * state_.qd.head(nb) + ps_K_ * state_.q.head(nb);
  }

  /// Mains pick-up on gauge 0 or 1 at time t, before the filter.
  double mains_at(double t, int gauge) const {
    return cfg_.noise.mains_amplitude *
           std::sin(cfg_.noise.mains_frequency.angular() * t + mains_phase_ +
                    (gauge == 1 ? cfg_.noise.mains_phase_offset : 0.0));
  }

 private:
  struct Station {
    int element;
    double xi;
    double le;
  };

  Station locate(double x) const {
    const auto& xs = cfg_.ps_model.node_coords;
    for (int e = 0; e + 1 < static_cast<int>(xs.size()); ++e) {
      if (x <= xs[e + 1] - xs[0] + 1e-12) {
        const double le = xs[e + 1] - xs[e];
        return {e, (x - (xs[e] - xs[0])) / le, le};
      }
    }
    throw std::invalid_argument("gauge station beyond the beam");
  }

  double curvature_at(const Station& st) const {
    auto elem = [&](int e, double xi, double le) {
      const auto& map = cfg_.ps_model.dof_map;
      const double q[4] = {state_.q(map[e][0]), state_.q(map[e][1]), state_.q(map[e + 1][0]),
                           state_.q(map[e + 1][1])};
      const double n[4] = {(-6 + 12 * xi) / (le * le), (-4 + 6 * xi) / le, (6 - 12 * xi) / (le * le),
                           (-2 + 6 * xi) / le};
      return n[0] * q[0] + n[1] * q[1] + n[2] * q[2] + n[3] * q[3];
    };
    const int ne = cfg_.ps_model.n_elements();
    if (st.xi > 1.0 - 1e-12 && st.element + 1 < ne) {
      const auto& xs = cfg_.ps_model.node_coords;
      const double le2 = xs[st.element + 2] - xs[st.element + 1];
      return 0.5 * (elem(st.element, 1.0, st.le) + elem(st.element + 1, 0.0, le2));
    }
    return elem(st.element, st.xi, st.le);
  }

  SensorFrame sense() {
    const auto& sc = cfg_.sensors;
    SensorFrame fr;
    fr.t = state_.t;
    const double u = state_.q(0), phi = state_.q(1);
    fr.l1 = u;
    fr.l2 = u - sc.laser_separation * phi;

    std::array<double, 2> eps{};
    if (sc.model == GaugeModel::Consistent) {
      const Eigen::Vector2d F = interface_force();
      const double T = F(0), M = -F(1);
      eps[0] = (M + T * sc.d1) / c_;
      eps[1] = (M + T * sc.d2) / c_;
    } else {
      const double EI = cfg_.ps_model.props.bending_stiffness();
      for (int g = 0; g < 2; ++g) eps[g] = EI * curvature_at(stations_[g]) / c_;
    }
    std::normal_distribution<double> white(0.0, 1.0);
    for (int g = 0; g < 2; ++g) {
      double x = eps[g] + mains_at(state_.t, g);
      if (cfg_.noise.white_sigma > 0) x += cfg_.noise.white_sigma * white(rng_);
      auto& z = state_.filter[g];
      const double y = biquad_.b0 * x + z[0];
      z[0] = biquad_.b1 * x - biquad_.a1 * y + z[1];
      z[1] = biquad_.b2 * x - biquad_.a2 * y;
      eps[g] = y;
    }
    fr.eps1 = eps[0];
    fr.eps2 = eps[1];
    return fr;
  }

  RigConfig cfg_;
  Eigen::SparseMatrix<double> M_, C_, K_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
  Eigen::MatrixXd ps_M_, ps_C_, ps_K_;
  Eigen::MatrixXd B_;
  std::array<int, 2> delay_samples_{0, 0};
  std::array<Station, 2> stations_{};
  Biquad biquad_;
  double c_ = 1.0;
  double mains_phase_ = 0.0;
  std::mt19937_64 rng_;
  RigState state_;
};

/// Frequency-domain model of the same rig: voltage phasors to output phasors
/// at f.
inline RigFrequencyResponse frequency_response(const RigConfig& cfg, Frequency f,
                                               Discretization mode = Discretization::Continuous) {
  cfg.validate();
  const auto& ps = cfg.ps_model;
  const double h = cfg.dt, w = f.angular();
  const cplx z = std::polar(1.0, w * h);
  const cplx s = mode == Discretization::Sampled ? cplx(0.0, 2.0 / h * std::tan(w * h / 2.0)) : cplx(0.0, w);

  Eigen::MatrixXcd Zps = substructure::dynamic_stiffness(ps, s);
  Eigen::MatrixXcd Z = Zps;
  Z(0, 0) += s * s * cfg.clamp.mass + s * cfg.clamp.c_translation() + cfg.clamp.k_translation;
  Z(1, 1) += s * s * cfg.clamp.rotary_inertia + s * cfg.clamp.c_rotation() + cfg.clamp.k_rotation;

  Eigen::MatrixXcd Bf = Eigen::MatrixXcd::Zero(ps.size(), 2);
  for (int i = 0; i < 2; ++i) {
    const auto& a = cfg.actuators[i];
    const int d = static_cast<int>(std::lround(a.delay / h));
    cplx g;
    if (mode == Discretization::Sampled) {
      if (a.lag > 0) {
        const double e = std::exp(-h / a.lag);
        const double beta = 1.0 - (a.lag / h) * (1.0 - e);
        g = a.gain * (beta * z + (1.0 - e - beta)) / (z - e);
      } else {
        g = a.gain;
      }
      g *= std::pow(z, -d);
    } else {
      g = a.gain * std::exp(-cplx(0.0, w) * (d * h)) / (1.0 + cplx(0.0, w) * a.lag);
    }
    Bf(0, i) = g;
    Bf(1, i) = g * cfg.clamp.lever_arms[i];
  }
  const Eigen::MatrixXcd q = Z.partialPivLu().solve(Bf);

  RigFrequencyResponse out;
  out.displacement = q.topRows<2>();
  out.force = Zps.topRows(2) * q;
  const double c = cfg.gauge_constant();
  const cplx H = mode == Discretization::Sampled
                     ? Biquad::lowpass(cfg.filter, h).response(f, h)
                     : (cfg.filter.enabled
                            ? [&] {
                                const double wc = cfg.filter.cutoff.angular();
                                const cplx iw(0.0, w);
                                return wc * wc / (iw * iw + 2 * cfg.filter.damping * wc * iw + wc * wc);
                              }()
                            : cplx(1.0));
  const auto& sc = cfg.sensors;
  for (int i = 0; i < 2; ++i) {
    if (sc.model == GaugeModel::Consistent) {
      const cplx T = out.force(0, i), M = -out.force(1, i);
      out.strain(0, i) = H * (M + T * sc.d1) / c;
      out.strain(1, i) = H * (M + T * sc.d2) / c;
    } else {
      throw std::invalid_argument("frequency response implemented for the consistent gauge model");
    }
  }
  return out;
}

/// Samples of one measurement window.
struct Window {
  SampledFrequency sf;
  int periods = 0;
  long first_index = 0;              ///< sample index of raw.front()
  std::vector<SensorFrame> raw;       ///< periods * period_samples frames
  std::vector<SensorFrame> averaged;  ///< period-synchronous average, one period
};

/// Shaker command from voltage harmonics (row per shaker, column per
/// harmonic, phases referred to t = 0) at sample `index`.
inline std::array<double, 2> voltage_at(const Eigen::MatrixXcd& V, const SampledFrequency& sf, long index) {
  std::array<double, 2> v{0.0, 0.0};
  const long j = index % sf.period_samples;
  for (Eigen::Index k = 0; k < V.cols(); ++k) {
    const long m = j * k % sf.period_samples;
    const cplx e = std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(m) / sf.period_samples);
    for (int i = 0; i < 2; ++i) v[i] += (V(i, k) * e).real();
  }
  return v;
}

/// Drive the rig with voltage harmonics for exactly n periods and collect the
/// sensor frames.
inline Window measure_window(VirtualRig& rig, const Eigen::MatrixXcd& V, const SampledFrequency& sf, int n) {
  if (n < 1) throw std::invalid_argument("window needs at least one period");
  if (V.rows() != 2) throw std::invalid_argument("voltage harmonics need one row per shaker");
  if (std::abs(sf.period_samples * rig.dt() - sf.omega.period()) > 1e-9 * sf.omega.period()) {
    throw std::invalid_argument("frequency not commensurate with the sample period");
  }
  Window w{sf, n, rig.step_index() + 1, {}, {}};
  const long total = static_cast<long>(n) * sf.period_samples;
  w.raw.reserve(total);
  for (long r = 0; r < total; ++r) {
    w.raw.push_back(rig.step(voltage_at(V, sf, rig.step_index() + 1)));
  }
  w.averaged.assign(sf.period_samples, SensorFrame{});
  for (long r = 0; r < total; ++r) {
    auto& a = w.averaged[r % sf.period_samples];
    const auto& f = w.raw[r];
    a.l1 += f.l1 / n;
    a.l2 += f.l2 / n;
    a.eps1 += f.eps1 / n;
    a.eps2 += f.eps2 / n;
  }
  for (int j = 0; j < sf.period_samples; ++j) w.averaged[j].t = w.raw[j].t;
  return w;
}

inline const std::vector<std::string>& interface_channel_names() {
  static const std::vector<std::string> names{"deflection", "rotation", "shear", "moment"};
  return names;
}

/// Reconstructed interface channels (u mm, phi rad, T kN, M kN mm), one row
/// per frame.
inline Eigen::MatrixXd interface_channels(const std::vector<SensorFrame>& frames, const RigConfig& cfg) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(frames.size()), 4);
  const auto& sc = cfg.sensors;
  const double c = cfg.gauge_constant();
  for (std::size_t r = 0; r < frames.size(); ++r) {
    const auto [u, phi] = reconstruct_displacement(frames[r].l1, frames[r].l2, sc.laser_separation);
    const auto [T, M] = reconstruct_forces(frames[r].eps1, frames[r].eps2, sc.d1, sc.d2, c);
    out.row(static_cast<Eigen::Index>(r)) << u, phi, T, M;
  }
  return out;
}

/// Harmonics of the exact interface state over n periods (deflection mm,
/// rotation rad, shear kN, moment kN mm), bypassing lasers, gauges, noise and
/// filter. The rig is driven exactly as by measure_window.
inline HarmonicVector true_interface_harmonics(VirtualRig& rig, const Eigen::MatrixXcd& V, const SampledFrequency& sf,
                                               int n, int n_harmonics) {
  if (n < 1) throw std::invalid_argument("window needs at least one period");
  const long first = rig.step_index() + 1;
  const long total = static_cast<long>(n) * sf.period_samples;
  Eigen::MatrixXd x(total, 4);
  for (long r = 0; r < total; ++r) {
    rig.step(voltage_at(V, sf, rig.step_index() + 1));
    const Eigen::Vector2d u = rig.interface_displacement();
    const Eigen::Vector2d f = rig.interface_force();
    x.row(r) << u(0), u(1), f(0), -f(1);
  }
  return extract_harmonics(x, first, sf, n, n_harmonics, interface_channel_names());
}

}  // namespace hybridtest::rig
