#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "hybridtest/config.hpp"
#include "hybridtest/coupler.hpp"
#include "hybridtest/csv.hpp"
#include "hybridtest/stability.hpp"
#include "hybridtest/substructuring.hpp"
#include "hybridtest/virtual_rig.hpp"

namespace hybridtest::cli {

using cplx = std::complex<double>;

struct Structure {
  fe::FEModel model;
  int interface_node;
  substructure::Partition partition;
};

/// Monolithic model and its partition, with the beam's Rayleigh damping
/// multiplied by `damping_scale`.
inline Structure build_structure(const RunConfig& c, double damping_scale = 1.0) {
  auto model = fe::assemble(c.beam.properties().with_damping_scale(damping_scale), c.n_elements);
  const int node = substructure::nearest_node(model, c.interface_position);
  auto part = substructure::partition(model, node);
  return {std::move(model), node, std::move(part)};
}

// ---------------------------------------------------------------------------
// modes

struct ModesReport {
  double interface_position = 0;  ///< mm from the clamp
  double physical_length = 0;     ///< mm
  std::vector<fe::Mode> monolithic;
  std::vector<Frequency> analytic;
  std::vector<Frequency> numerical_clamped;
  std::vector<Frequency> physical_clamped;
  int target_mode = -1;                    ///< index into `monolithic`
  std::vector<double> target_nodes;        ///< node positions of the target mode, mm from the clamp
  std::vector<std::string> warnings;
};

namespace detail {

/// Interior zero crossings of the deflection of the k-th undamped mode.
inline std::vector<double> mode_nodes(const fe::FEModel& m, int k) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(m.K, m.M);
  if (es.info() != Eigen::Success) throw NumericalFailure("undamped modal solve failed");
  const Eigen::VectorXd phi = es.eigenvectors().col(k);
  std::vector<double> out;
  double prev_x = m.node_coords[0], prev_w = 0.0;
  for (int n = 0; n < m.n_nodes(); ++n) {
    const int d = m.dof(n, 0);
    if (d < 0) continue;
    const double x = m.node_coords[n], w = phi(d);
    if (n > 0 && prev_w != 0.0 && (w > 0) != (prev_w > 0)) out.push_back(prev_x + (x - prev_x) * prev_w / (prev_w - w));
    prev_x = x;
    prev_w = w;
  }
  return out;
}

inline std::vector<Frequency> clamped_modes_up_to(const substructure::SubModel& side, Frequency f_max) {
  const int nb = static_cast<int>(side.bulk.size());
  std::vector<Frequency> out;
  for (const auto& f : substructure::clamped_interface_modes(side, std::min(nb, 12))) {
    if (f > f_max && !out.empty()) break;
    out.push_back(f);
  }
  return out;
}

}  // namespace detail

inline ModesReport modes_report(const RunConfig& c) {
  c.validate();
  const auto st = build_structure(c);
  const auto& p = st.partition;
  const auto& mc = c.modes;
  ModesReport r;
  r.interface_position = p.interface_position();
  r.physical_length = p.physical.length();
  const int n_report = std::max(mc.n_modes, 1);
  r.monolithic = fe::natural_frequencies(st.model, std::min(std::max(n_report, 6), st.model.size()));
  r.analytic = fe::analytic_cantilever_frequencies(st.model.props, std::min<int>(r.monolithic.size(), 10));

  const double margin = 1.0 + mc.harmonic_margin;
  const Frequency f_top = Frequency::from_khz(mc.max_harmonic * mc.band_high.khz() * margin * 4.0);
  r.numerical_clamped = detail::clamped_modes_up_to(p.numerical, f_top);
  r.physical_clamped = detail::clamped_modes_up_to(p.physical, f_top);

  // Mode driven in the operating band (the closest one if none falls inside).
  const double centre = 0.5 * (mc.band_low.khz() + mc.band_high.khz());
  double best = 1e300;
  for (std::size_t i = 0; i < r.monolithic.size(); ++i) {
    const double f = r.monolithic[i].frequency.khz();
    const double dist = (f >= mc.band_low.khz() && f <= mc.band_high.khz()) ? 0.0 : std::abs(f - centre);
    if (dist < best) best = dist, r.target_mode = static_cast<int>(i);
  }
  r.target_nodes = detail::mode_nodes(st.model, r.target_mode);

  const double L = st.model.length();
  for (double x : r.target_nodes) {
    const double gap = std::abs(x - r.interface_position);
    if (gap < mc.node_clearance) {
      r.warnings.push_back(fmt::format(
          "interface at {:.1f} mm is {:.1f} mm from a node of mode {} ({:.1f} mm from the free end); "
          "interface motion at resonance will be small",
          r.interface_position, gap, r.target_mode + 1, L - x));
    }
  }
  auto check = [&](const char* side, const std::vector<Frequency>& modes) {
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const double f = modes[i].hz();
      if (f >= mc.band_low.hz() && f <= mc.band_high.hz()) {
        r.warnings.push_back(fmt::format(
            "{} clamped-interface mode {} at {:.2f} Hz lies inside the operating band {:.1f}-{:.1f} Hz; "
            "the hybrid structure has an anti-resonance there (PS length {:.0f} mm should be avoided)",
            side, i + 1, f, mc.band_low.hz(), mc.band_high.hz(), r.physical_length));
      }
      for (int k = 2; k <= mc.max_harmonic; ++k) {
        const double lo = k * mc.band_low.hz() / margin, hi = k * mc.band_high.hz() * margin;
        if (f >= lo && f <= hi) {
          r.warnings.push_back(fmt::format(
              "{} clamped-interface mode {} at {:.2f} Hz is close to harmonic {} of the operating band "
              "({:.1f}-{:.1f} Hz); weak rig nonlinearity can excite it",
              side, i + 1, f, k, k * mc.band_low.hz(), k * mc.band_high.hz()));
        }
      }
    }
  };
  check("NS", r.numerical_clamped);
  check("PS", r.physical_clamped);
  return r;
}

inline csv::Table modes_table(const ModesReport& r) {
  csv::Table t({{"structure", ""}, {"mode", ""}, {"frequency", "Hz"}, {"damping_ratio", ""}, {"analytic", "Hz"}});
  for (std::size_t i = 0; i < r.monolithic.size(); ++i) {
    t.row() << "monolithic" << static_cast<int>(i + 1) << r.monolithic[i].frequency.hz()
            << r.monolithic[i].damping_ratio << (i < r.analytic.size() ? r.analytic[i].hz() : std::nan(""));
  }
  for (std::size_t i = 0; i < r.numerical_clamped.size(); ++i) {
    t.row() << "ns_clamped" << static_cast<int>(i + 1) << r.numerical_clamped[i].hz() << std::nan("") << std::nan("");
  }
  for (std::size_t i = 0; i < r.physical_clamped.size(); ++i) {
    t.row() << "ps_clamped" << static_cast<int>(i + 1) << r.physical_clamped[i].hz() << std::nan("") << std::nan("");
  }
  return t;
}

// ---------------------------------------------------------------------------
// stability

struct StabilityOutputs {
  csv::Table roots{{{"tau", "ms"}, {"alpha", ""}, {"delta", "1/ms"}, {"frequency", "Hz"}, {"family", ""},
                    {"unstable", ""}}};
  csv::Table locus{{{"curve", ""}, {"family", ""}, {"tau", "ms"}, {"delta", "1/ms"}, {"frequency", "Hz"}}};
  csv::Table boundary{{{"cutoff", "kHz"}, {"alpha_requested", ""}, {"alpha", ""}, {"found", ""},
                       {"tau_crit", "ms"}, {"frequency", "Hz"}, {"delta", "1/ms"}, {"piece", ""},
                       {"tau_times_cutoff", ""}}};
  std::vector<std::string> log;
};

inline std::vector<double> boundary_alphas(const RunConfig& c) {
  if (!c.stability.boundary_alphas.empty()) return c.stability.boundary_alphas;
  std::vector<double> a;
  for (int n = 1; n < c.stability.n_elements; ++n) a.push_back(static_cast<double>(n) / c.stability.n_elements);
  return a;
}

inline StabilityOutputs run_stability(const RunConfig& c) {
  c.validate();
  const auto& sc = c.stability;
  const auto model = fe::assemble(c.beam.properties(), sc.n_elements);
  const stability::DelayCharacteristic ctx(model);
  StabilityOutputs out;

  for (double tau : sc.root_delays) {
    try {
      const auto search = stability::find_roots(ctx, sc.alpha, tau, sc.box);
      for (const auto& w : search.warnings) out.log.push_back(fmt::format("roots tau={} ms: {}", tau, w));
      for (const auto& r : search.roots) {
        out.roots.row() << tau << r.alpha << r.delta() << r.frequency().hz() << stability::to_string(r.family)
                        << (r.delta() > 0);
      }
    } catch (const std::exception& e) {
      out.log.push_back(fmt::format("roots tau={} ms failed: {}", tau, e.what()));
    }
  }

  std::vector<double> taus;
  for (int k = 0; k < sc.locus_steps; ++k) {
    taus.push_back(sc.locus_tau_min + (sc.locus_tau_max - sc.locus_tau_min) * k / (sc.locus_steps - 1));
  }
  try {
    const auto curves = stability::root_locus(ctx, sc.alpha, taus, sc.box);
    for (std::size_t i = 0; i < curves.size(); ++i) {
      for (const auto& p : curves[i].points) {
        out.locus.row() << static_cast<int>(i) << stability::to_string(curves[i].family) << p.tau << p.delta()
                        << p.frequency().hz();
      }
    }
  } catch (const std::exception& e) {
    out.log.push_back(fmt::format("root locus failed: {}", e.what()));
  }

  stability::CriticalDelayOptions opt;
  opt.tau_max = sc.tau_max;
  const auto alphas = boundary_alphas(c);
  for (double fc : sc.cutoffs_khz) {
    for (const auto& p : stability::stability_boundary(ctx, Frequency::from_khz(fc), alphas, opt)) {
      if (!p.error.empty()) {
        out.log.push_back(fmt::format("boundary alpha={} cutoff={} kHz failed: {}", p.alpha, fc, p.error));
        continue;
      }
      const auto& cd = p.critical;
      out.boundary.row() << fc << p.alpha << cd.alpha << cd.found << cd.tau << cd.frequency_khz() * 1e3
                         << cd.s.real() << (cd.found ? stability::to_string(cd.piece) : "none")
                         << cd.tau * fc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// sweeps

struct SweepSpec {
  double damping_scale = 3.0;
  std::uint64_t seed = 1;
  bool ideal = false;

  std::string label() const {
    return fmt::format("{}s{}_seed{}", ideal ? "ideal_" : "", csv::Table::number(damping_scale), seed);
  }
};

/// Gauge disturbance expressed as interface displacement through D_N.
struct MainsEquivalent {
  Frequency at;
  double raw = 0;       ///< mm, one disturbance amplitude
  double averaged = 0;  ///< mm, worst case after n-period averaging
};

inline MainsEquivalent mains_displacement_equivalent(const rig::RigConfig& rc, const Eigen::Matrix2cd& DN,
                                                     Frequency f, int n_periods) {
  const auto& nz = rc.noise;
  const auto& sc = rc.sensors;
  const cplx H = rig::Biquad::lowpass(rc.filter, rc.dt).response(nz.mains_frequency, rc.dt);
  const cplx e1 = H * nz.mains_amplitude;
  const cplx e2 = e1 * std::polar(1.0, nz.mains_phase_offset);
  const double c = rc.gauge_constant();
  const cplx slope = (e2 - e1) / (sc.d2 - sc.d1);
  const cplx T = c * slope, M = c * (e1 - sc.d1 * slope);
  const Eigen::Vector2cd x = DN.fullPivLu().solve(Eigen::Vector2cd(T, -M));
  const double raw = std::hypot(std::abs(x(0)), sc.laser_separation * std::abs(x(1)));
  const double rho = nz.mains_frequency.khz() / f.khz();
  double factor = 0.0;
  if (std::abs(rho - 1.0) > 1e-9) factor = rig::noise_bound_magnitude(1.0, rho, n_periods);
  return {f, raw, raw * factor};
}

struct SweepRun {
  SweepSpec spec;
  double force = 0;  ///< kN
  coupler::CouplerConfig coupler;
  rig::RigConfig rig;
  std::vector<coupler::SweepRecord> records;
  std::vector<Eigen::Vector2cd> reference;  ///< monolithic interface response at each snapped frequency
  MainsEquivalent mains;
  std::string failure;  ///< set when the sweep aborted

  std::size_t peak_index() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < records.size(); ++i) {
      if (std::abs(records[i].measured.at("deflection", 1)) > std::abs(records[best].measured.at("deflection", 1))) {
        best = i;
      }
    }
    return best;
  }
  double mean_iterations() const {
    if (records.empty()) return std::nan("");
    double s = 0;
    for (const auto& r : records) s += r.iterations;
    return s / static_cast<double>(records.size());
  }
  int non_converged() const {
    return static_cast<int>(std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.converged; }));
  }
};

inline double forcing_amplitude(const RunConfig& c) {
  if (c.forcing.amplitude > 0) return c.forcing.amplitude;
  const auto ns = build_structure(c);
  const auto ps = build_structure(c, c.forcing.reference_damping_scale);
  return coupler::calibrate_forcing(ns.partition.numerical, ps.partition.physical, c.coupler.frequencies(),
                                    c.forcing.target_peak);
}

/// Noise-free, lag-free, unfiltered rig: what remains is the clamp and shakers.
inline void make_ideal(rig::RigConfig& rc) {
  rc.noise.mains_amplitude = 0.0;
  rc.noise.white_sigma = 0.0;
  rc.filter.enabled = false;
  for (auto& a : rc.actuators) a.lag = 0.0, a.delay = 0.0;
}

inline rig::RigConfig rig_config(const RunConfig& c, const substructure::SubModel& physical, const SweepSpec& spec) {
  auto rc = rig::RigConfig::around(physical);
  rc.dt = c.rig.dt;
  rc.clamp = c.rig.clamp;
  rc.actuators = c.rig.actuators;
  rc.sensors = c.rig.sensors;
  rc.noise = c.rig.noise;
  rc.noise.seed = spec.seed;
  rc.filter = c.rig.filter;
  if (spec.ideal) make_ideal(rc);
  return rc;
}

inline coupler::CouplerConfig coupler_config(const RunConfig& c, const SweepSpec& spec) {
  auto cc = c.coupler;
  if (spec.ideal) cc.compensation_angle = 0.0;
  return cc;
}

/// A running hybrid test: the rig outlives the sweep so that callers can keep
/// measuring on it afterwards.
class SweepSession {
 public:
  SweepSession(const RunConfig& c, const SweepSpec& spec, std::optional<double> force = std::nullopt)
      : ns_((c.validate(), build_structure(c))),
        ps_(build_structure(c, spec.damping_scale)),
        run_{spec, force ? *force : forcing_amplitude(c), coupler_config(c, spec),
             rig_config(c, ps_.partition.physical, spec), {}, {}, {}, {}} {
    rig_.emplace(run_.rig);
    side_.emplace(coupler::NumericalSide{ns_.partition.numerical, run_.force});
    test_.emplace(*side_, *rig_, run_.coupler);
  }

  SweepSession(const SweepSession&) = delete;
  SweepSession& operator=(const SweepSession&) = delete;

  const SweepRun& run() {
    const auto freqs = run_.coupler.frequencies();
    try {
      run_.records = test_->sweep(freqs);
    } catch (const std::exception& e) {
      run_.failure = e.what();
    }
    for (const auto& r : run_.records) {
      run_.reference.push_back(coupler::reference_response(*side_, ps_.partition.physical, r.omega));
    }
    if (!run_.records.empty()) {
      const auto& pk = run_.records[run_.peak_index()];
      run_.mains = mains_displacement_equivalent(run_.rig, pk.DN[1], pk.omega, run_.coupler.n_periods);
    }
    return run_;
  }

  const SweepRun& result() const { return run_; }
  rig::VirtualRig& rig() { return *rig_; }
  const coupler::NumericalSide& numerical_side() const { return *side_; }
  const substructure::SubModel& physical() const { return ps_.partition.physical; }

 private:
  Structure ns_, ps_;
  SweepRun run_;
  std::optional<rig::VirtualRig> rig_;
  std::optional<coupler::NumericalSide> side_;
  std::optional<coupler::HybridTest> test_;
};

inline SweepRun run_sweep(const RunConfig& c, const SweepSpec& spec, std::optional<double> force = std::nullopt) {
  SweepSession s(c, spec, force);
  return s.run();
}

/// Displacement error with the rotation scaled by the laser separation, the
/// same metric as the residual norm.
inline double interface_error(const Eigen::Vector2cd& a, const Eigen::Vector2cd& b, double d_l) {
  return std::hypot(std::abs(a(0) - b(0)), d_l * std::abs(a(1) - b(1)));
}

inline csv::Table sweep_table(const std::vector<SweepRun>& runs) {
  csv::Table t({{"run", ""},           {"damping_scale", ""},   {"seed", ""},
                {"ideal_rig", ""},     {"frequency", "Hz"},     {"period_samples", ""},
                {"status", ""},        {"u_abs", "mm"},         {"u_phase", "rad"},
                {"phi_abs", "rad"},    {"shear_abs", "kN"},     {"moment_abs", "kN mm"},
                {"u_ref_abs", "mm"},   {"u_error", "mm"},       {"u_per_force", "mm/kN"},
                {"residual", "mm"},    {"iterations", ""},      {"probes", ""},
                {"blocks", ""},        {"delay_u", "ms"},       {"delay_phi", "ms"},
                {"delay_shear", "ms"}, {"delay_moment", "ms"},  {"amp_u", ""},
                {"amp_phi", ""},       {"amp_shear", ""},       {"amp_moment", ""},
                {"u2_abs", "mm"}});
  for (const auto& run : runs) {
    const double d_l = run.rig.sensors.laser_separation;
    for (std::size_t i = 0; i < run.records.size(); ++i) {
      const auto& r = run.records[i];
      const Eigen::Vector2cd U = coupler::measured_displacement(r.measured, 1);
      const auto& ref = run.reference[i];
      auto row = t.row();
      row << run.spec.label() << run.spec.damping_scale << static_cast<unsigned long long>(run.spec.seed)
          << run.spec.ideal << r.omega.hz() << r.period_samples << (r.converged ? "OK" : "NC") << std::abs(U(0))
          << std::arg(U(0)) << std::abs(U(1)) << std::abs(r.measured.at("shear", 1))
          << std::abs(r.measured.at("moment", 1)) << std::abs(ref(0)) << interface_error(U, ref, d_l)
          << std::abs(U(0)) / run.force << r.residual_norm << r.iterations << r.probes << r.blocks;
      for (const auto& s : r.sync) row << s.delay;
      for (const auto& s : r.sync) row << s.amplification;
      row << (r.measured.n_harmonics() >= 2 ? std::abs(r.measured.at("deflection", 2)) : std::nan(""));
    }
  }
  return t;
}

inline csv::Table summary_table(const std::vector<SweepRun>& runs) {
  csv::Table t({{"run", ""},
                {"damping_scale", ""},
                {"seed", ""},
                {"ideal_rig", ""},
                {"force", "kN"},
                {"points", ""},
                {"non_converged", ""},
                {"mean_iterations", ""},
                {"max_iterations", ""},
                {"peak_frequency", "Hz"},
                {"peak_u", "mm"},
                {"peak_u_per_force", "mm/kN"},
                {"peak_iterations", ""},
                {"ref_peak_u", "mm"},
                {"max_u_error", "mm"},
                {"mains_equiv_raw", "mm"},
                {"mains_equiv_averaged", "mm"},
                {"failure", ""}});
  for (const auto& run : runs) {
    const auto n = run.records.size();
    double ref_peak = 0, max_err = 0;
    int max_it = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ref_peak = std::max(ref_peak, std::abs(run.reference[i](0)));
      max_err = std::max(max_err, interface_error(coupler::measured_displacement(run.records[i].measured, 1),
                                                  run.reference[i], run.rig.sensors.laser_separation));
      max_it = std::max(max_it, run.records[i].iterations);
    }
    const double nan = std::nan("");
    const bool any = n > 0;
    const auto* pk = any ? &run.records[run.peak_index()] : nullptr;
    const double peak_u = any ? std::abs(pk->measured.at("deflection", 1)) : nan;
    std::string failure = run.failure.empty() ? "none" : "aborted";
    t.row() << run.spec.label() << run.spec.damping_scale << static_cast<unsigned long long>(run.spec.seed)
            << run.spec.ideal << run.force << static_cast<int>(n) << run.non_converged() << run.mean_iterations()
            << max_it << (any ? pk->omega.hz() : nan) << peak_u << peak_u / run.force
            << (any ? pk->iterations : 0) << ref_peak << max_err << run.mains.raw << run.mains.averaged << failure;
  }
  return t;
}

}  // namespace hybridtest::cli
