#pragma once

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridtest/beam_fe.hpp"
#include "hybridtest/coupler.hpp"
#include "hybridtest/stability.hpp"
#include "hybridtest/virtual_rig.hpp"

namespace hybridtest::cli {

using json = nlohmann::ordered_json;

/// Raised with every problem found in a configuration, one per line.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> errors)
      : std::invalid_argument(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errors) {
    std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  - " + e;
    return msg;
  }
  std::vector<std::string> errors_;
};

struct BeamSection {
  double E = 217.0;       ///< kg/(ms^2 mm)
  double rho = 8.21e-6;   ///< kg/mm^3
  double b = 25.4;        ///< mm
  double h = 1.0;         ///< mm
  double L = 530.0;       ///< mm
  double zeta_m = 0.0009; ///< 1/ms
  double zeta_k = 0.07;   ///< ms

  fe::BeamProperties properties() const { return fe::BeamProperties(E, rho, b, h, L, zeta_m, zeta_k); }
};

/// Everything on the rig except the physical beam model, which is built from
/// the partition at run time.
struct RigSection {
  double dt = 0.2;
  rig::ClampConfig clamp;
  std::array<rig::ActuatorConfig, 2> actuators;
  rig::SensorConfig sensors;
  rig::NoiseConfig noise;
  rig::FilterConfig filter;
};

struct ForcingSection {
  double amplitude = 0.0;               ///< kN at the interface deflection DOF; 0 calibrates
  double target_peak = 1.0;             ///< mm, monolithic interface peak used by the calibration
  double reference_damping_scale = 3.0; ///< physical-side damping scale the calibration is done on
};

struct ExperimentSection {
  std::vector<double> damping_scales{3.0};
  int repeat = 1;
  bool ideal_rig = false;
};

struct ModesSection {
  int n_modes = 3;
  Frequency band_low = Frequency::from_hz(16.0);
  Frequency band_high = Frequency::from_hz(19.0);
  int max_harmonic = 2;          ///< excitation harmonics checked against clamped-interface modes
  double harmonic_margin = 0.10; ///< relative widening of the band for harmonic checks
  double node_clearance = 50.0;  ///< mm between the interface and a node of the target mode
};

struct StabilitySection {
  int n_elements = 60;
  double alpha = 0.5;  ///< interface position as a fraction of the length, for roots and locus
  std::vector<double> root_delays{0.0, 1.2, 1.75, 2.3};  ///< ms
  stability::Box box{-4.0, 4.0, 0.0, 3.0};               ///< rad/ms and kHz
  double locus_tau_min = 0.05;
  double locus_tau_max = 2.5;
  int locus_steps = 50;
  std::vector<double> cutoffs_khz{0.5, 0.33, 0.25};
  std::vector<double> boundary_alphas;  ///< empty: every interior node
  double tau_max = 3.0;                 ///< ms
};

struct OutputSection {
  std::string directory = "out";
  bool plot_scripts = true;
};

struct RunConfig {
  BeamSection beam;
  int n_elements = 53;
  double interface_position = 170.0;  ///< mm from the clamp
  RigSection rig;
  coupler::CouplerConfig coupler;
  ForcingSection forcing;
  ExperimentSection experiment;
  ModesSection modes;
  StabilitySection stability;
  OutputSection output;

  std::vector<std::string> validation_errors() const;
  void validate() const {
    auto e = validation_errors();
    if (!e.empty()) throw ConfigError(std::move(e));
  }
};

namespace detail {

inline void check_positive(std::vector<std::string>& e, const char* what, double v) {
  if (!(v > 0)) e.push_back(std::string(what) + " must be positive");
}

}  // namespace detail

inline std::vector<std::string> RunConfig::validation_errors() const {
  std::vector<std::string> e;
  detail::check_positive(e, "beam.E", beam.E);
  detail::check_positive(e, "beam.rho", beam.rho);
  detail::check_positive(e, "beam.b", beam.b);
  detail::check_positive(e, "beam.h", beam.h);
  detail::check_positive(e, "beam.L", beam.L);
  if (!(beam.zeta_m >= 0) || !(beam.zeta_k >= 0)) e.push_back("beam damping coefficients must be non-negative");
  if (n_elements < 4) e.push_back("mesh.n_elements must be at least 4");

  bool partition_ok = false;
  if (!(interface_position > 0 && interface_position < beam.L)) {
    e.push_back("partition.interface_position must lie strictly inside the beam");
  } else if (n_elements >= 4 && beam.L > 0) {
    const double pitch = beam.L / n_elements;
    const double node = std::round(interface_position / pitch);
    if (node < 1 || node > n_elements - 1) {
      e.push_back("partition.interface_position snaps to an end node");
    } else if (std::abs(node * pitch - interface_position) > 1e-6 * beam.L) {
      e.push_back("partition.interface_position (" + std::to_string(interface_position) +
                  " mm) is not on a node of the " + std::to_string(n_elements) + "-element mesh");
    } else {
      partition_ok = true;
    }
  }

  // The rig checks need a physical beam; a nominal one suffices for the
  // ones that depend on its length.
  if (partition_ok && beam.E > 0 && beam.rho > 0 && beam.b > 0 && beam.h > 0) {
    const double lp = beam.L - interface_position;
    rig::RigConfig rc{fe::assemble_mesh(beam.properties().with_length(lp), fe::uniform_mesh(lp, 4),
                                        fe::BoundaryCondition::free_free()),
                      rig.clamp, rig.actuators, rig.sensors, rig.noise, rig.filter, rig.dt};
    for (const auto& x : rc.validation_errors()) e.push_back("rig: " + x);
  }
  for (const auto& x : coupler.validation_errors()) e.push_back("coupler: " + x);

  if (!(forcing.amplitude >= 0)) e.push_back("forcing.amplitude must be non-negative (0 calibrates)");
  if (forcing.amplitude == 0) {
    detail::check_positive(e, "forcing.target_peak", forcing.target_peak);
    detail::check_positive(e, "forcing.reference_damping_scale", forcing.reference_damping_scale);
  }
  if (experiment.damping_scales.empty()) e.push_back("experiment.damping_scales must not be empty");
  for (double s : experiment.damping_scales) {
    if (!(s > 0)) e.push_back("experiment.damping_scales entries must be positive");
  }
  if (experiment.repeat < 1) e.push_back("experiment.repeat must be at least 1");

  if (modes.n_modes < 1) e.push_back("modes.n_modes must be at least 1");
  if (!(modes.band_low.khz() > 0 && modes.band_high > modes.band_low)) {
    e.push_back("modes operating band must be positive and ascending");
  }
  if (modes.max_harmonic < 1) e.push_back("modes.max_harmonic must be at least 1");
  if (!(modes.harmonic_margin >= 0)) e.push_back("modes.harmonic_margin must be non-negative");
  if (!(modes.node_clearance >= 0)) e.push_back("modes.node_clearance must be non-negative");

  if (stability.n_elements < 4) e.push_back("stability.n_elements must be at least 4");
  if (!(stability.alpha > 0 && stability.alpha < 1)) e.push_back("stability.alpha must lie in (0, 1)");
  for (double t : stability.root_delays) {
    if (!(t >= 0)) e.push_back("stability.root_delays entries must be non-negative");
  }
  const auto& bx = stability.box;
  if (!(bx.delta_max > bx.delta_min) || !(bx.f_max > bx.f_min)) e.push_back("stability.box must be non-empty");
  if (!(stability.locus_tau_min > 0 && stability.locus_tau_max > stability.locus_tau_min)) {
    e.push_back("stability locus delay range must be positive and ascending");
  }
  if (stability.locus_steps < 2) e.push_back("stability.locus_steps must be at least 2");
  if (stability.cutoffs_khz.empty()) e.push_back("stability.cutoffs_khz must not be empty");
  for (double f : stability.cutoffs_khz) {
    if (!(f > 0)) e.push_back("stability.cutoffs_khz entries must be positive");
  }
  for (double a : stability.boundary_alphas) {
    if (!(a > 0 && a < 1)) e.push_back("stability.boundary_alphas entries must lie in (0, 1)");
  }
  detail::check_positive(e, "stability.tau_max", stability.tau_max);
  if (output.directory.empty()) e.push_back("output.directory must not be empty");
  return e;
}

// ---------------------------------------------------------------------------
// JSON mapping. Frequencies are written in Hz (kHz for the stability cut-offs,
// whose natural unit is the inverse of a millisecond delay).

namespace detail {

/// Reads optional keys of one JSON object, collecting type errors and
/// unknown keys instead of stopping at the first.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(where("") + "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      errors_.push_back(where(key) + "has the wrong type (" + std::string(j_.at(key).type_name()) + ")");
    }
  }

  void get_hz(const char* key, Frequency& out) {
    double hz = out.hz();
    get(key, hz);
    out = Frequency::from_hz(hz);
  }

  /// Sub-object at `key`, or a null JSON value (which reads nothing) if absent.
  Reader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    if (!j_.is_object() || !j_.contains(key)) return Reader(empty, path_ + key + ".", errors_);
    return Reader(j_.at(key), path_ + key + ".", errors_);
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.is_object() && j_.contains(key);
  }
  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string where(const std::string& key) const { return path_ + key + ": "; }
  std::vector<std::string>& errors() { return errors_; }

  ~Reader() {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) errors_.push_back(where(k) + "unknown key");
    }
  }

  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;
  Reader(Reader&&) = default;

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const RunConfig& c) {
  json j;
  const auto& b = c.beam;
  j["beam"] = {{"E", b.E}, {"rho", b.rho}, {"b", b.b}, {"h", b.h}, {"L", b.L}, {"zeta_m", b.zeta_m}, {"zeta_k", b.zeta_k}};
  j["mesh"] = {{"n_elements", c.n_elements}};
  j["partition"] = {{"interface_position", c.interface_position}};

  const auto& r = c.rig;
  json acts = json::array();
  for (const auto& a : r.actuators) acts.push_back({{"gain", a.gain}, {"lag", a.lag}, {"delay", a.delay}});
  j["rig"] = {
      {"dt", r.dt},
      {"clamp",
       {{"mass", r.clamp.mass},
        {"rotary_inertia", r.clamp.rotary_inertia},
        {"k_translation", r.clamp.k_translation},
        {"k_rotation", r.clamp.k_rotation},
        {"damping_ratio", r.clamp.damping_ratio},
        {"lever_arms", r.clamp.lever_arms}}},
      {"actuators", acts},
      {"sensors",
       {{"laser_separation", r.sensors.laser_separation},
        {"d1", r.sensors.d1},
        {"d2", r.sensors.d2},
        {"c", r.sensors.c},
        {"gauge_model", r.sensors.model == rig::GaugeModel::Curvature ? "curvature" : "consistent"}}},
      {"noise",
       {{"mains_amplitude", r.noise.mains_amplitude},
        {"mains_frequency_hz", r.noise.mains_frequency.hz()},
        {"mains_phase", r.noise.mains_phase ? json(*r.noise.mains_phase) : json(nullptr)},
        {"mains_phase_offset", r.noise.mains_phase_offset},
        {"white_sigma", r.noise.white_sigma},
        {"seed", r.noise.seed}}},
      {"filter",
       {{"enabled", r.filter.enabled}, {"cutoff_hz", r.filter.cutoff.hz()}, {"damping", r.filter.damping}}}};

  const auto& k = c.coupler;
  j["coupler"] = {{"f_start_hz", k.f_start.hz()},
                  {"f_stop_hz", k.f_stop.hz()},
                  {"f_step_hz", k.f_step.hz()},
                  {"n_periods", k.n_periods},
                  {"transient_tol", k.transient_tol},
                  {"convergence_tol", k.convergence_tol},
                  {"max_iter", k.max_iter},
                  {"max_wait_blocks", k.max_wait_blocks},
                  {"n_harmonics", k.n_harmonics},
                  {"compensation_angle", k.compensation_angle},
                  {"residual_form", coupler::to_string(k.form)},
                  {"initial_voltage", k.initial_voltage},
                  {"broyden",
                   {{"probe_initial", k.broyden.probe_initial},
                    {"probe_volts", k.broyden.probe_volts},
                    {"step_damping", k.broyden.step_damping},
                    {"max_halvings", k.broyden.max_halvings},
                    {"secant_floor", k.broyden.secant_floor}}}};
  j["forcing"] = {{"amplitude", c.forcing.amplitude},
                  {"target_peak", c.forcing.target_peak},
                  {"reference_damping_scale", c.forcing.reference_damping_scale}};
  j["experiment"] = {{"damping_scales", c.experiment.damping_scales},
                     {"repeat", c.experiment.repeat},
                     {"ideal_rig", c.experiment.ideal_rig}};
  j["modes"] = {{"n_modes", c.modes.n_modes},
                {"band_low_hz", c.modes.band_low.hz()},
                {"band_high_hz", c.modes.band_high.hz()},
                {"max_harmonic", c.modes.max_harmonic},
                {"harmonic_margin", c.modes.harmonic_margin},
                {"node_clearance", c.modes.node_clearance}};
  const auto& s = c.stability;
  j["stability"] = {{"n_elements", s.n_elements},
                    {"alpha", s.alpha},
                    {"root_delays", s.root_delays},
                    {"box",
                     {{"delta_min", s.box.delta_min},
                      {"delta_max", s.box.delta_max},
                      {"f_min_khz", s.box.f_min},
                      {"f_max_khz", s.box.f_max}}},
                    {"locus_tau_min", s.locus_tau_min},
                    {"locus_tau_max", s.locus_tau_max},
                    {"locus_steps", s.locus_steps},
                    {"cutoffs_khz", s.cutoffs_khz},
                    {"boundary_alphas", s.boundary_alphas},
                    {"tau_max", s.tau_max}};
  j["output"] = {{"directory", c.output.directory}, {"plot_scripts", c.output.plot_scripts}};
  return j;
}

/// Parse a configuration on top of the defaults. Missing keys keep their
/// default; type errors, unknown keys and invariant violations are all
/// reported together in one ConfigError.
inline RunConfig from_json(const json& j) {
  RunConfig c;
  std::vector<std::string> errors;
  {
    detail::Reader root(j, "", errors);
    {
      auto b = root.child("beam");
      b.get("E", c.beam.E);
      b.get("rho", c.beam.rho);
      b.get("b", c.beam.b);
      b.get("h", c.beam.h);
      b.get("L", c.beam.L);
      b.get("zeta_m", c.beam.zeta_m);
      b.get("zeta_k", c.beam.zeta_k);
    }
    root.child("mesh").get("n_elements", c.n_elements);
    root.child("partition").get("interface_position", c.interface_position);
    {
      auto r = root.child("rig");
      r.get("dt", c.rig.dt);
      {
        auto cl = r.child("clamp");
        cl.get("mass", c.rig.clamp.mass);
        cl.get("rotary_inertia", c.rig.clamp.rotary_inertia);
        cl.get("k_translation", c.rig.clamp.k_translation);
        cl.get("k_rotation", c.rig.clamp.k_rotation);
        cl.get("damping_ratio", c.rig.clamp.damping_ratio);
        cl.get("lever_arms", c.rig.clamp.lever_arms);
      }
      if (r.has("actuators")) {
        const json& arr = r.raw("actuators");
        if (!arr.is_array() || arr.size() != 2) {
          errors.push_back("rig.actuators: expected an array of two actuators");
        } else {
          for (std::size_t i = 0; i < 2; ++i) {
            detail::Reader a(arr[i], "rig.actuators[" + std::to_string(i) + "].", errors);
            a.get("gain", c.rig.actuators[i].gain);
            a.get("lag", c.rig.actuators[i].lag);
            a.get("delay", c.rig.actuators[i].delay);
          }
        }
      }
      {
        auto s = r.child("sensors");
        s.get("laser_separation", c.rig.sensors.laser_separation);
        s.get("d1", c.rig.sensors.d1);
        s.get("d2", c.rig.sensors.d2);
        s.get("c", c.rig.sensors.c);
        std::string model = c.rig.sensors.model == rig::GaugeModel::Curvature ? "curvature" : "consistent";
        s.get("gauge_model", model);
        if (model == "consistent") {
          c.rig.sensors.model = rig::GaugeModel::Consistent;
        } else if (model == "curvature") {
          c.rig.sensors.model = rig::GaugeModel::Curvature;
        } else {
          errors.push_back(s.where("gauge_model") + "expected \"consistent\" or \"curvature\", got \"" + model + "\"");
        }
      }
      {
        auto n = r.child("noise");
        n.get("mains_amplitude", c.rig.noise.mains_amplitude);
        n.get_hz("mains_frequency_hz", c.rig.noise.mains_frequency);
        if (n.has("mains_phase")) {
          const json& p = n.raw("mains_phase");
          if (p.is_null()) {
            c.rig.noise.mains_phase.reset();
          } else if (p.is_number()) {
            c.rig.noise.mains_phase = p.get<double>();
          } else {
            errors.push_back(n.where("mains_phase") + "expected a number or null");
          }
        }
        n.get("mains_phase_offset", c.rig.noise.mains_phase_offset);
        n.get("white_sigma", c.rig.noise.white_sigma);
        n.get("seed", c.rig.noise.seed);
      }
      {
        auto f = r.child("filter");
        f.get("enabled", c.rig.filter.enabled);
        f.get_hz("cutoff_hz", c.rig.filter.cutoff);
        f.get("damping", c.rig.filter.damping);
      }
    }
    {
      auto k = root.child("coupler");
      k.get_hz("f_start_hz", c.coupler.f_start);
      k.get_hz("f_stop_hz", c.coupler.f_stop);
      k.get_hz("f_step_hz", c.coupler.f_step);
      k.get("n_periods", c.coupler.n_periods);
      k.get("transient_tol", c.coupler.transient_tol);
      k.get("convergence_tol", c.coupler.convergence_tol);
      k.get("max_iter", c.coupler.max_iter);
      k.get("max_wait_blocks", c.coupler.max_wait_blocks);
      k.get("n_harmonics", c.coupler.n_harmonics);
      k.get("compensation_angle", c.coupler.compensation_angle);
      std::string form = coupler::to_string(c.coupler.form);
      k.get("residual_form", form);
      if (form == "displacement") {
        c.coupler.form = coupler::ResidualForm::Displacement;
      } else if (form == "force") {
        c.coupler.form = coupler::ResidualForm::Force;
      } else {
        errors.push_back(k.where("residual_form") + "expected \"displacement\" or \"force\", got \"" + form + "\"");
      }
      k.get("initial_voltage", c.coupler.initial_voltage);
      auto br = k.child("broyden");
      br.get("probe_initial", c.coupler.broyden.probe_initial);
      br.get("probe_volts", c.coupler.broyden.probe_volts);
      br.get("step_damping", c.coupler.broyden.step_damping);
      br.get("max_halvings", c.coupler.broyden.max_halvings);
      br.get("secant_floor", c.coupler.broyden.secant_floor);
    }
    {
      auto f = root.child("forcing");
      f.get("amplitude", c.forcing.amplitude);
      f.get("target_peak", c.forcing.target_peak);
      f.get("reference_damping_scale", c.forcing.reference_damping_scale);
    }
    {
      auto x = root.child("experiment");
      x.get("damping_scales", c.experiment.damping_scales);
      x.get("repeat", c.experiment.repeat);
      x.get("ideal_rig", c.experiment.ideal_rig);
    }
    {
      auto m = root.child("modes");
      m.get("n_modes", c.modes.n_modes);
      m.get_hz("band_low_hz", c.modes.band_low);
      m.get_hz("band_high_hz", c.modes.band_high);
      m.get("max_harmonic", c.modes.max_harmonic);
      m.get("harmonic_margin", c.modes.harmonic_margin);
      m.get("node_clearance", c.modes.node_clearance);
    }
    {
      auto s = root.child("stability");
      s.get("n_elements", c.stability.n_elements);
      s.get("alpha", c.stability.alpha);
      s.get("root_delays", c.stability.root_delays);
      {
        auto bx = s.child("box");
        bx.get("delta_min", c.stability.box.delta_min);
        bx.get("delta_max", c.stability.box.delta_max);
        bx.get("f_min_khz", c.stability.box.f_min);
        bx.get("f_max_khz", c.stability.box.f_max);
      }
      s.get("locus_tau_min", c.stability.locus_tau_min);
      s.get("locus_tau_max", c.stability.locus_tau_max);
      s.get("locus_steps", c.stability.locus_steps);
      s.get("cutoffs_khz", c.stability.cutoffs_khz);
      s.get("boundary_alphas", c.stability.boundary_alphas);
      s.get("tau_max", c.stability.tau_max);
    }
    {
      auto o = root.child("output");
      o.get("directory", c.output.directory);
      o.get("plot_scripts", c.output.plot_scripts);
    }
  }
  if (errors.empty()) {
    errors = c.validation_errors();
  } else {
    for (auto& e : c.validation_errors()) errors.push_back(std::move(e));
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError({path + ": " + e.what()});
  }
  return from_json(j);
}

inline std::string dump(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace hybridtest::cli
