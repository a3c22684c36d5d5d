// hybridtest: command-line front end for the cantilever hybrid-test model.
//
//   hybridtest modes      modal report and interface-placement warnings
//   hybridtest stability  delay roots, root locus and tau-alpha boundary
//   hybridtest sweep      harmonic-balance sweeps on the virtual rig
//   hybridtest verify     acceptance criteria

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "hybridtest/acceptance.hpp"
#include "hybridtest/config.hpp"
#include "hybridtest/experiment.hpp"
#include "hybridtest/plot_scripts.hpp"

namespace fs = std::filesystem;
using namespace hybridtest;
namespace plot_scripts = hybridtest::cli::plot_scripts;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<double> damping_scales;
  bool ideal_rig = false;
  std::optional<int> repeat;
  std::string criteria;
};

cli::RunConfig resolve(const Options& o) {
  auto c = o.config.empty() ? cli::RunConfig{} : cli::load_config(o.config);
  if (o.seed) c.rig.noise.seed = *o.seed;
  if (o.out) c.output.directory = *o.out;
  if (!o.damping_scales.empty()) c.experiment.damping_scales = o.damping_scales;
  if (o.ideal_rig) c.experiment.ideal_rig = true;
  if (o.repeat) c.experiment.repeat = *o.repeat;
  c.validate();
  return c;
}

fs::path prepare_output(const cli::RunConfig& c) {
  const fs::path dir(c.output.directory);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json", std::ios::binary) << cli::dump(c);
  return dir;
}

void write_table(const csv::Table& t, const fs::path& path) {
  t.write(path.string());
  std::cout << "wrote " << path.string() << " (" << t.size() << " rows)\n";
}

int cmd_modes(const cli::RunConfig& c) {
  const auto dir = prepare_output(c);
  const auto r = cli::modes_report(c);
  std::cout << fmt::format("interface at {:.1f} mm, physical substructure {:.1f} mm\n", r.interface_position,
                           r.physical_length);
  std::cout << "  mode   monolithic [Hz]   damping [%]   analytic [Hz]\n";
  for (std::size_t i = 0; i < r.monolithic.size() && static_cast<int>(i) < c.modes.n_modes; ++i) {
    std::cout << fmt::format("  {:>4}   {:>15.4f}   {:>11.4f}   {:>13.4f}\n", i + 1, r.monolithic[i].frequency.hz(),
                             100 * r.monolithic[i].damping_ratio,
                             i < r.analytic.size() ? r.analytic[i].hz() : std::nan(""));
  }
  auto show = [](const char* name, const std::vector<Frequency>& f) {
    std::cout << "  " << name << " clamped-interface modes [Hz]:";
    for (const auto& x : f) std::cout << fmt::format(" {:.2f}", x.hz());
    std::cout << "\n";
  };
  show("NS", r.numerical_clamped);
  show("PS", r.physical_clamped);
  std::cout << fmt::format("  operating band {:.1f}-{:.1f} Hz drives mode {}", c.modes.band_low.hz(),
                           c.modes.band_high.hz(), r.target_mode + 1);
  if (!r.target_nodes.empty()) {
    std::cout << ", nodes at";
    for (double x : r.target_nodes) std::cout << fmt::format(" {:.1f}", x);
    std::cout << " mm";
  }
  std::cout << "\n";
  for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
  write_table(cli::modes_table(r), dir / "modes.csv");
  return 0;
}

int cmd_stability(const cli::RunConfig& c) {
  const auto dir = prepare_output(c);
  const auto s = cli::run_stability(c);
  for (const auto& line : s.log) std::cout << "note: " << line << "\n";
  write_table(s.roots, dir / "roots.csv");
  write_table(s.locus, dir / "locus.csv");
  write_table(s.boundary, dir / "boundary.csv");
  for (std::size_t i = 0; i < s.boundary.size(); ++i) {
    if (std::abs(s.boundary.value(i, "alpha") - c.stability.alpha) > 1e-9) continue;
    std::cout << fmt::format("alpha {:.3f}, cutoff {} kHz: tau_crit {:.4f} ms ({})\n", c.stability.alpha,
                             s.boundary.text(i, "cutoff"), s.boundary.value(i, "tau_crit"),
                             s.boundary.text(i, "piece"));
  }
  if (c.output.plot_scripts) {
    plot_scripts::write((dir / "plot_stability.py").string(), plot_scripts::stability());
    std::cout << "wrote " << (dir / "plot_stability.py").string() << "\n";
  }
  return 0;
}

int cmd_sweep(const cli::RunConfig& c) {
  const auto dir = prepare_output(c);
  const double force = cli::forcing_amplitude(c);
  std::cout << fmt::format("forcing amplitude {:.6e} kN\n", force);
  std::vector<cli::SweepRun> runs;
  int aborted = 0;
  for (double scale : c.experiment.damping_scales) {
    for (int i = 0; i < c.experiment.repeat; ++i) {
      const cli::SweepSpec spec{scale, c.rig.noise.seed + static_cast<std::uint64_t>(i), c.experiment.ideal_rig};
      auto run = cli::run_sweep(c, spec, force);
      std::cout << fmt::format("{}: {} points, mean {:.3f} iterations, {} not converged", spec.label(),
                               run.records.size(), run.mean_iterations(), run.non_converged());
      if (!run.records.empty()) {
        const auto& pk = run.records[run.peak_index()];
        std::cout << fmt::format(", peak |u| {:.4f} mm at {:.3f} Hz", std::abs(pk.measured.at("deflection", 1)),
                                 pk.omega.hz());
        std::cout << fmt::format("; mains equivalent {:.2e} mm raw, {:.2e} mm after averaging", run.mains.raw,
                                 run.mains.averaged);
      }
      std::cout << "\n";
      for (const auto& r : run.records) {
        if (!r.converged) {
          std::cout << fmt::format("  NC at {:.3f} Hz: residual {:.3e} mm after {} iterations\n", r.omega.hz(),
                                   r.residual_norm, r.iterations);
        }
      }
      if (!run.failure.empty()) {
        ++aborted;
        std::cout << "  sweep aborted: " << run.failure << "\n";
      }
      runs.push_back(std::move(run));
    }
  }
  write_table(cli::sweep_table(runs), dir / "sweep.csv");
  write_table(cli::summary_table(runs), dir / "summary.csv");
  if (c.output.plot_scripts) {
    plot_scripts::write((dir / "plot_sweep.py").string(), plot_scripts::sweep());
    std::cout << "wrote " << (dir / "plot_sweep.py").string() << "\n";
  }
  return aborted == 0 ? 0 : 1;
}

int cmd_verify(const cli::RunConfig& c, const std::string& criteria) {
  const auto results = acceptance::run(c, criteria, std::cout);
  for (const auto& r : results) {
    if (!r.passed) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid-test model of a cantilever split into numerical and physical substructures"};
  app.require_subcommand(1);
  Options o;

  auto* modes = app.add_subcommand("modes", "modal report and interface-placement warnings");
  auto* stab = app.add_subcommand("stability", "delay stability roots, locus and boundary");
  auto* sweep = app.add_subcommand("sweep", "harmonic-balance frequency sweep on the virtual rig");
  auto* verify = app.add_subcommand("verify", "run acceptance criteria");

  for (auto* sub : {modes, stab, sweep, verify}) {
    sub->add_option("--config", o.config, "JSON configuration file (defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
  }
  for (auto* sub : {sweep, verify}) {
    sub->add_option("--seed", o.seed, "noise seed (repeats use seed, seed+1, ...)");
  }
  sweep->add_option("--damping-scale", o.damping_scales, "physical-side damping scale; repeat for several")
      ->check(CLI::PositiveNumber);
  sweep->add_flag("--ideal-rig", o.ideal_rig, "noise-free, lag-free rig without gauge filter");
  sweep->add_option("--repeat", o.repeat, "number of seeds per damping scale")->check(CLI::PositiveNumber);
  verify->add_option("--criteria", o.criteria,
                     "comma-separated ids, names or groups (modal, stability, coupling, noise, determinism)");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto c = resolve(o);
    if (*modes) return cmd_modes(c);
    if (*stab) return cmd_stability(c);
    if (*sweep) return cmd_sweep(c);
    return cmd_verify(c, o.criteria);
  } catch (const cli::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
