#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

namespace hybridtest::cli {

/// Matplotlib scripts written next to the CSV files they read. Each script
/// takes the output directory as its optional first argument (default: its
/// own directory) and saves PNGs there.
namespace plot_scripts {

inline constexpr const char* kPreamble = R"PY(#!/usr/bin/env python3
# Generated by hybridtest. Reads the CSV files in the output directory.
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

OUT = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))


def read(name):
    """Rows of a CSV file as dicts keyed by column name (units stripped)."""
    with open(os.path.join(OUT, name), newline="") as f:
        reader = csv.reader(f)
        header = [h.split("[")[0] for h in next(reader)]
        return [dict(zip(header, row)) for row in reader]


def num(x):
    return float(x)

)PY";

inline constexpr const char* kSweep = R"PY(
rows = read("sweep.csv")
runs = []
for r in rows:
    if r["run"] not in runs:
        runs.append(r["run"])

fig, (ax_frf, ax_it) = plt.subplots(2, 1, figsize=(7, 8), sharex=True)
for name in runs:
    pts = [r for r in rows if r["run"] == name]
    f = [num(r["frequency"]) for r in pts]
    line, = ax_frf.plot(f, [num(r["u_per_force"]) for r in pts], "o-", ms=3, label=name)
    nc = [r for r in pts if r["status"] == "NC"]
    if nc:
        ax_frf.plot([num(r["frequency"]) for r in nc], [num(r["u_per_force"]) for r in nc], "x",
                    color=line.get_color(), ms=8)
        for r in nc:
            ax_frf.annotate("NC", (num(r["frequency"]), num(r["u_per_force"])), fontsize=7)
    force = num(pts[0]["u_abs"]) / num(pts[0]["u_per_force"]) if num(pts[0]["u_per_force"]) else 1.0
    ax_frf.plot(f, [num(r["u_ref_abs"]) / force for r in pts], "--", color=line.get_color(), lw=0.8)
    ax_it.plot(f, [int(r["iterations"]) for r in pts], "s-", ms=3, color=line.get_color(), label=name)

ax_frf.set_ylabel("|u| / F  [mm/kN]")
ax_frf.set_title("Interface FRF (dashed: monolithic reference)")
ax_frf.legend(fontsize=7)
ax_it.set_xlabel("frequency [Hz]")
ax_it.set_ylabel("iterations")
fig.tight_layout()
fig.savefig(os.path.join(OUT, "sweep_frf.png"), dpi=150)

fig, ax = plt.subplots(figsize=(7, 4))
for name in runs:
    pts = [r for r in rows if r["run"] == name]
    ax.semilogy([num(r["frequency"]) for r in pts], [num(r["residual"]) for r in pts], "o-", ms=3, label=name)
ax.set_xlabel("frequency [Hz]")
ax.set_ylabel("final residual [mm]")
ax.legend(fontsize=7)
fig.tight_layout()
fig.savefig(os.path.join(OUT, "sweep_residual.png"), dpi=150)
)PY";

inline constexpr const char* kStability = R"PY(
roots = read("roots.csv")
taus = []
for r in roots:
    if r["tau"] not in taus:
        taus.append(r["tau"])
n = max(len(taus), 1)
fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 4), sharey=True, squeeze=False)
for ax, tau in zip(axes[0], taus):
    pts = [r for r in roots if r["tau"] == tau]
    for fam, marker in (("delay-free-continuation", "o"), ("delay-born", "^")):
        sel = [r for r in pts if r["family"] == fam]
        ax.plot([num(r["delta"]) for r in sel], [num(r["frequency"]) / 1000 for r in sel], marker, ms=4,
                ls="none", label=fam)
    ax.axvline(0, color="k", lw=0.6)
    ax.set_title("tau = %s ms" % tau)
    ax.set_xlabel("Re s [1/ms]")
axes[0][0].set_ylabel("f [kHz]")
axes[0][0].legend(fontsize=7)
fig.tight_layout()
fig.savefig(os.path.join(OUT, "roots.png"), dpi=150)

locus = read("locus.csv")
fig, ax = plt.subplots(figsize=(6, 5))
curves = sorted({int(r["curve"]) for r in locus})
for c in curves:
    pts = [r for r in locus if int(r["curve"]) == c]
    style = "-" if pts[0]["family"] == "delay-free-continuation" else "--"
    ax.plot([num(r["delta"]) for r in pts], [num(r["frequency"]) / 1000 for r in pts], style, lw=1)
ax.axvline(0, color="k", lw=0.6)
ax.set_xlabel("Re s [1/ms]")
ax.set_ylabel("f [kHz]")
ax.set_title("Root locus (dashed: delay-born)")
fig.tight_layout()
fig.savefig(os.path.join(OUT, "root_locus.png"), dpi=150)

bnd = read("boundary.csv")
fig, ax = plt.subplots(figsize=(6, 4))
for fc in sorted({r["cutoff"] for r in bnd}, key=float, reverse=True):
    pts = [r for r in bnd if r["cutoff"] == fc and r["found"] == "1"]
    ax.plot([num(r["alpha"]) for r in pts], [num(r["tau_crit"]) for r in pts], "o-", ms=3,
            label="f_c = %s kHz" % fc)
ax.set_xlabel("interface position L_N / L")
ax.set_ylabel("critical delay [ms]")
ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig(os.path.join(OUT, "tau_alpha.png"), dpi=150)
)PY";

inline std::string sweep() { return std::string(kPreamble) + kSweep; }
inline std::string stability() { return std::string(kPreamble) + kStability; }

inline void write(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << body;
}

}  // namespace plot_scripts
}  // namespace hybridtest::cli
