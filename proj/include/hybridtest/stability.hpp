#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridtest/beam_fe.hpp"
#include "hybridtest/substructuring.hpp"
#include "hybridtest/units.hpp"

namespace hybridtest::stability {

using cplx = std::complex<double>;
using substructure::ChainCondenser;

/// Coefficients of the characteristic function in x = exp(-s tau):
/// C = p0 + p1 x + p2 x^2.
struct Terms {
  cplx p0, p1, p2;
  /// log det(D_Nbb) + log det(D_Pbb), relative to the same sum at s = 0.
  cplx log_det_bulk;
};

/// Characteristic function of a beam split at a movable interface, with the
/// physical-side interface forces delayed by tau:
/// det(D_N(s) + D_P(s) exp(-s tau)).
class DelayCharacteristic {
 public:
  explicit DelayCharacteristic(const fe::FEModel& model) : model_(model) {
    if (model.bc != fe::BoundaryCondition::clamped_free()) {
      throw std::invalid_argument("delay characteristic expects a clamped-free beam");
    }
    for (int node = 1; node < model.n_nodes() - 1; ++node) {
      const auto part = substructure::partition(model, node);
      Split split{ChainCondenser(part.numerical), ChainCondenser(part.physical), 0.0};
      split.log_ref = split.n.condense(0.0).log_det_bulk + split.p.condense(0.0).log_det_bulk;
      splits_.push_back(std::move(split));
    }
  }

  const fe::FEModel& model() const { return model_; }

  /// Interior node nearest to the requested length fraction L_N / L.
  int interface_node(double alpha) const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    const int node = substructure::nearest_node(model_, alpha * model_.length());
    return std::clamp(node, 1, model_.n_nodes() - 2);
  }

  double snapped_alpha(double alpha) const {
    const int node = interface_node(alpha);
    return (model_.node_coords[node] - model_.node_coords.front()) / model_.length();
  }

  Terms terms(cplx s, double alpha) const {
    const auto& split = splits_[interface_node(alpha) - 1];
    const auto n = split.n.condense(s);
    const auto p = split.p.condense(s);
    const auto& N = n.D;
    const auto& P = p.D;
    return {N.determinant(),
            N(0, 0) * P(1, 1) + N(1, 1) * P(0, 0) - N(0, 1) * P(1, 0) - N(1, 0) * P(0, 1),
            P.determinant(), n.log_det_bulk + p.log_det_bulk - split.log_ref};
  }

  cplx value(cplx s, double alpha, double tau) const {
    const auto t = terms(s, alpha);
    const cplx x = std::exp(-s * tau);
    return t.p0 + x * (t.p1 + x * t.p2);
  }

  /// Pole-free version: the characteristic function times the bulk
  /// determinants of both sides (normalised at s = 0). Equals the determinant
  /// of the full delayed block system up to a constant.
  cplx regularized(cplx s, double alpha, double tau) const {
    const auto t = terms(s, alpha);
    const cplx x = std::exp(-s * tau);
    return (t.p0 + x * (t.p1 + x * t.p2)) * std::exp(t.log_det_bulk);
  }

  /// |C| relative to the magnitude of its three terms.
  double relative_residual(cplx s, double alpha, double tau) const {
    const auto t = terms(s, alpha);
    const cplx x = std::exp(-s * tau);
    const double scale = std::abs(t.p0) + std::abs(t.p1 * x) + std::abs(t.p2 * x * x);
    return std::abs(t.p0 + x * (t.p1 + x * t.p2)) / scale;
  }

 private:
  struct Split {
    ChainCondenser n, p;
    cplx log_ref;
  };
  fe::FEModel model_;
  std::vector<Split> splits_;
};

enum class Family { DelayFreeContinuation, DelayBorn };

inline const char* to_string(Family f) {
  return f == Family::DelayBorn ? "delay-born" : "delay-free-continuation";
}

struct Root {
  cplx s;
  double tau;
  double alpha;
  Family family = Family::DelayFreeContinuation;

  double delta() const { return s.real(); }
  Frequency frequency() const { return Frequency::from_angular(s.imag()); }
};

/// Search region in the complex plane: real part in rad/ms, frequency in kHz.
struct Box {
  double delta_min, delta_max;
  double f_min, f_max;

  bool contains(cplx s, double margin = 0.0) const {
    const double f = s.imag() / (2 * std::numbers::pi);
    const double md = margin * (delta_max - delta_min), mf = margin * (f_max - f_min);
    return s.real() >= delta_min - md && s.real() <= delta_max + md && f >= f_min - mf &&
           f <= f_max + mf;
  }
};

struct Resolution {
  int n_delta = 16;
  int n_f = 48;
  int max_depth = 12;
};

struct RootSearch {
  std::vector<Root> roots;
  std::vector<std::string> warnings;
};

struct NewtonOptions {
  double tolerance = 1e-9;  ///< on relative_residual
  int max_steps = 50;
};

/// Damped complex Newton on the pole-free characteristic, derivative by
/// central differences. Returns the polished root or nothing. Low-frequency
/// roots sit on a cancellation floor above 1e-9, so a root that stagnates
/// below 1e3 * tolerance is also accepted.
inline std::optional<cplx> polish_root(const DelayCharacteristic& ctx, double alpha, double tau,
                                       cplx s0, NewtonOptions opt = {}) {
  auto g = [&](cplx s) { return ctx.regularized(s, alpha, tau); };
  auto accept_stalled = [&](cplx s) {
    return ctx.relative_residual(s, alpha, tau) < 1e3 * opt.tolerance ? std::optional(s)
                                                                      : std::nullopt;
  };
  cplx s = s0;
  cplx gs = g(s);
  for (int it = 0; it < opt.max_steps; ++it) {
    if (!std::isfinite(std::abs(gs))) return std::nullopt;
    if (ctx.relative_residual(s, alpha, tau) < opt.tolerance) return s;
    const double h = 1e-7 * (1.0 + std::abs(s));
    const cplx dg = (g(s + h) - g(s - h)) / (2.0 * h);
    if (dg == 0.0 || !std::isfinite(std::abs(dg))) return std::nullopt;
    const cplx step = gs / dg;
    double lambda = 1.0;
    bool decreased = false;
    for (int k = 0; k < 12 && !decreased; ++k, lambda *= 0.5) {
      const cplx trial = s - lambda * step;
      const cplx gt = g(trial);
      if (std::abs(gt) < std::abs(gs)) {
        s = trial;
        gs = gt;
        decreased = true;
      }
    }
    if (!decreased) return accept_stalled(s);
  }
  return accept_stalled(s);
}

namespace detail {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double wrap(double a) { return std::remainder(a, kTwoPi); }

/// Change of argument of g along the straight segment a -> b. Each segment
/// is split in two and accepted only when both halves move by less than
/// 0.6 rad and agree with the whole; otherwise it is refined further.
template <class G>
double arg_change(const G& g, cplx a, cplx b, cplx ga, cplx gb, int depth) {
  const cplx m = 0.5 * (a + b);
  const cplx gm = g(m);
  const double d1 = wrap(std::arg(gm) - std::arg(ga));
  const double d2 = wrap(std::arg(gb) - std::arg(gm));
  if (depth <= 0) return d1 + d2;
  const double whole = wrap(std::arg(gb) - std::arg(ga));
  if (std::abs(d1) < 0.6 && std::abs(d2) < 0.6 && std::abs(d1 + d2 - whole) < 1e-9) return d1 + d2;
  return arg_change(g, a, m, ga, gm, depth - 1) + arg_change(g, m, b, gm, gb, depth - 1);
}

/// Grid line position; interior lines are shifted off the regular lattice so
/// that round box limits (delta = 0 in particular) are not cell edges.
inline double grid_line(int i, int n) {
  return (i == 0 || i == n) ? double(i) / n : (i + 0.2913) / n;
}

inline cplx point(const Box& box, double u, double v) {
  return {box.delta_min + u * (box.delta_max - box.delta_min),
          kTwoPi * (box.f_min + v * (box.f_max - box.f_min))};
}

}  // namespace detail

/// Track a root from tau down to zero with an adaptive secant predictor.
/// Roots that run off to high frequency, or cannot be followed, were born
/// from the delay.
inline Family classify_family(const DelayCharacteristic& ctx, double alpha, double tau, cplx s,
                              double f_escape) {
  if (tau <= 0.0) return Family::DelayFreeContinuation;
  double t_cur = tau, t_prev = tau, dt = tau / 20;
  cplx s_cur = s, s_prev = s;
  for (int it = 0; it < 4000 && t_cur > 0; ++it) {
    const double t_next = std::max(0.0, t_cur - dt);
    cplx guess = s_cur;
    if (t_prev != t_cur) guess += (s_cur - s_prev) * ((t_next - t_cur) / (t_cur - t_prev));
    const auto r = polish_root(ctx, alpha, t_next, guess);
    if (!r || std::abs(*r - guess) > 0.05 * (std::abs(s_cur) + 0.1)) {
      dt *= 0.5;
      if (dt < 1e-7 * tau) return Family::DelayBorn;
      continue;
    }
    if (r->imag() / (2 * std::numbers::pi) > f_escape) return Family::DelayBorn;
    t_prev = t_cur, s_prev = s_cur;
    t_cur = t_next, s_cur = *r;
    dt = std::min(1.5 * dt, tau / 10);
  }
  return t_cur <= 0 ? Family::DelayFreeContinuation : Family::DelayBorn;
}

/// All roots of the characteristic function inside the box, with f >= 0.
/// Cells are kept when the argument principle says they enclose zeros, and
/// are subdivided until a Newton polish from the cell centre lands inside.
inline RootSearch find_roots(const DelayCharacteristic& ctx, double alpha, double tau,
                             const Box& box, const Resolution& res = {}, bool tag_families = true) {
  if (!(box.delta_max > box.delta_min) || !(box.f_max > box.f_min) || !std::isfinite(box.delta_min) ||
      !std::isfinite(box.delta_max) || !std::isfinite(box.f_max)) {
    throw std::invalid_argument("root search box must be finite and non-empty");
  }
  if (res.n_delta < 4 || res.n_f < 4) throw std::invalid_argument("resolution must be at least 4 cells per axis");

  RootSearch out;
  auto g = [&](cplx s) { return ctx.regularized(s, alpha, tau); };
  const int nd = res.n_delta, nf = res.n_f;
  const int depth_edges = 16;

  std::vector<cplx> vert((nd + 1) * (nf + 1));
  std::vector<cplx> gv(vert.size());
  auto idx = [&](int i, int j) { return j * (nd + 1) + i; };
  for (int j = 0; j <= nf; ++j)
    for (int i = 0; i <= nd; ++i) {
      vert[idx(i, j)] = detail::point(box, detail::grid_line(i, nd), detail::grid_line(j, nf));
      gv[idx(i, j)] = g(vert[idx(i, j)]);
    }
  // Horizontal edge (i,j)->(i+1,j) and vertical edge (i,j)->(i,j+1).
  std::vector<double> h_edge(nd * (nf + 1)), v_edge((nd + 1) * nf);
  for (int j = 0; j <= nf; ++j)
    for (int i = 0; i < nd; ++i)
      h_edge[j * nd + i] = detail::arg_change(g, vert[idx(i, j)], vert[idx(i + 1, j)], gv[idx(i, j)],
                                              gv[idx(i + 1, j)], depth_edges);
  for (int j = 0; j < nf; ++j)
    for (int i = 0; i <= nd; ++i)
      v_edge[j * (nd + 1) + i] = detail::arg_change(g, vert[idx(i, j)], vert[idx(i, j + 1)],
                                                    gv[idx(i, j)], gv[idx(i, j + 1)], depth_edges);

  std::vector<cplx> found;
  const double norm_d = box.delta_max - box.delta_min;
  const double norm_w = detail::kTwoPi * (box.f_max - box.f_min);
  auto add_root = [&](cplx s) {
    if (s.imag() < 0) s = std::conj(s);
    if (!box.contains(s, 1e-9)) return;
    for (const auto& r : found) {
      if (std::hypot((r.real() - s.real()) / norm_d, (r.imag() - s.imag()) / norm_w) < 1e-4) return;
    }
    found.push_back(s);
  };

  // Recursive refinement of a rectangular cell [a.re, b.re] x [a.im, b.im].
  auto winding = [&](cplx a, cplx b) {
    const cplx c1(b.real(), a.imag()), c3(a.real(), b.imag());
    const cplx ga = g(a), g1 = g(c1), gb = g(b), g3 = g(c3);
    const double total = detail::arg_change(g, a, c1, ga, g1, depth_edges) +
                         detail::arg_change(g, c1, b, g1, gb, depth_edges) +
                         detail::arg_change(g, b, c3, gb, g3, depth_edges) +
                         detail::arg_change(g, c3, a, g3, ga, depth_edges);
    return static_cast<int>(std::lround(total / detail::kTwoPi));
  };
  std::function<void(cplx, cplx, int, int)> refine = [&](cplx a, cplx b, int w, int depth) {
    if (w <= 0) return;
    const cplx centre = 0.5 * (a + b);
    if (w == 1 || depth >= res.max_depth) {
      if (auto s = polish_root(ctx, alpha, tau, centre)) {
        const bool inside = s->real() >= a.real() - 1e-12 && s->real() <= b.real() + 1e-12 &&
                            s->imag() >= a.imag() - 1e-12 && s->imag() <= b.imag() + 1e-12;
        if (inside || depth >= res.max_depth) {
          add_root(*s);
          if (w == 1 || depth >= res.max_depth) return;
        }
      }
      if (depth >= res.max_depth) {
        out.warnings.push_back("unresolved zero cluster near s = (" + std::to_string(centre.real()) +
                               ", " + std::to_string(centre.imag()) + ")");
        return;
      }
    }
    const cplx m = centre;
    const cplx quads[4][2] = {{a, m},
                              {cplx(m.real(), a.imag()), cplx(b.real(), m.imag())},
                              {cplx(a.real(), m.imag()), cplx(m.real(), b.imag())},
                              {m, b}};
    for (const auto& q : quads) refine(q[0], q[1], winding(q[0], q[1]), depth + 1);
  };

  for (int j = 0; j < nf; ++j) {
    for (int i = 0; i < nd; ++i) {
      const double total = h_edge[j * nd + i] + v_edge[j * (nd + 1) + i + 1] -
                           h_edge[(j + 1) * nd + i] - v_edge[j * (nd + 1) + i];
      const int w = static_cast<int>(std::lround(total / detail::kTwoPi));
      if (w < 0) {
        out.warnings.push_back("negative winding (pole) in cell near s = (" +
                               std::to_string(vert[idx(i, j)].real()) + ", " +
                               std::to_string(vert[idx(i, j)].imag()) + "), excluded");
        continue;
      }
      refine(vert[idx(i, j)], vert[idx(i + 1, j + 1)], w, 0);
    }
  }

  std::sort(found.begin(), found.end(), [](cplx a, cplx b) {
    return a.imag() != b.imag() ? a.imag() < b.imag() : a.real() < b.real();
  });
  for (const auto& s : found) {
    Root r{s, tau, ctx.snapped_alpha(alpha)};
    if (tag_families) r.family = classify_family(ctx, alpha, tau, s, 4.0 * box.f_max);
    out.roots.push_back(r);
  }
  return out;
}

/// Lowest-frequency root with positive real part, if any.
inline std::optional<Root> lowest_unstable(const std::vector<Root>& roots) {
  std::optional<Root> best;
  for (const auto& r : roots) {
    if (r.delta() > 0 && (!best || r.s.imag() < best->s.imag())) best = r;
  }
  return best;
}

struct LocusCurve {
  Family family;
  std::vector<Root> points;
};

/// Roots followed through an ascending list of delays by predictor-corrector
/// continuation; the box is re-searched every `restart_every` delays to pick
/// up roots entering the region.
inline std::vector<LocusCurve> root_locus(const DelayCharacteristic& ctx, double alpha,
                                          const std::vector<double>& taus, const Box& box,
                                          const Resolution& res = {}, int restart_every = 5) {
  if (taus.empty()) return {};
  for (std::size_t k = 1; k < taus.size(); ++k) {
    if (!(taus[k] > taus[k - 1])) throw std::invalid_argument("delays must ascend");
  }
  std::vector<LocusCurve> curves;
  std::vector<bool> active;
  const double norm_d = box.delta_max - box.delta_min;
  const double norm_w = detail::kTwoPi * (box.f_max - box.f_min);
  auto close = [&](cplx a, cplx b) {
    return std::hypot((a.real() - b.real()) / norm_d, (a.imag() - b.imag()) / norm_w) < 1e-3;
  };
  auto seed = [&](double tau) {
    for (const auto& r : find_roots(ctx, alpha, tau, box, res, true).roots) {
      bool tracked = false;
      for (std::size_t c = 0; c < curves.size(); ++c) {
        if (active[c] && close(curves[c].points.back().s, r.s)) tracked = true;
      }
      if (!tracked) {
        curves.push_back({r.family, {r}});
        active.push_back(true);
      }
    }
  };

  // Adaptive secant continuation from the last traced point to `tau`. The
  // step halves whenever the corrector lands away from the predictor.
  auto advance = [&](const LocusCurve& curve, double tau) -> std::optional<cplx> {
    const auto& pts = curve.points;
    double t1 = pts.back().tau, t0 = t1;
    cplx s1 = pts.back().s, s0 = s1;
    if (pts.size() >= 2) t0 = pts[pts.size() - 2].tau, s0 = pts[pts.size() - 2].s;
    double h = tau - t1;
    const double h_min = h / 1024;
    while (t1 < tau) {
      h = std::min(h, tau - t1);
      const cplx guess = t1 > t0 ? s1 + (s1 - s0) * (h / (t1 - t0)) : s1;
      const auto s = polish_root(ctx, alpha, t1 + h, guess);
      const bool ok = s && std::hypot((s->real() - guess.real()) / norm_d,
                                      (s->imag() - guess.imag()) / norm_w) < 0.01;
      if (!ok) {
        if (h <= h_min) return std::nullopt;
        h /= 2;
        continue;
      }
      t0 = t1, s0 = s1;
      t1 = (tau - (t1 + h) < 1e-12 * tau) ? tau : t1 + h;
      s1 = *s;
      h *= 1.5;
    }
    return s1;
  };

  seed(taus[0]);
  for (std::size_t k = 1; k < taus.size(); ++k) {
    const double tau = taus[k];
    for (std::size_t c = 0; c < curves.size(); ++c) {
      if (!active[c]) continue;
      const auto s = advance(curves[c], tau);
      if (!s || !box.contains(*s)) {
        active[c] = false;
        continue;
      }
      bool duplicate = false;
      for (std::size_t o = 0; o < c; ++o) {
        if (active[o] && curves[o].points.back().tau == tau && close(curves[o].points.back().s, *s)) {
          duplicate = true;
        }
      }
      if (duplicate) {
        active[c] = false;
        continue;
      }
      curves[c].points.push_back({*s, tau, ctx.snapped_alpha(alpha), curves[c].family});
    }
    if (restart_every > 0 && (k % restart_every == 0 || k + 1 == taus.size())) seed(tau);
  }
  return curves;
}

enum class BoundaryPiece { ImaginaryAxis, CutoffLine };

inline const char* to_string(BoundaryPiece b) {
  return b == BoundaryPiece::CutoffLine ? "cutoff-line" : "imaginary-axis";
}

struct CriticalDelay {
  bool found = false;  ///< false: stable up to tau_max
  double tau = std::numeric_limits<double>::quiet_NaN();
  cplx s{};
  BoundaryPiece piece = BoundaryPiece::CutoffLine;
  double alpha = 0.0;  ///< snapped

  double frequency_khz() const { return s.imag() / (2 * std::numbers::pi); }
};

struct CriticalDelayOptions {
  double tau_max = 5.0;     ///< ms
  double delta_max = 10.0;  ///< rad/ms, extent of the cut-off line scan
  double f_min = 1e-3;      ///< kHz, lower end of the imaginary-axis scan
  int samples = 1500;
  int refine_depth = 8;
};

namespace detail {

struct LineSample {
  double t;
  cplx s;
  std::array<cplx, 2> x;  ///< roots of p2 x^2 + p1 x + p0, branch-tracked
};

inline std::array<cplx, 2> quadratic_roots(const Terms& t) {
  const cplx disc = std::sqrt(t.p1 * t.p1 - 4.0 * t.p2 * t.p0);
  // Numerically stable pairing.
  const cplx q = -0.5 * (t.p1 + (std::real(std::conj(t.p1) * disc) >= 0 ? disc : -disc));
  return {q / t.p2, t.p0 / q};
}

inline bool big_change(const std::array<cplx, 2>& a, const std::array<cplx, 2>& b) {
  for (int k = 0; k < 2; ++k) {
    if (std::abs(std::log(std::abs(b[k]) / std::abs(a[k]))) > 0.05) return true;
    if (std::abs(wrap(std::arg(b[k]) - std::arg(a[k]))) > 0.1) return true;
  }
  return false;
}

/// Sample the two x-branches along s(t), t in [t0, t1], refining where they move fast.
template <class Path>
std::vector<LineSample> scan_line(const DelayCharacteristic& ctx, double alpha, const Path& path,
                                  double t0, double t1, int samples, int depth) {
  auto eval = [&](double t, const std::array<cplx, 2>* prev) {
    const cplx s = path(t);
    auto x = quadratic_roots(ctx.terms(s, alpha));
    if (prev) {
      const double same = std::abs(x[0] - (*prev)[0]) + std::abs(x[1] - (*prev)[1]);
      const double swapped = std::abs(x[1] - (*prev)[0]) + std::abs(x[0] - (*prev)[1]);
      if (swapped < same) std::swap(x[0], x[1]);
    }
    return LineSample{t, s, x};
  };
  std::vector<LineSample> out{eval(t0, nullptr)};
  std::function<void(double, double, int)> segment = [&](double a, double b, int d) {
    auto end = eval(b, &out.back().x);
    if (d > 0 && big_change(out.back().x, end.x)) {
      const double m = 0.5 * (a + b);
      segment(a, m, d - 1);
      segment(m, b, d - 1);
      return;
    }
    out.push_back(end);
  };
  for (int k = 1; k <= samples; ++k) {
    segment(t0 + (t1 - t0) * (k - 1) / samples, t0 + (t1 - t0) * k / samples, depth);
  }
  return out;
}

/// Newton on C(s(delta, w), tau) = 0 with two real unknowns: either
/// (delta, tau) at fixed frequency or (w, tau) at fixed delta.
inline std::optional<std::pair<cplx, double>> polish_boundary(const DelayCharacteristic& ctx,
                                                              double alpha, cplx s, double tau,
                                                              bool vary_delta) {
  for (int it = 0; it < 40; ++it) {
    const auto t = ctx.terms(s, alpha);
    const cplx x = std::exp(-s * tau);
    const cplx c = t.p0 + x * (t.p1 + x * t.p2);
    const double scale = std::abs(t.p0) + std::abs(t.p1 * x) + std::abs(t.p2 * x * x);
    if (std::abs(c) / scale < 1e-12) return std::pair{s, tau};
    const double h = 1e-7 * (1.0 + std::abs(s));
    const cplx dir = vary_delta ? cplx(1, 0) : cplx(0, 1);
    const cplx dc = (ctx.value(s + h * dir, alpha, tau) - ctx.value(s - h * dir, alpha, tau)) / (2 * h);
    const cplx dtau = -s * x * (t.p1 + 2.0 * x * t.p2);
    Eigen::Matrix2d J;
    J << dc.real(), dtau.real(), dc.imag(), dtau.imag();
    const Eigen::Vector2d step = J.fullPivLu().solve(Eigen::Vector2d(c.real(), c.imag()));
    if (!step.allFinite()) return std::nullopt;
    s -= step(0) * dir;
    tau -= step(1);
  }
  return std::nullopt;
}

}  // namespace detail

/// Smallest delay at which a root enters the region {Re s > 0, f <= f_cutoff}.
/// Both boundary pieces of that region are scanned: the imaginary axis below
/// the cut-off, and the cut-off frequency line in the right half plane.
inline CriticalDelay critical_delay(const DelayCharacteristic& ctx, double alpha, Frequency f_cutoff,
                                    const CriticalDelayOptions& opt = {}) {
  if (!(f_cutoff.khz() > 0)) throw std::invalid_argument("cut-off frequency must be positive");
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("alpha must lie in (0, 1)");
  CriticalDelay best;
  best.alpha = ctx.snapped_alpha(alpha);
  const double wc = f_cutoff.angular();

  auto consider = [&](cplx s, double tau, BoundaryPiece piece) {
    if (!(tau > 0) || tau > opt.tau_max) return;
    if (best.found && tau >= best.tau) return;
    best.found = true;
    best.tau = tau;
    best.s = s;
    best.piece = piece;
  };

  // Cut-off line: s = delta + i wc, delta >= 0. tau from |x| = exp(-delta tau)
  // and arg x = -wc tau (mod 2 pi).
  {
    auto path = [&](double d) { return cplx(d, wc); };
    const auto line = detail::scan_line(ctx, alpha, path, 0.0, opt.delta_max, opt.samples, opt.refine_depth);
    for (int b = 0; b < 2; ++b) {
      std::vector<double> theta(line.size());
      theta[0] = std::arg(line[0].x[b]);
      for (std::size_t k = 1; k < line.size(); ++k) {
        theta[k] = theta[k - 1] + detail::wrap(std::arg(line[k].x[b]) - std::arg(line[k - 1].x[b]));
      }
      const auto [lo, hi] = std::minmax_element(theta.begin(), theta.end());
      const int m_min = static_cast<int>(std::floor(*lo / detail::kTwoPi)) - 1;
      const int m_max = static_cast<int>(std::ceil((*hi + wc * opt.tau_max) / detail::kTwoPi)) + 1;
      for (int m = m_min; m <= m_max; ++m) {
        auto tau_at = [&](std::size_t k) { return (-theta[k] + detail::kTwoPi * m) / wc; };
        auto gfun = [&](std::size_t k) {
          return std::log(std::abs(line[k].x[b])) + line[k].t * tau_at(k);
        };
        for (std::size_t k = 0; k + 1 < line.size(); ++k) {
          const double ga = gfun(k), gb = gfun(k + 1);
          if (tau_at(k) < 0 && tau_at(k + 1) < 0) continue;
          if ((ga > 0) == (gb > 0)) continue;
          const double w = ga / (ga - gb);
          const double d0 = line[k].t + w * (line[k + 1].t - line[k].t);
          const double t0 = tau_at(k) + w * (tau_at(k + 1) - tau_at(k));
          if (auto r = detail::polish_boundary(ctx, alpha, cplx(d0, wc), t0, true)) {
            if (r->first.real() >= -1e-9) consider(r->first, r->second, BoundaryPiece::CutoffLine);
          }
        }
      }
    }
  }

  // Imaginary axis: s = i w, f_min <= f <= f_cutoff. Crossing where |x| = 1.
  {
    auto path = [&](double w) { return cplx(0.0, w); };
    const double w0 = Frequency::from_khz(opt.f_min).angular();
    const auto line = detail::scan_line(ctx, alpha, path, w0, wc, opt.samples, opt.refine_depth);
    for (int b = 0; b < 2; ++b) {
      for (std::size_t k = 0; k + 1 < line.size(); ++k) {
        const double ga = std::log(std::abs(line[k].x[b]));
        const double gb = std::log(std::abs(line[k + 1].x[b]));
        if ((ga > 0) == (gb > 0)) continue;
        const double w = ga / (ga - gb);
        const double om = line[k].t + w * (line[k + 1].t - line[k].t);
        const cplx xa = line[k].x[b], xb = line[k + 1].x[b];
        const double phase = std::arg(xa) + w * detail::wrap(std::arg(xb) - std::arg(xa));
        double tau0 = -phase / om;
        while (tau0 <= 0) tau0 += detail::kTwoPi / om;
        if (auto r = detail::polish_boundary(ctx, alpha, cplx(0.0, om), tau0, false)) {
          double tau = r->second;
          const double period = detail::kTwoPi / r->first.imag();
          while (tau > period) tau -= period;
          while (tau <= 0) tau += period;
          if (r->first.imag() <= wc * (1 + 1e-12)) consider(r->first, tau, BoundaryPiece::ImaginaryAxis);
        }
      }
    }
  }
  return best;
}

struct BoundaryPoint {
  double alpha;  ///< requested
  CriticalDelay critical;
  std::string error;  ///< non-empty when this point failed
};

/// Critical delay over a grid of interface positions at fixed cut-off.
inline std::vector<BoundaryPoint> stability_boundary(const DelayCharacteristic& ctx, Frequency f_cutoff,
                                                     const std::vector<double>& alphas,
                                                     const CriticalDelayOptions& opt = {}) {
  std::vector<BoundaryPoint> out;
  for (double a : alphas) {
    BoundaryPoint p{a, {}, {}};
    try {
      p.critical = critical_delay(ctx, a, f_cutoff, opt);
    } catch (const std::exception& e) {
      p.error = e.what();
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace hybridtest::stability
