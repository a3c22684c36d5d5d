#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hybridtest/stability.hpp"

using namespace hybridtest;
using namespace hybridtest::stability;

namespace {

const fe::FEModel& model60() {
  static const auto m = fe::assemble(fe::BeamProperties::steel_ruler(), 60);
  return m;
}

const DelayCharacteristic& ctx() {
  static const DelayCharacteristic c(model60());
  return c;
}

const Box kBox{-4.0, 4.0, 0.0, 3.0};

cplx direct_determinant(double alpha, cplx s, double tau) {
  const auto p = substructure::partition(model60(), ctx().interface_node(alpha));
  const auto DN = substructure::condense(p.numerical, s).D;
  const auto DP = substructure::condense(p.physical, s).D;
  return (DN + DP * std::exp(-s * tau)).determinant();
}

// Natural rounding scale of det(D_N + x D_P): the magnitudes of the two
// products that cancel in the 2x2 determinant.
double det_scale(double alpha, cplx s, double tau) {
  const auto p = substructure::partition(model60(), ctx().interface_node(alpha));
  const Eigen::Matrix2cd D = substructure::condense(p.numerical, s).D +
                             substructure::condense(p.physical, s).D * std::exp(-s * tau);
  return std::abs(D(0, 0) * D(1, 1)) + std::abs(D(0, 1) * D(1, 0));
}

// 2-norm condition number of a side's bulk block at s.
double bulk_condition(const substructure::SubModel& side, cplx s) {
  const auto D = substructure::dynamic_stiffness(side.model, s);
  const auto n = static_cast<Eigen::Index>(side.bulk.size());
  if (n == 0) return 1.0;
  Eigen::MatrixXcd B(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) B(i, j) = D(side.bulk[i], side.bulk[j]);
  const Eigen::JacobiSVD<Eigen::MatrixXcd> svd(B);
  return svd.singularValues()(0) / svd.singularValues()(n - 1);
}

}  // namespace

TEST(Characteristic, QuadraticExpansionMatchesDirectDeterminant) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> d(-3.0, 3.0), f(0.0, 3.0), a(0.02, 0.98), t(0.0, 3.0);
  constexpr double eps = std::numeric_limits<double>::epsilon();
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    const cplx s(d(rng), 2 * M_PI * f(rng));
    const double alpha = a(rng), tau = t(rng);
    const cplx quad = ctx().value(s, alpha, tau);
    const cplx direct = direct_determinant(alpha, s, tau);
    const double rel = std::abs(quad - direct) / det_scale(alpha, s, tau);
    // Both routes eliminate the same bulk, so they may differ by rounding
    // amplified by its conditioning.
    if (rel > 1e-13) {
      const auto p = substructure::partition(model60(), ctx().interface_node(alpha));
      const double cond = std::max(bulk_condition(p.numerical, s), bulk_condition(p.physical, s));
      EXPECT_LT(rel, 1e-13 + 10 * eps * cond) << "s = " << s << ", alpha = " << alpha;
    }
    worst = std::max(worst, rel);
  }
  std::printf("worst relative deviation over 1000 points: %.2e\n", worst);
}

TEST(Characteristic, ZeroDelayIsUndelayedHybridDeterminant) {
  const cplx s(-0.01, 0.5);
  const auto p = substructure::partition(model60(), 30);
  const auto sum = substructure::condense(p.numerical, s).D + substructure::condense(p.physical, s).D;
  EXPECT_LT(std::abs(ctx().value(s, 0.5, 0.0) - sum.determinant()), 1e-10 * det_scale(0.5, s, 0.0));
}

TEST(Characteristic, SmallAlphaMatchesDirectDeterminant) {
  const double alpha = 1.0 / 60;
  for (double f : {0.05, 0.7, 2.2}) {
    const cplx s(0.2, 2 * M_PI * f);
    EXPECT_LT(std::abs(ctx().value(s, alpha, 0.8) - direct_determinant(alpha, s, 0.8)),
              1e-10 * det_scale(alpha, s, 0.8));
  }
}

TEST(Characteristic, RegularizedEqualsFullBlockDeterminantUpToConstant) {
  const double alpha = 0.5, tau = 1.3;
  const auto p = substructure::partition(model60(), 30);
  auto full_det = [&](cplx s) {
    const cplx x = std::exp(-s * tau);
    const auto DN = substructure::dynamic_stiffness(p.numerical.model, s);
    const auto DP = substructure::dynamic_stiffness(p.physical.model, s);
    const int nb = static_cast<int>(p.numerical.bulk.size()), pb = static_cast<int>(p.physical.bulk.size());
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(nb + 2 + pb, nb + 2 + pb);
    const auto& nbulk = p.numerical.bulk;
    const auto& pbulk = p.physical.bulk;
    const auto ni = p.numerical.interface;
    const auto pi = p.physical.interface;
    for (int r = 0; r < nb; ++r) {
      for (int c = 0; c < nb; ++c) A(r, c) = DN(nbulk[r], nbulk[c]);
      for (int c = 0; c < 2; ++c) A(r, nb + c) = DN(nbulk[r], ni[c]), A(nb + c, r) = DN(ni[c], nbulk[r]);
    }
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) A(nb + r, nb + c) = DN(ni[r], ni[c]) + x * DP(pi[r], pi[c]);
    for (int r = 0; r < pb; ++r) {
      for (int c = 0; c < pb; ++c) A(nb + 2 + r, nb + 2 + c) = DP(pbulk[r], pbulk[c]);
      for (int c = 0; c < 2; ++c) {
        A(nb + c, nb + 2 + r) = x * DP(pi[c], pbulk[r]);
        A(nb + 2 + r, nb + c) = DP(pbulk[r], pi[c]);
      }
    }
    return A.partialPivLu().determinant();
  };
  const cplx s0(0.4, 1.7);
  const cplx ratio0 = ctx().regularized(s0, alpha, tau) / full_det(s0);
  for (const cplx s : {cplx(-1.0, 0.3), cplx(2.0, 9.0), cplx(0.0, 4.4)}) {
    const cplx ratio = ctx().regularized(s, alpha, tau) / full_det(s);
    EXPECT_LT(std::abs(ratio / ratio0 - 1.0), 1e-8);
  }
}

TEST(Characteristic, ConjugateSymmetry) {
  const cplx s(0.7, 3.3);
  const cplx a = ctx().value(s, 0.3, 1.1);
  const cplx b = ctx().value(std::conj(s), 0.3, 1.1);
  EXPECT_LT(std::abs(std::conj(a) - b), 1e-12 * std::abs(a));
}

TEST(Characteristic, RejectsAlphaOutsideUnitInterval) {
  EXPECT_THROW(ctx().value(cplx(0, 1), 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(ctx().value(cplx(0, 1), 1.0, 1.0), std::invalid_argument);
}

TEST(FindRoots, ZeroDelayIsStableAndMatchesMonolithicSpectrum) {
  const auto search = find_roots(ctx(), 0.5, 0.0, kBox);
  ASSERT_GE(search.roots.size(), 8u);
  const auto eig = fe::pencil_eigenvalues(model60());
  for (const auto& r : search.roots) {
    EXPECT_LT(r.delta(), 0.0);
    EXPECT_EQ(r.family, Family::DelayFreeContinuation);
    double best = 1e9;
    for (const auto& l : eig) best = std::min(best, std::abs(l - r.s) / std::abs(l));
    EXPECT_LT(best, 5e-3) << "root at f = " << r.frequency().hz() << " Hz";
  }
  // Every pencil eigenvalue inside the box is found.
  int inside = 0;
  for (const auto& l : eig)
    if (l.imag() > 0 && kBox.contains(l)) ++inside;
  EXPECT_EQ(static_cast<int>(search.roots.size()), inside);
}

TEST(FindRoots, DelayedSystemsHaveUnstableRootsMovingDown) {
  double prev_f = 1e9, prev_d = 1e9;
  for (double tau : {1.2, 1.75, 2.3}) {
    const auto search = find_roots(ctx(), 0.5, tau, kBox);
    const auto low = lowest_unstable(search.roots);
    ASSERT_TRUE(low.has_value()) << tau;
    std::printf("tau %.2f ms: lowest unstable root delta %.4f rad/ms, f %.4f kHz (%s)\n", tau,
                low->delta(), low->frequency().khz(), to_string(low->family));
    EXPECT_EQ(low->family, Family::DelayBorn);
    EXPECT_LT(low->frequency().khz(), prev_f);
    EXPECT_LT(low->delta(), prev_d);
    prev_f = low->frequency().khz();
    prev_d = low->delta();
  }
}

TEST(FindRoots, LocatedRootsSatisfyTheCharacteristicEquation) {
  const auto search = find_roots(ctx(), 0.35, 1.5, kBox, {}, false);
  ASSERT_FALSE(search.roots.empty());
  for (const auto& r : search.roots) {
    EXPECT_LT(ctx().relative_residual(r.s, 0.35, 1.5), 1e-6);
    EXPECT_GE(r.frequency().khz(), 0.0);
    // The conjugate is a root too.
    EXPECT_LT(ctx().relative_residual(std::conj(r.s), 0.35, 1.5), 1e-6);
  }
}

TEST(FindRoots, RejectsDegenerateInput) {
  EXPECT_THROW(find_roots(ctx(), 0.5, 1.0, Box{1, 1, 0, 1}), std::invalid_argument);
  EXPECT_THROW(find_roots(ctx(), 0.5, 1.0, kBox, Resolution{3, 8, 4}), std::invalid_argument);
}

TEST(RootLocus, LowestUnstableBranchFollowsHalfPeriodRule) {
  std::vector<double> taus;
  for (double t = 0.5; t <= 2.5 + 1e-9; t += 0.05) taus.push_back(t);
  const auto curves = root_locus(ctx(), 0.5, taus, kBox, {}, 10);
  // Lowest unstable root at each delay, read off the traced curves.
  int checked = 0;
  for (double tau : taus) {
    double f_low = 1e9;
    for (const auto& c : curves)
      for (const auto& p : c.points)
        if (std::abs(p.tau - tau) < 1e-12 && p.delta() > 0) f_low = std::min(f_low, p.frequency().khz());
    if (f_low == 1e9) {
      std::printf("no unstable root at tau %.2f\n", tau);
      continue;
    }
    ++checked;
    EXPECT_GE(f_low * tau, 0.4) << tau;
    EXPECT_LE(f_low * tau, 0.6) << tau;
  }
  EXPECT_GE(checked, static_cast<int>(taus.size()) - 2);
}

TEST(RootLocus, DelayBornBranchPassesPublishedPoints) {
  std::vector<double> taus;
  for (double t = 0.9; t <= 2.1 + 1e-9; t += 0.05) taus.push_back(t);
  const auto curves = root_locus(ctx(), 0.5, taus, kBox, {}, 6);
  auto f_at = [&](double tau) {
    double f = 1e9;
    for (const auto& c : curves)
      for (const auto& p : c.points)
        if (std::abs(p.tau - tau) < 1e-9 && p.delta() > 0 && c.family == Family::DelayBorn)
          f = std::min(f, p.frequency().khz());
    return f;
  };
  EXPECT_NEAR(f_at(1.0), 0.5, 0.075);
  EXPECT_NEAR(f_at(1.5), 0.33, 0.05);
  EXPECT_NEAR(f_at(2.0), 0.25, 0.0375);
}

TEST(RootLocus, BranchEscapesAsDelayVanishes) {
  const std::vector<double> taus{0.12, 0.2, 0.3, 0.5};
  const auto curves = root_locus(ctx(), 0.5, taus, kBox, {}, 1);
  for (const auto& c : curves) {
    if (c.family != Family::DelayBorn) continue;
    for (const auto& p : c.points) {
      if (p.tau < 0.15) {
        EXPECT_LT(p.frequency().khz() * p.tau, 0.45) << "at tau " << p.tau;
      }
    }
  }
  const auto low = lowest_unstable(find_roots(ctx(), 0.5, 0.12, kBox).roots);
  EXPECT_FALSE(low.has_value()) << "f ~ 1/(2 tau) = 4.2 kHz lies beyond the box";
}

TEST(CriticalDelay, MidpointCutoffsMatchPublishedDelays) {
  const double f_c[3] = {0.5, 0.33, 0.25};
  const double tau_ref[3] = {1.0, 1.5, 2.0};
  double prev = 0;
  for (int k = 0; k < 3; ++k) {
    const auto cd = critical_delay(ctx(), 0.5, Frequency::from_khz(f_c[k]));
    ASSERT_TRUE(cd.found);
    std::printf("f_c %.2f kHz: tau_crit %.4f ms via %s\n", f_c[k], cd.tau, to_string(cd.piece));
    EXPECT_NEAR(cd.tau, tau_ref[k], 0.15 * tau_ref[k]);
    EXPECT_GT(cd.tau, prev);
    prev = cd.tau;
    EXPECT_LT(ctx().relative_residual(cd.s, 0.5, cd.tau), 1e-9);
    EXPECT_GE(cd.s.real(), -1e-8);
    EXPECT_LE(cd.frequency_khz(), f_c[k] * (1 + 1e-9));
  }
}

TEST(CriticalDelay, RuleOfThumbAcrossInterfacePositions) {
  for (double alpha : {0.2, 0.5, 0.8}) {
    for (double fc : {0.5, 0.33, 0.25}) {
      const auto cd = critical_delay(ctx(), alpha, Frequency::from_khz(fc));
      ASSERT_TRUE(cd.found);
      EXPECT_GE(cd.tau * fc, 0.42) << alpha << " " << fc;
      EXPECT_LE(cd.tau * fc, 0.58) << alpha << " " << fc;
    }
  }
}

TEST(CriticalDelay, ImaginaryAxisCrossingsStayOnTheAxis) {
  const auto cd = critical_delay(ctx(), 1.0 / 60, Frequency::from_khz(0.25));
  ASSERT_TRUE(cd.found);
  EXPECT_EQ(cd.piece, BoundaryPiece::ImaginaryAxis);
  EXPECT_LT(std::abs(cd.s.real()), 1e-8);
  EXPECT_LT(ctx().relative_residual(cd.s, 1.0 / 60, cd.tau), 1e-9);
}

TEST(CriticalDelay, ReportsStableUpToRange) {
  CriticalDelayOptions opt;
  opt.tau_max = 0.5;
  const auto cd = critical_delay(ctx(), 0.5, Frequency::from_khz(0.5), opt);
  EXPECT_FALSE(cd.found);
  EXPECT_THROW(critical_delay(ctx(), 0.5, Frequency::from_khz(0.0)), std::invalid_argument);
}

TEST(StabilityBoundary, FlatInteriorAndStiffenedEnds) {
  std::vector<double> alphas;
  for (int n = 1; n < 60; ++n) alphas.push_back(n / 60.0);
  CriticalDelayOptions opt;
  opt.tau_max = 3.0;
  const auto curve = stability_boundary(ctx(), Frequency::from_khz(0.5), alphas, opt);
  ASSERT_EQ(curve.size(), alphas.size());
  double lo = 1e9, hi = 0;
  for (const auto& p : curve) {
    EXPECT_TRUE(p.error.empty());
    if (p.alpha >= 0.15 && p.alpha <= 0.85) {
      ASSERT_TRUE(p.critical.found);
      lo = std::min(lo, p.critical.tau);
      hi = std::max(hi, p.critical.tau);
    }
  }
  EXPECT_LT(hi / lo, 1.15);
  // Next to the clamp and the tip the cut-off system tolerates far more delay.
  for (const auto& p : {curve.front(), curve.back()}) {
    EXPECT_TRUE(!p.critical.found || p.critical.tau > 2 * hi);
  }
}

TEST(StabilityBoundary, SmallerCutoffNeedsLargerDelay) {
  const std::vector<double> alphas{0.3, 0.5, 0.7};
  const auto a = stability_boundary(ctx(), Frequency::from_khz(0.5), alphas);
  const auto b = stability_boundary(ctx(), Frequency::from_khz(0.33), alphas);
  const auto c = stability_boundary(ctx(), Frequency::from_khz(0.25), alphas);
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    EXPECT_LT(a[k].critical.tau, b[k].critical.tau);
    EXPECT_LT(b[k].critical.tau, c[k].critical.tau);
  }
}
