#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <functional>

#include "hybridtest/beam_fe.hpp"

using namespace hybridtest;
using fe::BeamProperties;
using fe::BoundaryCondition;

namespace {

BeamProperties ruler() { return BeamProperties::steel_ruler(); }

// Hermite shape functions and second derivatives on [0, le].
double shape(int i, double x, double le) {
  const double xi = x / le;
  switch (i) {
    case 0: return 1 - 3 * xi * xi + 2 * xi * xi * xi;
    case 1: return le * (xi - 2 * xi * xi + xi * xi * xi);
    case 2: return 3 * xi * xi - 2 * xi * xi * xi;
    default: return le * (-xi * xi + xi * xi * xi);
  }
}

double shape_dd(int i, double x, double le) {
  const double xi = x / le;
  switch (i) {
    case 0: return (-6 + 12 * xi) / (le * le);
    case 1: return (-4 + 6 * xi) / le;
    case 2: return (6 - 12 * xi) / (le * le);
    default: return (-2 + 6 * xi) / le;
  }
}

double integrate(const std::function<double(double)>& f, double le) {
  return boost::math::quadrature::gauss<double, 10>::integrate(f, 0.0, le);
}

}  // namespace

TEST(BeamProperties, DerivedSectionQuantities) {
  const auto p = ruler();
  EXPECT_DOUBLE_EQ(p.area(), 25.4);
  EXPECT_DOUBLE_EQ(p.second_moment(), 25.4 / 12.0);
  EXPECT_THROW(BeamProperties(0, 1, 1, 1, 1), std::invalid_argument);
  EXPECT_THROW(BeamProperties(1, 1, 1, 1, 1, -1e-3, 0), std::invalid_argument);
}

TEST(ElementMatrices, CanonicalStiffnessEntries) {
  const auto p = ruler();
  const double le = 10.0;
  const auto em = fe::element_matrices(p, le);
  const double EI = p.bending_stiffness();
  EXPECT_NEAR(em.stiffness(0, 0), 12 * EI / (le * le * le), 1e-15);
  EXPECT_NEAR(em.stiffness(0, 2), -12 * EI / (le * le * le), 1e-15);
  EXPECT_TRUE(em.stiffness.isApprox(em.stiffness.transpose(), 0.0));
  EXPECT_TRUE(em.mass.isApprox(em.mass.transpose(), 0.0));
  EXPECT_THROW(fe::element_matrices(p, 0.0), std::invalid_argument);
}

TEST(ElementMatrices, RigidTranslationIsInStiffnessNullSpace) {
  const auto em = fe::element_matrices(ruler(), 7.5);
  const Eigen::Vector4d rigid(1, 0, 1, 0);
  EXPECT_LT((em.stiffness * rigid).norm(), 1e-14);
}

TEST(ElementMatrices, MassAndStiffnessMatchShapeFunctionQuadrature) {
  const auto p = ruler();
  const double le = 12.5;
  const auto em = fe::element_matrices(p, le);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double m = p.mass_per_length() *
                       integrate([&](double x) { return shape(i, x, le) * shape(j, x, le); }, le);
      const double k = p.bending_stiffness() *
                       integrate([&](double x) { return shape_dd(i, x, le) * shape_dd(j, x, le); }, le);
      EXPECT_NEAR(em.mass(i, j), m, 1e-12 * em.mass.norm());
      EXPECT_NEAR(em.stiffness(i, j), k, 1e-12 * em.stiffness.norm());
    }
  }
  const Eigen::Vector4d rigid(1, 0, 1, 0);
  EXPECT_NEAR(rigid.dot(em.mass * rigid), p.mass_per_length() * le, 1e-15);
}

TEST(Assemble, DofCountsFollowBoundaryConditions) {
  const auto p = ruler();
  EXPECT_EQ(fe::assemble(p, 10).size(), 20);
  EXPECT_EQ(fe::assemble(p, 10, BoundaryCondition::clamped_clamped()).size(), 18);
  EXPECT_EQ(fe::assemble(p, 10, BoundaryCondition::free_free()).size(), 22);
  EXPECT_THROW(fe::assemble(p, 1), std::invalid_argument);
}

TEST(Assemble, DampingIsExactlyRayleigh) {
  const auto model = fe::assemble(ruler(), 17);
  const Eigen::MatrixXd expected = model.props.zeta_m() * model.M + model.props.zeta_k() * model.K;
  EXPECT_EQ((model.C - expected).norm(), 0.0);
  EXPECT_EQ((model.M - model.M.transpose()).norm(), 0.0);
  EXPECT_EQ((model.K - model.K.transpose()).norm(), 0.0);

  const auto undamped = fe::assemble(ruler().with_damping(0, 0), 9);
  EXPECT_EQ(undamped.C.norm(), 0.0);
}

TEST(Assemble, ClampedModelIsPositiveDefinite) {
  const auto model = fe::assemble(ruler(), 12);
  EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(model.M).info(), Eigen::Success);
  EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(model.K).info(), Eigen::Success);
}

TEST(NaturalFrequencies, MatchAnalyticCantileverAt80Elements) {
  const auto p = ruler();
  const auto modes = fe::natural_frequencies(fe::assemble(p, 80), 3);
  const auto exact = fe::analytic_cantilever_frequencies(p, 3);
  for (int i = 0; i < 3; ++i) {
    const double rel = modes[i].frequency.khz() / exact[i].khz() - 1.0;
    std::printf("mode %d: FE %.5f Hz, analytic %.5f Hz, rel %.2e\n", i + 1,
                modes[i].frequency.hz(), exact[i].hz(), rel);
    EXPECT_LT(std::abs(rel), 1e-3);
  }
}

TEST(NaturalFrequencies, MeshRefinementConvergesFromAbove) {
  const auto p = ruler();
  const auto exact = fe::analytic_cantilever_frequencies(p, 3);
  const auto coarse = fe::natural_frequencies(fe::assemble(p, 20), 3);
  const auto fine = fe::natural_frequencies(fe::assemble(p, 40), 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_LT(std::abs(fine[i].frequency.khz() / coarse[i].frequency.khz() - 1.0), 1e-4);
    EXPECT_GE(coarse[i].frequency.khz(), fine[i].frequency.khz() * (1 - 1e-12));
    EXPECT_GE(fine[i].frequency.khz(), exact[i].khz() * (1 - 1e-10));
  }
}

TEST(NaturalFrequencies, DampingRatiosFollowRayleighFormula) {
  const auto p = ruler();
  const auto modes = fe::natural_frequencies(fe::assemble(p, 53), 4);
  for (const auto& m : modes) {
    const double w = m.frequency.angular();
    const double expected = p.zeta_m() / (2 * w) + p.zeta_k() * w / 2;
    EXPECT_NEAR(m.damping_ratio, expected, 1e-9);
    EXPECT_LE(m.eigenvalue.real(), 0.0);
  }
}

TEST(NaturalFrequencies, PassiveSpectrumHasNoPositiveRealPart) {
  const auto model = fe::assemble(ruler().with_damping_scale(2.5), 25);
  for (const auto& lambda : fe::pencil_eigenvalues(model)) EXPECT_LE(lambda.real(), 0.0);
}

TEST(NaturalFrequencies, RejectsBadModeCount) {
  const auto model = fe::assemble(ruler(), 4);
  EXPECT_THROW(fe::natural_frequencies(model, 0), std::invalid_argument);
  EXPECT_THROW(fe::natural_frequencies(model, 9), std::invalid_argument);
}

TEST(AnalyticCantilever, ClampedInterfaceLengthOf360) {
  const auto f = fe::analytic_cantilever_frequencies(ruler().with_length(360.0), 3);
  EXPECT_NEAR(f[0].hz(), 6.4, 0.1);
  EXPECT_NEAR(f[1].hz(), 40.2, 0.3);
  EXPECT_NEAR(f[2].hz(), 112.4, 0.8);
}

TEST(AnalyticCantilever, DoublingLengthQuartersFrequencies) {
  const auto a = fe::analytic_cantilever_frequencies(ruler(), 10);
  const auto b = fe::analytic_cantilever_frequencies(ruler().with_length(1060.0), 10);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(b[i].khz() * 4.0, a[i].khz(), 1e-15);
  EXPECT_THROW(fe::analytic_cantilever_frequencies(ruler(), 11), std::invalid_argument);
}

TEST(AnalyticCantilever, FullRulerValues) {
  const auto f = fe::analytic_cantilever_frequencies(ruler(), 3);
  std::printf("analytic 530 mm: %.4f %.4f %.4f Hz\n", f[0].hz(), f[1].hz(), f[2].hz());
  EXPECT_NEAR(f[0].hz(), 2.96, 0.02);
  EXPECT_NEAR(f[1].hz(), 18.5, 0.1);
  EXPECT_NEAR(f[2].hz(), 51.9, 0.3);
}
