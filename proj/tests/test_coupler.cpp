#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "hybridtest/coupler.hpp"

using namespace hybridtest;
using namespace hybridtest::coupler;

namespace {

constexpr double kDl = 30.0;

struct Setup {
  substructure::Partition parts;
  NumericalSide ns;
};

Setup experiment(double damping_scale = 3.0, double force = 4.776e-5) {
  const auto base = fe::BeamProperties::steel_ruler();
  const auto numerical = fe::assemble(base, 53);
  const auto physical = fe::assemble(base.with_damping_scale(damping_scale), 53);
  const int node = substructure::nearest_node(numerical, 170.0);
  auto pn = substructure::partition(numerical, node);
  auto pp = substructure::partition(physical, node);
  pn.physical = pp.physical;
  return {pn, NumericalSide{pn.numerical, force}};
}

rig::RigConfig ideal_rig(const substructure::SubModel& physical) {
  auto cfg = rig::RigConfig::around(physical);
  cfg.noise.mains_amplitude = 0.0;
  cfg.noise.white_sigma = 0.0;
  cfg.filter.enabled = false;
  for (auto& a : cfg.actuators) a.lag = 0.0;
  return cfg;
}

CouplerConfig ideal_coupler() {
  CouplerConfig c;
  c.compensation_angle = 0.0;
  return c;
}

/// Measured harmonics built from a given interface state.
HarmonicVector measured_from(Frequency w, const Eigen::Vector2cd& U, const Eigen::Vector2cd& F_dof) {
  HarmonicVector m(w, rig::interface_channel_names(), 1);
  m.set(0, 1, U(0));
  m.set(1, 1, U(1));
  m.set(2, 1, F_dof(0));
  m.set(3, 1, -F_dof(1));
  return m;
}

double displacement_distance(const Eigen::Vector2cd& a, const Eigen::Vector2cd& b) {
  return std::hypot(std::abs(a(0) - b(0)), kDl * std::abs(a(1) - b(1)));
}

}  // namespace

TEST(CouplerConfigCheck, DefaultsAndSweepGrid) {
  const CouplerConfig c;
  EXPECT_TRUE(c.validation_errors().empty());
  EXPECT_EQ(c.n_periods, 30);
  EXPECT_DOUBLE_EQ(c.transient_tol, 0.013);
  EXPECT_DOUBLE_EQ(c.convergence_tol, 0.02);
  EXPECT_EQ(c.max_iter, 100);
  const auto f = c.frequencies();
  ASSERT_EQ(f.size(), 31u);
  EXPECT_NEAR(f.front().hz(), 16.0, 1e-9);
  EXPECT_NEAR(f.back().hz(), 19.0, 1e-9);
}

TEST(CouplerConfigCheck, ListsAllErrors) {
  CouplerConfig c;
  c.transient_tol = 0.05;
  c.max_iter = 0;
  c.n_harmonics = 0;
  c.broyden.step_damping = 2.0;
  EXPECT_EQ(c.validation_errors().size(), 4u);
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Residual, ConstructedFixedPointIsZero) {
  const auto s = experiment();
  const Frequency w = Frequency::from_hz(17.3);
  const std::vector<Eigen::Matrix2cd> DN{Eigen::Matrix2cd::Zero(), s.ns.D(w, 1)};
  const Eigen::Vector2cd U(0.3, cplx(-0.002, 0.001));
  const Eigen::Vector2cd F = s.ns.external(1) - DN[1] * U;
  const auto R = residual(measured_from(w, U, F), DN, s.ns);
  EXPECT_LT(residual_norm(R, kDl), 1e-15);
}

TEST(Residual, MonolithicSolutionIsAFixedPoint) {
  const auto s = experiment();
  for (double hz : {16.0, 17.6, 18.5, 19.0}) {
    const Frequency w = Frequency::from_hz(hz);
    const cplx sl(0.0, w.angular());
    const std::vector<Eigen::Matrix2cd> DN{Eigen::Matrix2cd::Zero(), s.ns.D(w, 1)};
    const Eigen::Matrix2cd DP = substructure::condense(s.parts.physical, sl).D;
    const Eigen::Vector2cd U = reference_response(s.ns, s.parts.physical, w);
    const auto R = residual(measured_from(w, U, DP * U), DN, s.ns);
    EXPECT_LT(residual_norm(R, kDl), 1e-10) << hz << " Hz";
  }
}

TEST(Residual, RestStateGivesStaticOffset) {
  const auto s = experiment();
  const Frequency w = Frequency::from_hz(16.5);
  const std::vector<Eigen::Matrix2cd> DN{Eigen::Matrix2cd::Zero(), s.ns.D(w, 1)};
  const auto R = residual(measured_from(w, Eigen::Vector2cd::Zero(), Eigen::Vector2cd::Zero()), DN, s.ns);
  const Eigen::Vector2cd expected = -DN[1].fullPivLu().solve(s.ns.external(1));
  EXPECT_LT(std::abs(R(0, 1) - expected(0)), 1e-15);
  EXPECT_LT(std::abs(R(1, 1) - expected(1)), 1e-17);
  EXPECT_GT(residual_norm(R, kDl), 0.0);
}

TEST(Residual, SingularNumericalSideNamesHarmonic) {
  const auto s = experiment();
  const Frequency w = Frequency::from_hz(17.0);
  const std::vector<Eigen::Matrix2cd> DN{Eigen::Matrix2cd::Zero(), s.ns.D(w, 1), Eigen::Matrix2cd::Zero()};
  HarmonicVector m(w, rig::interface_channel_names(), 2);
  try {
    residual(m, DN, s.ns);
    FAIL() << "expected a numerical failure";
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("harmonic 2"), std::string::npos);
  }
}

TEST(Residual, NormScalesRotationByLaserSeparation) {
  HarmonicVector R(Frequency::from_hz(17.0), displacement_channels(), 1);
  R.set(0, 1, {0.03, 0.0});
  R.set(1, 1, {0.0, 0.001});
  EXPECT_NEAR(residual_norm(R, kDl), std::hypot(0.03, 0.03), 1e-15);
  const std::vector<Eigen::Matrix2cd> DN{Eigen::Matrix2cd::Zero(), Eigen::Matrix2cd::Identity()};
  const auto flat = flatten_residual(R, DN, ResidualForm::Displacement, kDl);
  EXPECT_NEAR(flat.norm(), residual_norm(R, kDl), 1e-15);
  const auto force = flatten_residual(R, DN, ResidualForm::Force, kDl);
  EXPECT_NEAR(force(3), 0.001 / kDl, 1e-18);
}

TEST(Residual, VoltageFlatteningRoundTrips) {
  Eigen::MatrixXcd V = Eigen::MatrixXcd::Zero(2, 3);
  V << 0.0, cplx(1, 2), cplx(3, 4), 0.0, cplx(5, 6), cplx(7, 8);
  const auto x = flatten_voltage(V);
  ASSERT_EQ(x.size(), 8);
  EXPECT_EQ(unflatten_voltage(x), V);
}

TEST(SteadyCheck, Tolerance) {
  EXPECT_TRUE(steady_check({0.5, 0.5}, 0.013));
  EXPECT_FALSE(steady_check({0.50, 0.52}, 0.013));
  EXPECT_TRUE(steady_check({1.0, 0.3, 0.305}, 0.013));
  EXPECT_THROW(steady_check({0.5}, 0.013), std::invalid_argument);
}

TEST(SteadyCheck, LightDampingWaitsLonger) {
  auto blocks = [](double scale, double hz) {
    const auto s = experiment(scale);
    rig::VirtualRig r(ideal_rig(s.parts.physical));
    CouplerConfig c = ideal_coupler();
    c.n_periods = 5;
    c.transient_tol = 1e-4;
    c.convergence_tol = 1e-4;
    c.max_wait_blocks = 200;
    HybridTest ht(s.ns, r, c);
    const auto sf = snap_frequency(Frequency::from_hz(hz), r.dt());
    const std::vector<Eigen::Matrix2cd> DN{Eigen::Matrix2cd::Zero(), s.ns.D(sf.omega, 1)};
    Eigen::MatrixXcd V = Eigen::MatrixXcd::Zero(2, 2);
    V(0, 1) = 0.1;
    return ht.evaluate(V, sf, DN).blocks;
  };
  for (double hz : {16.0, 18.0}) EXPECT_GT(blocks(1.0, hz), blocks(3.0, hz)) << hz << " Hz";
}

TEST(Broyden, ExactInverseSolvesLinearMapInOneStep) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Eigen::MatrixXd A(4, 4);
  for (auto& a : A.reshaped()) a = g(rng);
  A += 4 * Eigen::MatrixXd::Identity(4, 4);
  const Eigen::Vector4d xs(1, -2, 0.5, 3);
  BroydenState st;
  st.H = A.inverse();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  x = broyden_step(st, x, A * (x - xs));
  EXPECT_LT((A * (x - xs)).norm(), 1e-12);
}

TEST(Broyden, SuperlinearFromScaledIdentity) {
  Eigen::MatrixXd A(4, 4);
  A << 3.0, 0.4, 0.0, 0.1, -0.2, 2.5, 0.3, 0.0, 0.1, 0.0, 2.0, -0.4, 0.0, 0.2, 0.1, 3.5;
  const Eigen::Vector4d xs(0.3, -1, 2, 0.7);
  BroydenState st;
  st.H = Eigen::MatrixXd::Identity(4, 4) / 3.0;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  std::vector<double> norms;
  for (int it = 0; it < 12; ++it) {
    const Eigen::VectorXd f = A * (x - xs);
    norms.push_back(f.norm());
    if (norms.back() < 1e-13) break;
    x = broyden_step(st, x, f);
  }
  ASSERT_LT(norms.back(), 1e-10);
  for (std::size_t i = 3; i < norms.size(); ++i) EXPECT_LT(norms[i], norms[i - 1]) << "iteration " << i;
  // Superlinear: the contraction ratio itself shrinks towards the end.
  const std::size_t n = norms.size();
  EXPECT_LT(norms[n - 1] / norms[n - 2], norms[n - 3] / norms[n - 4]);
}

TEST(Broyden, RandomEightDimensionalPlant) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd A(8, 8);
    for (auto& a : A.reshaped()) a = 0.3 * g(rng);
    A += Eigen::MatrixXd::Identity(8, 8);
    Eigen::VectorXd xs(8);
    for (auto& v : xs) v = g(rng);
    // Initial inverse from a finite-difference probe of the linear plant.
    BroydenState st;
    Eigen::MatrixXd J(8, 8);
    for (int j = 0; j < 8; ++j) J.col(j) = A.col(j) * (1.0 + 0.2 * g(rng));
    st.H = J.inverse();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(8);
    int it = 0;
    for (; it < 25; ++it) {
      const Eigen::VectorXd f = A * (x - xs);
      if (f.norm() < 1e-10) break;
      x = broyden_step(st, x, f);
    }
    EXPECT_LT((A * (x - xs)).norm(), 1e-10) << "trial " << trial;
    EXPECT_LE(it, 25);
  }
}

TEST(Broyden, DegenerateUpdateIsSkipped) {
  BroydenState st;
  st.H = Eigen::MatrixXd::Identity(2, 2);
  broyden_update(st, Eigen::Vector2d(1, 1), Eigen::Vector2d(0.5, 0.5));
  broyden_update(st, Eigen::Vector2d(1, 1), Eigen::Vector2d(0.7, 0.1));
  EXPECT_EQ(st.skipped_updates, 1);
  EXPECT_EQ(st.H, Eigen::MatrixXd::Identity(2, 2));
  st.min_change = 1.0;
  broyden_update(st, Eigen::Vector2d(2, 1), Eigen::Vector2d(0.8, 0.1));
  EXPECT_EQ(st.skipped_updates, 2);
  BroydenState blank;
  EXPECT_THROW(broyden_step(blank, Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 1)), std::logic_error);
}

TEST(SyncMetrics, PerfectSynchronisation) {
  const Eigen::Vector2cd U(cplx(0.5, 0.2), cplx(0.001, -0.003)), F(cplx(1e-4, 2e-5), cplx(-0.02, 0.01));
  const auto m = sync_metrics(Frequency::from_hz(17.6), U, F, U, F);
  for (const auto& c : m) {
    EXPECT_TRUE(c.defined);
    EXPECT_EQ(c.delay, 0.0);
    EXPECT_EQ(c.amplification, 0.0);
  }
}

TEST(SyncMetrics, UncompensatedLagShowsAsDelay) {
  const Frequency w = Frequency::from_hz(17.6);
  const Eigen::Vector2cd U(cplx(0.5, 0.2), cplx(0.001, -0.003)), F(cplx(1e-4, 2e-5), cplx(-0.02, 0.01));
  const cplx lag = std::polar(1.0, -0.06);
  const auto m = sync_metrics(w, U, F, U, lag * F);
  const double expected = 0.06 / (2 * std::numbers::pi * 0.0176);
  EXPECT_NEAR(expected, 0.54, 0.005);
  EXPECT_NEAR(m[2].delay, expected, 1e-12);
  EXPECT_NEAR(m[3].delay, expected, 1e-12);
  EXPECT_NEAR(m[0].delay, 0.0, 1e-15);
  EXPECT_NEAR(m[2].amplification, 0.0, 1e-14);
}

TEST(SyncMetrics, VanishingReferenceIsUndefined) {
  const Eigen::Vector2cd zero = Eigen::Vector2cd::Zero(), one(1.0, 1.0);
  const auto m = sync_metrics(Frequency::from_hz(17.6), zero, one, one, one);
  EXPECT_FALSE(m[0].defined);
  EXPECT_FALSE(m[1].defined);
  EXPECT_TRUE(m[2].defined);
  EXPECT_TRUE(std::isnan(m[0].delay));
}

TEST(SolvePoint, IdealRigReproducesMonolithicResponse) {
  const auto s = experiment();
  rig::VirtualRig r(ideal_rig(s.parts.physical));
  HybridTest ht(s.ns, r, ideal_coupler());
  Eigen::MatrixXcd V0 = Eigen::MatrixXcd::Zero(2, 2);
  V0(0, 1) = 0.1;
  const auto rec = ht.solve_point(Frequency::from_hz(16.0), V0);
  ASSERT_TRUE(rec.converged);
  EXPECT_LT(rec.residual_norm, 0.02);
  EXPECT_EQ(rec.probes, 4);
  const Eigen::Vector2cd ref = reference_response(s.ns, s.parts.physical, rec.omega);
  EXPECT_LT(displacement_distance(measured_displacement(rec.measured, 1), ref), 0.02);
  // Recomputing the residual from the stored harmonics reproduces the record.
  const auto R = residual(rec.measured, rec.DN, s.ns);
  EXPECT_NEAR(residual_norm(R, kDl), rec.residual_norm, 1e-15);
  EXPECT_FALSE(rec.residual_history.empty());
}

TEST(SolvePoint, NoisyRigConvergesAboveNoiseFloor) {
  const auto s = experiment();
  rig::VirtualRig r(rig::RigConfig::around(s.parts.physical));
  HybridTest ht(s.ns, r, CouplerConfig{});
  Eigen::MatrixXcd V0 = Eigen::MatrixXcd::Zero(2, 2);
  V0(0, 1) = 0.1;
  const auto rec = ht.solve_point(Frequency::from_hz(16.0), V0);
  EXPECT_TRUE(rec.converged);
  EXPECT_LT(rec.residual_norm, 0.02);
  EXPECT_LE(rec.iterations, 100);
}

TEST(SolvePoint, ResidualFormsShareTheFixedPoint) {
  const auto s = experiment();
  auto run = [&](ResidualForm form) {
    rig::VirtualRig r(ideal_rig(s.parts.physical));
    CouplerConfig c = ideal_coupler();
    c.form = form;
    c.convergence_tol = 1e-4;
    c.transient_tol = 1e-5;
    c.max_wait_blocks = 60;
    c.broyden.secant_floor = 0.0;
    HybridTest ht(s.ns, r, c);
    Eigen::MatrixXcd V0 = Eigen::MatrixXcd::Zero(2, 2);
    V0(0, 1) = 0.1;
    return ht.solve_point(Frequency::from_hz(17.0), V0);
  };
  const auto d = run(ResidualForm::Displacement);
  const auto f = run(ResidualForm::Force);
  ASSERT_TRUE(d.converged);
  ASSERT_TRUE(f.converged);
  EXPECT_LT(displacement_distance(measured_displacement(d.measured, 1), measured_displacement(f.measured, 1)),
            0.02);
  EXPECT_LT((d.V - f.V).norm(), 0.01 * d.V.norm());
}

TEST(SolvePoint, SecondHarmonicIsOrthogonal) {
  const auto s = experiment();
  auto run = [&](int nh) {
    rig::VirtualRig r(ideal_rig(s.parts.physical));
    CouplerConfig c = ideal_coupler();
    c.n_harmonics = nh;
    HybridTest ht(s.ns, r, c);
    Eigen::MatrixXcd V0 = Eigen::MatrixXcd::Zero(2, 2);
    V0(0, 1) = 0.1;
    return ht.solve_point(Frequency::from_hz(17.2), V0);
  };
  const auto one = run(1), two = run(2);
  ASSERT_TRUE(one.converged);
  ASSERT_TRUE(two.converged);
  EXPECT_EQ(two.V.cols(), 3);
  EXPECT_LT(std::abs(std::abs(one.measured.at("deflection", 1)) - std::abs(two.measured.at("deflection", 1))),
            0.02);
  EXPECT_LT(std::abs(two.measured.at("deflection", 2)), 0.02);
}

TEST(Sweep, DeterministicAndWarmStarted) {
  const auto s = experiment();
  CouplerConfig c;
  c.f_start = Frequency::from_hz(17.0);
  c.f_stop = Frequency::from_hz(17.2);
  auto run = [&] {
    rig::VirtualRig r(rig::RigConfig::around(s.parts.physical));
    HybridTest ht(s.ns, r, c);
    return ht.sweep(c.frequencies());
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].V, b[i].V);
    EXPECT_EQ(a[i].measured.coefficients(), b[i].measured.coefficients());
    EXPECT_EQ(a[i].iterations, b[i].iterations);
    EXPECT_EQ(a[i].residual_norm, b[i].residual_norm);
  }
  EXPECT_EQ(a[0].probes, 4);
  EXPECT_EQ(a[1].probes, 0);
  EXPECT_THROW(HybridTest(s.ns, *std::make_unique<rig::VirtualRig>(rig::RigConfig::around(s.parts.physical)), c)
                   .sweep({Frequency::from_hz(17.0), Frequency::from_hz(16.0)}),
               std::invalid_argument);
}

TEST(Calibration, PeakMatchesTarget) {
  const auto s = experiment();
  const CouplerConfig c;
  const double F = calibrate_forcing(s.parts.numerical, s.parts.physical, c.frequencies(), 1.0);
  double peak = 0;
  const NumericalSide ns{s.parts.numerical, F};
  for (const auto& f : c.frequencies()) peak = std::max(peak, std::abs(reference_response(ns, s.parts.physical, f)(0)));
  EXPECT_NEAR(peak, 1.0, 1e-12);
  EXPECT_THROW(calibrate_forcing(s.parts.numerical, s.parts.physical, c.frequencies(), 0.0), std::invalid_argument);
}
