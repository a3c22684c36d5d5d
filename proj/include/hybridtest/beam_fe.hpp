#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridtest/errors.hpp"
#include "hybridtest/units.hpp"

namespace hybridtest::fe {

/// Geometry, material and Rayleigh damping of a uniform rectangular beam.
/// Units: E in kg/(ms^2 mm), rho in kg/mm^3, lengths in mm, zeta_m in 1/ms,
/// zeta_k in ms.
class BeamProperties {
 public:
  BeamProperties(double E, double rho, double b, double h, double L, double zeta_m = 0.0,
                 double zeta_k = 0.0)
      : E_(E), rho_(rho), b_(b), h_(h), L_(L), zeta_m_(zeta_m), zeta_k_(zeta_k) {
    if (!(E > 0) || !(rho > 0) || !(b > 0) || !(h > 0) || !(L > 0)) {
      throw std::invalid_argument("beam E, rho, b, h and L must be strictly positive");
    }
    if (!(zeta_m >= 0) || !(zeta_k >= 0)) {
      throw std::invalid_argument("beam damping coefficients must be non-negative");
    }
  }

  /// The steel ruler of the reference experiment.
  static BeamProperties steel_ruler() {
    return BeamProperties(217.0, 8.21e-6, 25.4, 1.0, 530.0, 0.0009, 0.07);
  }

  double E() const { return E_; }
  double rho() const { return rho_; }
  double b() const { return b_; }
  double h() const { return h_; }
  double L() const { return L_; }
  double zeta_m() const { return zeta_m_; }
  double zeta_k() const { return zeta_k_; }

  double area() const { return b_ * h_; }
  double second_moment() const { return b_ * h_ * h_ * h_ / 12.0; }
  double bending_stiffness() const { return E_ * second_moment(); }
  double mass_per_length() const { return rho_ * area(); }

  BeamProperties with_length(double L) const {
    return BeamProperties(E_, rho_, b_, h_, L, zeta_m_, zeta_k_);
  }
  BeamProperties with_damping(double zeta_m, double zeta_k) const {
    return BeamProperties(E_, rho_, b_, h_, L_, zeta_m, zeta_k);
  }
  BeamProperties with_damping_scale(double scale) const {
    return with_damping(zeta_m_ * scale, zeta_k_ * scale);
  }

 private:
  double E_, rho_, b_, h_, L_, zeta_m_, zeta_k_;
};

struct ElementMatrices {
  Eigen::Matrix4d mass;
  Eigen::Matrix4d stiffness;
};

/// Hermite-cubic Euler-Bernoulli element with consistent mass.
/// Local DOF order: (u_1, phi_1, u_2, phi_2).
inline ElementMatrices element_matrices(const BeamProperties& props, double le) {
  if (!(le > 0)) throw std::invalid_argument("element length must be positive");
  const double l = le, l2 = le * le;
  ElementMatrices em;
  em.mass << 156, 22 * l, 54, -13 * l,
             22 * l, 4 * l2, 13 * l, -3 * l2,
             54, 13 * l, 156, -22 * l,
             -13 * l, -3 * l2, -22 * l, 4 * l2;
  em.mass *= props.mass_per_length() * le / 420.0;
  em.stiffness << 12, 6 * l, -12, 6 * l,
                  6 * l, 4 * l2, -6 * l, 2 * l2,
                  -12, -6 * l, 12, -6 * l,
                  6 * l, 2 * l2, -6 * l, 4 * l2;
  em.stiffness *= props.bending_stiffness() / (l2 * le);
  return em;
}

enum class EndCondition { Free, Clamped };

/// Which end of the meshed span is constrained. A clamped end removes both
/// nodal DOFs from the model.
struct BoundaryCondition {
  EndCondition left = EndCondition::Clamped;
  EndCondition right = EndCondition::Free;

  static constexpr BoundaryCondition clamped_free() { return {EndCondition::Clamped, EndCondition::Free}; }
  static constexpr BoundaryCondition clamped_clamped() { return {EndCondition::Clamped, EndCondition::Clamped}; }
  static constexpr BoundaryCondition free_free() { return {EndCondition::Free, EndCondition::Free}; }
  static constexpr BoundaryCondition free_clamped() { return {EndCondition::Free, EndCondition::Clamped}; }

  bool operator==(const BoundaryCondition&) const = default;
};

/// Assembled beam model over its free DOFs (two per node: deflection in mm,
/// rotation in rad). Constrained DOFs are eliminated.
struct FEModel {
  BeamProperties props;
  std::vector<double> node_coords;
  BoundaryCondition bc;
  /// Per node, the global index of (u, phi), or -1 when constrained.
  std::vector<std::array<int, 2>> dof_map;
  Eigen::MatrixXd M, C, K;

  int n_nodes() const { return static_cast<int>(node_coords.size()); }
  int n_elements() const { return n_nodes() - 1; }
  int size() const { return static_cast<int>(M.rows()); }
  int dof(int node, int local) const { return dof_map.at(node)[local]; }
  double length() const { return node_coords.back() - node_coords.front(); }
};

/// Assemble over an arbitrary ascending mesh. The span may be a piece of a
/// longer beam; props.L() is not consulted.
inline FEModel assemble_mesh(const BeamProperties& props, std::vector<double> coords,
                             BoundaryCondition bc) {
  if (coords.size() < 2) throw std::invalid_argument("mesh needs at least one element");
  for (std::size_t i = 1; i < coords.size(); ++i) {
    if (!(coords[i] > coords[i - 1])) throw std::invalid_argument("mesh coordinates must ascend");
  }
  const int nn = static_cast<int>(coords.size());
  std::vector<std::array<int, 2>> dof_map(nn, {-1, -1});
  int next = 0;
  for (int node = 0; node < nn; ++node) {
    const bool fixed = (node == 0 && bc.left == EndCondition::Clamped) ||
                       (node == nn - 1 && bc.right == EndCondition::Clamped);
    if (!fixed) dof_map[node] = {next, next + 1}, next += 2;
  }
  if (next == 0) throw std::invalid_argument("boundary conditions leave no free DOFs");

  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(next, next);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(next, next);
  for (int e = 0; e + 1 < nn; ++e) {
    const auto em = element_matrices(props, coords[e + 1] - coords[e]);
    const std::array<int, 4> map{dof_map[e][0], dof_map[e][1], dof_map[e + 1][0], dof_map[e + 1][1]};
    for (int a = 0; a < 4; ++a) {
      if (map[a] < 0) continue;
      for (int c = 0; c < 4; ++c) {
        if (map[c] < 0) continue;
        M(map[a], map[c]) += em.mass(a, c);
        K(map[a], map[c]) += em.stiffness(a, c);
      }
    }
  }
  Eigen::MatrixXd C = props.zeta_m() * M + props.zeta_k() * K;
  return FEModel{props, std::move(coords), bc, std::move(dof_map), std::move(M), std::move(C),
                 std::move(K)};
}

inline std::vector<double> uniform_mesh(double length, int n_elements) {
  std::vector<double> coords(n_elements + 1);
  for (int i = 0; i <= n_elements; ++i) coords[i] = length * i / n_elements;
  return coords;
}

/// Uniform mesh of n_elements over the full beam length.
inline FEModel assemble(const BeamProperties& props, int n_elements,
                        BoundaryCondition bc = BoundaryCondition::clamped_free()) {
  if (n_elements < 2) throw std::invalid_argument("n_elements must be at least 2");
  return assemble_mesh(props, uniform_mesh(props.L(), n_elements), bc);
}

struct Mode {
  Frequency frequency;  ///< undamped natural frequency |lambda| / 2 pi
  double damping_ratio;
  std::complex<double> eigenvalue;  ///< upper-half-plane eigenvalue, 1/ms
};

/// All 2n eigenvalues of the damped pencil s^2 M + s C + K, from the
/// first-order state-space form.
inline Eigen::VectorXcd pencil_eigenvalues(const FEModel& model) {
  const int n = model.size();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  const Eigen::LLT<Eigen::MatrixXd> mass(model.M);
  if (mass.info() != Eigen::Success) throw NumericalFailure("mass matrix not positive definite");
  A.topRightCorner(n, n).setIdentity();
  A.bottomLeftCorner(n, n) = -mass.solve(model.K);
  A.bottomRightCorner(n, n) = -mass.solve(model.C);

  Eigen::EigenSolver<Eigen::MatrixXd> solver(A, false);
  if (solver.info() != Eigen::Success) {
    throw NumericalFailure("state-space eigen-solve did not converge (dimension " +
                           std::to_string(2 * n) + ")");
  }
  return solver.eigenvalues();
}

/// The k lowest modes of the damped pencil. Overdamped (real) eigenvalues
/// are skipped.
inline std::vector<Mode> natural_frequencies(const FEModel& model, int k) {
  if (k < 1 || k > model.size()) throw std::invalid_argument("requested mode count out of range");
  std::vector<std::complex<double>> upper;
  for (const auto& lambda : pencil_eigenvalues(model)) {
    if (lambda.imag() > 1e-12 * std::abs(lambda)) upper.push_back(lambda);
  }
  std::sort(upper.begin(), upper.end(),
            [](auto a, auto b) { return std::abs(a) < std::abs(b); });
  if (static_cast<int>(upper.size()) < k) {
    throw NumericalFailure("only " + std::to_string(upper.size()) +
                           " oscillatory modes available, " + std::to_string(k) + " requested");
  }
  std::vector<Mode> modes;
  for (int i = 0; i < k; ++i) {
    const double wn = std::abs(upper[i]);
    modes.push_back({Frequency::from_angular(wn), -upper[i].real() / wn, upper[i]});
  }
  return modes;
}

/// beta_n L for the clamped-free Euler-Bernoulli beam.
inline constexpr std::array<double, 10> kCantileverRoots{
    1.875104068711961, 4.694091132974175, 7.854757438237613, 10.99554073487547,
    14.13716839104647, 17.27875953208824, 20.42035225104125, 23.56194490180644,
    26.70353755551829, 29.84513020910325};

/// Closed-form undamped cantilever frequencies.
inline std::vector<Frequency> analytic_cantilever_frequencies(const BeamProperties& props, int k) {
  if (k < 1 || k > static_cast<int>(kCantileverRoots.size())) {
    throw std::invalid_argument("analytic cantilever roots tabulated for k <= 10 only");
  }
  const double scale = std::sqrt(props.bending_stiffness() / props.mass_per_length()) /
                       (props.L() * props.L());
  std::vector<Frequency> out;
  for (int i = 0; i < k; ++i) {
    out.push_back(Frequency::from_angular(kCantileverRoots[i] * kCantileverRoots[i] * scale));
  }
  return out;
}

}  // namespace hybridtest::fe
