#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "hybridtest/beam_fe.hpp"
#include "hybridtest/errors.hpp"
#include "hybridtest/units.hpp"

namespace hybridtest::substructure {

using cplx = std::complex<double>;

/// Below this reciprocal condition estimate the bulk block counts as singular.
inline constexpr double kNearPoleRcond = 1e-12;

enum class Side { Numerical, Physical };

/// One side of a partitioned beam. The span is meshed as its own model with
/// the interface end left free; `interface` and `bulk` index into that model.
struct SubModel {
  Side side;
  fe::FEModel model;
  std::array<int, 2> interface;  ///< (deflection, rotation)
  std::vector<int> bulk;
  std::vector<int> parent_bulk;  ///< parent DOF index of each entry of `bulk`
  double length() const { return model.length(); }
};

struct Partition {
  fe::FEModel parent;
  int interface_node;
  std::array<int, 2> parent_interface;
  SubModel numerical;
  SubModel physical;

  double interface_position() const {
    return parent.node_coords[interface_node] - parent.node_coords.front();
  }
  /// Interface position as a fraction of the beam length, L_N / L.
  double alpha() const { return numerical.length() / parent.length(); }
  /// L_N / L_P.
  double length_ratio() const { return numerical.length() / physical.length(); }
};

/// 2x2 interface dynamic stiffness at a Laplace point. Row/column order is
/// (deflection, rotation).
struct CondensedInterface {
  cplx s;
  Eigen::Matrix2cd D;
};

inline Eigen::MatrixXcd dynamic_stiffness(const fe::FEModel& model, cplx s) {
  return (s * s) * model.M.cast<cplx>() + s * model.C.cast<cplx>() + model.K.cast<cplx>();
}

namespace detail {

inline Eigen::MatrixXcd select(const Eigen::MatrixXcd& A, const std::vector<int>& rows,
                               const std::vector<int>& cols) {
  Eigen::MatrixXcd out(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = A(rows[r], cols[c]);
  return out;
}

inline SubModel make_sub_model(const fe::FEModel& parent, int interface_node, Side side) {
  const auto& xs = parent.node_coords;
  const bool numerical = side == Side::Numerical;
  std::vector<double> coords = numerical
      ? std::vector<double>(xs.begin(), xs.begin() + interface_node + 1)
      : std::vector<double>(xs.begin() + interface_node, xs.end());
  fe::BoundaryCondition bc = numerical
      ? fe::BoundaryCondition{parent.bc.left, fe::EndCondition::Free}
      : fe::BoundaryCondition{fe::EndCondition::Free, parent.bc.right};
  auto model = fe::assemble_mesh(parent.props, std::move(coords), bc);

  const int local_iface = numerical ? model.n_nodes() - 1 : 0;
  const int offset = numerical ? 0 : interface_node;
  SubModel sub{side, std::move(model), {}, {}, {}};
  sub.interface = {sub.model.dof(local_iface, 0), sub.model.dof(local_iface, 1)};
  for (int node = 0; node < sub.model.n_nodes(); ++node) {
    if (node == local_iface) continue;
    for (int l = 0; l < 2; ++l) {
      const int d = sub.model.dof(node, l);
      if (d < 0) continue;
      sub.bulk.push_back(d);
      sub.parent_bulk.push_back(parent.dof(node + offset, l));
    }
  }
  return sub;
}

}  // namespace detail

/// Split a model at an interior node into the numerical (root) side and the
/// physical (tip) side.
inline Partition partition(const fe::FEModel& model, int interface_node) {
  if (interface_node <= 0 || interface_node >= model.n_nodes() - 1) {
    throw std::invalid_argument("interface node must be strictly interior");
  }
  Partition p{model, interface_node,
              {model.dof(interface_node, 0), model.dof(interface_node, 1)},
              detail::make_sub_model(model, interface_node, Side::Numerical),
              detail::make_sub_model(model, interface_node, Side::Physical)};
  return p;
}

/// Node closest to a position measured from the first node.
inline int nearest_node(const fe::FEModel& model, double position) {
  const double x = model.node_coords.front() + position;
  auto it = std::min_element(model.node_coords.begin(), model.node_coords.end(),
                             [x](double a, double b) { return std::abs(a - x) < std::abs(b - x); });
  return static_cast<int>(it - model.node_coords.begin());
}

/// Schur complement of a full dynamic stiffness onto the given interface DOFs.
inline Eigen::MatrixXcd condense_matrix(const Eigen::MatrixXcd& D, const std::vector<int>& iface,
                                        const std::vector<int>& bulk, cplx s) {
  const auto Dii = detail::select(D, iface, iface);
  if (bulk.empty()) return Dii;
  const auto Dbb = detail::select(D, bulk, bulk);
  const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(Dbb);
  const double rc = lu.rcond();
  if (!(rc >= kNearPoleRcond)) throw NearPoleError(s, rc);
  return Dii - detail::select(D, iface, bulk) * lu.solve(detail::select(D, bulk, iface));
}

/// D_ii - D_ib D_bb^-1 D_bi, by a dense pivoted solve.
inline CondensedInterface condense(const SubModel& part, cplx s) {
  const auto D = dynamic_stiffness(part.model, s);
  const std::vector<int> iface{part.interface[0], part.interface[1]};
  return {s, condense_matrix(D, iface, part.bulk, s)};
}

/// Bulk forcing moved onto the interface: F_i - D_ib D_bb^-1 F_b.
inline Eigen::Vector2cd condense_force(const SubModel& part, cplx s, const Eigen::VectorXcd& F_bulk,
                                       const Eigen::Vector2cd& F_iface) {
  if (F_bulk.size() != static_cast<Eigen::Index>(part.bulk.size())) {
    throw std::invalid_argument("bulk force size does not match the bulk DOF count");
  }
  if (part.bulk.empty() || F_bulk.isZero(0.0)) return F_iface;
  const auto D = dynamic_stiffness(part.model, s);
  const std::vector<int> iface{part.interface[0], part.interface[1]};
  const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(detail::select(D, part.bulk, part.bulk));
  const double rc = lu.rcond();
  if (!(rc >= kNearPoleRcond)) throw NearPoleError(s, rc);
  return F_iface - detail::select(D, iface, part.bulk) * lu.solve(F_bulk);
}

/// Interface response of the coupled structure, (D_N + D_P)^-1 F.
inline Eigen::Vector2cd hybrid_frf(const CondensedInterface& DN, const CondensedInterface& DP,
                                   const Eigen::Vector2cd& F) {
  if (std::abs(DN.s - DP.s) > 1e-12 * (1.0 + std::abs(DN.s))) {
    throw std::invalid_argument("condensed matrices evaluated at different Laplace points");
  }
  const Eigen::Matrix2cd sum = DN.D + DP.D;
  const Eigen::FullPivLU<Eigen::Matrix2cd> lu(sum);
  if (!(lu.rcond() > 1e-14)) throw NumericalFailure("coupled interface stiffness is singular");
  return lu.solve(F);
}

/// Undamped eigenfrequencies of the bulk block with the interface DOFs fixed.
inline std::vector<Frequency> clamped_interface_modes(const SubModel& part, int k) {
  const int nb = static_cast<int>(part.bulk.size());
  if (k < 1 || k > nb) throw std::invalid_argument("requested mode count exceeds bulk dimension");
  Eigen::MatrixXd Kbb(nb, nb), Mbb(nb, nb);
  for (int r = 0; r < nb; ++r)
    for (int c = 0; c < nb; ++c) {
      Kbb(r, c) = part.model.K(part.bulk[r], part.bulk[c]);
      Mbb(r, c) = part.model.M(part.bulk[r], part.bulk[c]);
    }
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(Kbb, Mbb);
  if (solver.info() != Eigen::Success) throw NumericalFailure("clamped-interface eigen-solve failed");
  std::vector<Frequency> out;
  for (int i = 0; i < k; ++i) {
    out.push_back(Frequency::from_angular(std::sqrt(std::max(0.0, solver.eigenvalues()(i)))));
  }
  return out;
}

/// Condensation of a beam span by eliminating nodes one at a time from the far
/// end towards the interface. The bulk of a beam is block tridiagonal, so this
/// is O(n) and also yields log det(D_bb) as a sum of 2x2 pivot log-determinants.
class ChainCondenser {
 public:
  struct Result {
    Eigen::Matrix2cd D;
    cplx log_det_bulk;
  };

  explicit ChainCondenser(const SubModel& part) {
    const auto& m = part.model;
    const bool numerical = part.side == Side::Numerical;
    far_clamped_ = numerical ? m.bc.left == fe::EndCondition::Clamped
                             : m.bc.right == fe::EndCondition::Clamped;
    zeta_m_ = m.props.zeta_m();
    zeta_k_ = m.props.zeta_k();
    const int ne = m.n_elements();
    for (int k = 0; k < ne; ++k) {
      // Element k counted from the far end; local order (far node, near node).
      const int e = numerical ? k : ne - 1 - k;
      auto em = fe::element_matrices(m.props, m.node_coords[e + 1] - m.node_coords[e]);
      if (!numerical) {
        Eigen::PermutationMatrix<4> swap;
        swap.indices() << 2, 3, 0, 1;
        em.mass = swap * em.mass * swap.transpose();
        em.stiffness = swap * em.stiffness * swap.transpose();
      }
      elements_.push_back(em);
    }
  }

  Result condense(cplx s) const {
    Eigen::Matrix2cd S = Eigen::Matrix2cd::Zero();
    cplx log_det = 0.0;
    std::size_t first = 0;
    if (far_clamped_) {
      S = element_dynamic_stiffness(elements_[0], s).bottomRightCorner<2, 2>();
      first = 1;
    }
    for (std::size_t k = first; k < elements_.size(); ++k) {
      const Eigen::Matrix4cd De = element_dynamic_stiffness(elements_[k], s);
      const Eigen::Matrix2cd pivot = S + De.topLeftCorner<2, 2>();
      const cplx det = pivot.determinant();
      log_det += std::log(det);
      const Eigen::Matrix2cd inv_pivot = pivot.inverse();
      S = De.bottomRightCorner<2, 2>() -
          De.bottomLeftCorner<2, 2>() * (inv_pivot * De.topRightCorner<2, 2>());
    }
    return {S, log_det};
  }

 private:
  Eigen::Matrix4cd element_dynamic_stiffness(const fe::ElementMatrices& em, cplx s) const {
    const cplx c_mass = s * s + s * zeta_m_;
    const cplx c_stiff = 1.0 + s * zeta_k_;
    return c_mass * em.mass.cast<cplx>() + c_stiff * em.stiffness.cast<cplx>();
  }

  std::vector<fe::ElementMatrices> elements_;
  bool far_clamped_ = false;
  double zeta_m_ = 0.0, zeta_k_ = 0.0;
};

}  // namespace hybridtest::substructure
