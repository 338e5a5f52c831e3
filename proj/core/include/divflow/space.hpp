#pragma once

#include "divflow/mesh.hpp"
#include "divflow/quadrature.hpp"
#include "divflow/types.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace divflow {

enum class SpaceKind { BDM, DgPressure, Lagrange };

/// Basis evaluation at one reference point of one cell, mapped to physical
/// coordinates (contravariant Piola for BDM with the per-cell edge-orientation
/// signs folded in; affine map for scalars). Gradients and hessians are taken
/// with respect to physical coordinates.
struct VectorBasisPoint {
  DenseMatrix value;             // 2 x ndof
  std::vector<Mat2> grad;        // per dof: grad(i,j) = d value_i / d x_j
  Vector div;                    // ndof
  std::vector<std::array<Mat2, 2>> hess; // per dof, per component: d2/dx_a dx_b
};

struct ScalarBasisPoint {
  Vector value;                  // ndof
  DenseMatrix grad;              // 2 x ndof
  std::vector<Mat2> hess;        // per dof
};

/// Finite element space bound to a mesh: BDM_k velocities, discontinuous
/// P_{k-1} pressures, continuous Lagrange P_k scalars (k = 1 or 2).
class SpaceDescriptor {
public:
  SpaceKind kind;
  int degree;              // polynomial degree of the space itself
  MeshPtr mesh;
  int ndofs = 0;
  int dofs_per_cell = 0;

  int cell_dof(int t, int j) const { return cell_dofs_[static_cast<size_t>(t) * dofs_per_cell + j]; }
  double cell_sign(int t, int j) const { return cell_signs_[static_cast<size_t>(t) * dofs_per_cell + j]; }

  /// Global dofs sitting on edge e (BDM: the k+1 normal moments; Lagrange:
  /// endpoint/midpoint nodes). Empty for the pressure space.
  std::vector<int> edge_dofs(int e) const;

  void eval_vector(int t, const std::vector<Vec2>& ref_pts,
                   std::vector<VectorBasisPoint>& out, bool want_hessian = false) const;
  void eval_scalar(int t, const std::vector<Vec2>& ref_pts,
                   std::vector<ScalarBasisPoint>& out, bool want_hessian = false) const;

  /// Cached-table variants: reference values at the rule's points are computed
  /// once per (space kind, degree, rule); only the per-cell map is applied.
  void eval_vector_rule(int t, const QuadratureRule& rule, std::vector<VectorBasisPoint>& out,
                        bool want_hessian = false) const;
  void eval_scalar_rule(int t, const QuadratureRule& rule, std::vector<ScalarBasisPoint>& out,
                        bool want_hessian = false) const;
  /// Traces along edge `local_edge` of cell t at the points of an edge rule;
  /// the rule parameter runs lo -> hi of the global edge, `flip` indicates the
  /// local traversal is opposite.
  void eval_vector_edge(int t, int local_edge, bool flip, const QuadratureRule& edge_rule,
                        std::vector<VectorBasisPoint>& out, bool want_hessian = false) const;
  void eval_scalar_edge(int t, int local_edge, bool flip, const QuadratureRule& edge_rule,
                        std::vector<ScalarBasisPoint>& out, bool want_hessian = false) const;

  /// Physical coordinates of Lagrange nodes, indexed by global dof.
  Vec2 lagrange_node(int dof) const;

  static std::shared_ptr<const SpaceDescriptor> bdm(MeshPtr mesh, int k);
  static std::shared_ptr<const SpaceDescriptor> pressure(MeshPtr mesh, int k);
  static std::shared_ptr<const SpaceDescriptor> lagrange(MeshPtr mesh, int k);

private:
  std::vector<int> cell_dofs_;
  std::vector<double> cell_signs_;
  void map_vector_point(int t, const DenseMatrix& rv, const std::vector<Mat2>& rg,
                        const std::vector<std::array<Mat2, 2>>* rh, VectorBasisPoint& bp) const;
  void map_scalar_point(int t, const Vector& rv, const DenseMatrix& rg,
                        const std::vector<Mat2>* rh, ScalarBasisPoint& bp) const;
  friend struct SpaceBuilder;
};

using SpacePtr = std::shared_ptr<const SpaceDescriptor>;

/// Legendre polynomial P_m on [-1,1] (m <= 4).
double legendre(int m, double x);

/// Reference-element BDM data, exposed for verification: basis values/divergence
/// on the unit triangle, edge endpoints (local edge i runs v[(i+1)%3] ->
/// v[(i+2)%3]), outward unit normals and lengths.
namespace refelem {
int bdm_ndofs(int k);
void bdm_eval(int k, const Vec2& ref_pt, DenseMatrix& value /*2 x n*/, Vector& div);
Vec2 edge_start(int i);
Vec2 edge_end(int i);
Vec2 edge_normal(int i);
double edge_length(int i);
} // namespace refelem

} // namespace divflow
