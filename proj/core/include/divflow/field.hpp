#pragma once

#include "divflow/space.hpp"

#include <functional>
#include <optional>

namespace divflow {

using VectorFn = std::function<Vec2(const Vec2&)>;
using ScalarFn = std::function<double(const Vec2&)>;

/// Coefficient vector over a function space.
struct DiscreteField {
  SpacePtr space;
  Vector coeffs;

  DiscreteField() = default;
  explicit DiscreteField(SpacePtr s) : space(std::move(s)) {
    coeffs = Vector::Zero(space->ndofs);
  }
  DiscreteField(SpacePtr s, Vector c) : space(std::move(s)), coeffs(std::move(c)) {
    require(coeffs.size() == space->ndofs, "DiscreteField: coefficient size mismatch");
  }
};

struct VelocitySample {
  Vec2 value;
  Mat2 grad;   // grad(i,j) = d u_i / d x_j
  double div;
};

struct ScalarSample {
  double value;
  Vec2 grad;
};

/// Evaluation inside a known cell (ref coordinates on the unit triangle).
VelocitySample eval_velocity(const DiscreteField& f, int tri, const Vec2& ref);
ScalarSample eval_scalar(const DiscreteField& f, int tri, const Vec2& ref);

struct VelocitySample2 {
  Vec2 value;
  Mat2 grad;
  double div;
  Vec2 lap; // componentwise Laplacian
};
struct ScalarSample2 {
  double value;
  Vec2 grad;
  double lap;
};

/// Batched samples at the points of a cached quadrature rule (fast path).
void velocity_samples(const DiscreteField& f, int tri, const QuadratureRule& rule,
                      std::vector<VelocitySample>& out);
void scalar_samples(const DiscreteField& f, int tri, const QuadratureRule& rule,
                    std::vector<ScalarSample>& out);
void velocity_samples2(const DiscreteField& f, int tri, const QuadratureRule& rule,
                       std::vector<VelocitySample2>& out);
void scalar_samples2(const DiscreteField& f, int tri, const QuadratureRule& rule,
                     std::vector<ScalarSample2>& out);

/// Traces along edge e from side 0/1 at the points of an edge rule (global
/// lo->hi parametrization).
void velocity_edge_samples(const DiscreteField& f, int edge, int side,
                           const QuadratureRule& erule, std::vector<VelocitySample>& out);
void scalar_edge_samples(const DiscreteField& f, int edge, int side, const QuadratureRule& erule,
                         std::vector<ScalarSample>& out);

/// Evaluation at a physical point via point location on the field's mesh.
VelocitySample eval_velocity_at(const DiscreteField& f, const Vec2& x);
ScalarSample eval_scalar_at(const DiscreteField& f, const Vec2& x);

/// Canonical BDM interpolant: edge dofs are moments of f.n against Legendre
/// polynomials up to degree k; interior dofs (k = 2) are the reference interior
/// moments of the pulled-back field.
DiscreteField bdm_interpolate(const SpacePtr& space, const VectorFn& f);

/// Nodal interpolant into the continuous Lagrange space.
DiscreteField lagrange_interpolate(const SpacePtr& space, const ScalarFn& f);

/// Element-wise L^2 projection into the discontinuous pressure space.
DiscreteField l2_project(const SpacePtr& space, const ScalarFn& f);

/// Canonical interpolation of an evaluated field onto a space over a different
/// mesh covering the same domain (BDM moments / nodal values / local L^2).
DiscreteField transfer_field(const DiscreteField& f, const SpacePtr& target);

/// Prescribed degrees of freedom with values (strong Dirichlet data).
struct BoundaryValues {
  std::vector<int> dofs;
  std::vector<double> values;

  void append(int dof, double v) {
    dofs.push_back(dof);
    values.push_back(v);
  }
};

/// Normal-component data for BDM: constrains every boundary-edge moment dof to
/// the corresponding moment of g.n (outward normal).
BoundaryValues velocity_normal_bc(const SpacePtr& space, const VectorFn& g);

/// Dirichlet data for Lagrange scalars on boundary edges selected by tag;
/// `tag_filter` empty means the whole boundary.
BoundaryValues lagrange_dirichlet_bc(const SpacePtr& space, const ScalarFn& g,
                                     const std::vector<int>& tag_filter = {});

} // namespace divflow
