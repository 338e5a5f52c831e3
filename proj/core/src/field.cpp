#include "divflow/field.hpp"

#include "divflow/quadrature.hpp"

#include <set>

namespace divflow {
namespace {

constexpr int kInterpQuadDegree = 12;

Vec2 ref_from_bary(const std::array<double, 3>& b) { return {b[1], b[2]}; }

} // namespace

VelocitySample eval_velocity(const DiscreteField& f, int tri, const Vec2& ref) {
  const SpaceDescriptor& s = *f.space;
  std::vector<VectorBasisPoint> bp;
  s.eval_vector(tri, {ref}, bp);
  VelocitySample out{Vec2::Zero(), Mat2::Zero(), 0.0};
  for (int j = 0; j < s.dofs_per_cell; ++j) {
    const double c = f.coeffs[s.cell_dof(tri, j)];
    out.value += c * bp[0].value.col(j);
    out.grad += c * bp[0].grad[j];
    out.div += c * bp[0].div[j];
  }
  return out;
}

ScalarSample eval_scalar(const DiscreteField& f, int tri, const Vec2& ref) {
  const SpaceDescriptor& s = *f.space;
  std::vector<ScalarBasisPoint> bp;
  s.eval_scalar(tri, {ref}, bp);
  ScalarSample out{0.0, Vec2::Zero()};
  for (int j = 0; j < s.dofs_per_cell; ++j) {
    const double c = f.coeffs[s.cell_dof(tri, j)];
    out.value += c * bp[0].value(j);
    out.grad += c * bp[0].grad.col(j);
  }
  return out;
}

void velocity_samples(const DiscreteField& f, int tri, const QuadratureRule& rule,
                      std::vector<VelocitySample>& out) {
  const SpaceDescriptor& s = *f.space;
  thread_local std::vector<VectorBasisPoint> bp;
  s.eval_vector_rule(tri, rule, bp);
  out.resize(bp.size());
  for (size_t q = 0; q < bp.size(); ++q) {
    VelocitySample v{Vec2::Zero(), Mat2::Zero(), 0.0};
    for (int j = 0; j < s.dofs_per_cell; ++j) {
      const double c = f.coeffs[s.cell_dof(tri, j)];
      v.value += c * bp[q].value.col(j);
      v.grad += c * bp[q].grad[j];
      v.div += c * bp[q].div[j];
    }
    out[q] = v;
  }
}

void scalar_samples(const DiscreteField& f, int tri, const QuadratureRule& rule,
                    std::vector<ScalarSample>& out) {
  const SpaceDescriptor& s = *f.space;
  thread_local std::vector<ScalarBasisPoint> bp;
  s.eval_scalar_rule(tri, rule, bp);
  out.resize(bp.size());
  for (size_t q = 0; q < bp.size(); ++q) {
    ScalarSample v{0.0, Vec2::Zero()};
    for (int j = 0; j < s.dofs_per_cell; ++j) {
      const double c = f.coeffs[s.cell_dof(tri, j)];
      v.value += c * bp[q].value(j);
      v.grad += c * bp[q].grad.col(j);
    }
    out[q] = v;
  }
}

void velocity_samples2(const DiscreteField& f, int tri, const QuadratureRule& rule,
                       std::vector<VelocitySample2>& out) {
  const SpaceDescriptor& s = *f.space;
  thread_local std::vector<VectorBasisPoint> bp;
  s.eval_vector_rule(tri, rule, bp, true);
  out.resize(bp.size());
  for (size_t q = 0; q < bp.size(); ++q) {
    VelocitySample2 v{Vec2::Zero(), Mat2::Zero(), 0.0, Vec2::Zero()};
    for (int j = 0; j < s.dofs_per_cell; ++j) {
      const double c = f.coeffs[s.cell_dof(tri, j)];
      v.value += c * bp[q].value.col(j);
      v.grad += c * bp[q].grad[j];
      v.div += c * bp[q].div[j];
      v.lap.x() += c * (bp[q].hess[j][0](0, 0) + bp[q].hess[j][0](1, 1));
      v.lap.y() += c * (bp[q].hess[j][1](0, 0) + bp[q].hess[j][1](1, 1));
    }
    out[q] = v;
  }
}

void scalar_samples2(const DiscreteField& f, int tri, const QuadratureRule& rule,
                     std::vector<ScalarSample2>& out) {
  const SpaceDescriptor& s = *f.space;
  thread_local std::vector<ScalarBasisPoint> bp;
  s.eval_scalar_rule(tri, rule, bp, true);
  out.resize(bp.size());
  for (size_t q = 0; q < bp.size(); ++q) {
    ScalarSample2 v{0.0, Vec2::Zero(), 0.0};
    for (int j = 0; j < s.dofs_per_cell; ++j) {
      const double c = f.coeffs[s.cell_dof(tri, j)];
      v.value += c * bp[q].value(j);
      v.grad += c * bp[q].grad.col(j);
      v.lap += c * (bp[q].hess[j](0, 0) + bp[q].hess[j](1, 1));
    }
    out[q] = v;
  }
}

void velocity_edge_samples(const DiscreteField& f, int edge, int side,
                           const QuadratureRule& erule, std::vector<VelocitySample>& out) {
  const SpaceDescriptor& s = *f.space;
  const Mesh& m = *s.mesh;
  const int tri = m.edges[edge].tri[side];
  require(tri >= 0, "velocity_edge_samples: no such side");
  const int le = m.local_edge_index(tri, edge);
  const bool flip = !m.local_edge_matches_global(tri, le);
  thread_local std::vector<VectorBasisPoint> bp;
  s.eval_vector_edge(tri, le, flip, erule, bp);
  out.resize(bp.size());
  for (size_t q = 0; q < bp.size(); ++q) {
    VelocitySample v{Vec2::Zero(), Mat2::Zero(), 0.0};
    for (int j = 0; j < s.dofs_per_cell; ++j) {
      const double c = f.coeffs[s.cell_dof(tri, j)];
      v.value += c * bp[q].value.col(j);
      v.grad += c * bp[q].grad[j];
      v.div += c * bp[q].div[j];
    }
    out[q] = v;
  }
}

void scalar_edge_samples(const DiscreteField& f, int edge, int side, const QuadratureRule& erule,
                         std::vector<ScalarSample>& out) {
  const SpaceDescriptor& s = *f.space;
  const Mesh& m = *s.mesh;
  const int tri = m.edges[edge].tri[side];
  require(tri >= 0, "scalar_edge_samples: no such side");
  const int le = m.local_edge_index(tri, edge);
  const bool flip = !m.local_edge_matches_global(tri, le);
  thread_local std::vector<ScalarBasisPoint> bp;
  s.eval_scalar_edge(tri, le, flip, erule, bp);
  out.resize(bp.size());
  for (size_t q = 0; q < bp.size(); ++q) {
    ScalarSample v{0.0, Vec2::Zero()};
    for (int j = 0; j < s.dofs_per_cell; ++j) {
      const double c = f.coeffs[s.cell_dof(tri, j)];
      v.value += c * bp[q].value(j);
      v.grad += c * bp[q].grad.col(j);
    }
    out[q] = v;
  }
}

VelocitySample eval_velocity_at(const DiscreteField& f, const Vec2& x) {
  const auto loc = f.space->mesh->locate_point(x);
  return eval_velocity(f, loc.tri, ref_from_bary(loc.bary));
}

ScalarSample eval_scalar_at(const DiscreteField& f, const Vec2& x) {
  const auto loc = f.space->mesh->locate_point(x);
  return eval_scalar(f, loc.tri, ref_from_bary(loc.bary));
}

DiscreteField bdm_interpolate(const SpacePtr& space, const VectorFn& f) {
  require(space->kind == SpaceKind::BDM, "bdm_interpolate: BDM space required");
  const Mesh& m = *space->mesh;
  const int k = space->degree;
  const int per_edge = k + 1;
  DiscreteField out(space);
  const auto& erule = quadrature_rule(QuadEntity::Edge, kInterpQuadDegree);
  for (int e = 0; e < m.num_edges(); ++e) {
    const Vec2 a = m.vertices[m.edges[e].v[0]];
    const Vec2 b = m.vertices[m.edges[e].v[1]];
    const Vec2 n = m.edge_normal(e);
    const double len = m.edges[e].length;
    for (int q = 0; q < erule.size(); ++q) {
      const double t = erule.points[q].x();
      const Vec2 x = a + t * (b - a);
      const double fn = f(x).dot(n);
      for (int mm = 0; mm < per_edge; ++mm)
        out.coeffs[e * per_edge + mm] +=
            len * erule.weights[q] * fn * legendre(mm, 2.0 * t - 1.0);
    }
  }
  if (k == 2) {
    const int base = m.num_edges() * per_edge;
    const auto& trule = quadrature_rule(QuadEntity::Triangle, kInterpQuadDegree);
    for (int t = 0; t < m.num_triangles(); ++t) {
      const Mat2 B = m.jacobian(t);
      const double J = B.determinant();
      const Mat2 pullback = J * B.inverse();
      for (int q = 0; q < trule.size(); ++q) {
        const Vec2 ref = trule.points[q];
        const Vec2 uhat = pullback * f(m.map_to_physical(t, ref));
        const double w = trule.weights[q];
        out.coeffs[base + 3 * t + 0] += w * uhat.x();
        out.coeffs[base + 3 * t + 1] += w * uhat.y();
        out.coeffs[base + 3 * t + 2] += w * (-ref.y() * uhat.x() + ref.x() * uhat.y());
      }
    }
  }
  return out;
}

DiscreteField lagrange_interpolate(const SpacePtr& space, const ScalarFn& f) {
  require(space->kind == SpaceKind::Lagrange, "lagrange_interpolate: Lagrange space required");
  DiscreteField out(space);
  for (int d = 0; d < space->ndofs; ++d) out.coeffs[d] = f(space->lagrange_node(d));
  return out;
}

DiscreteField l2_project(const SpacePtr& space, const ScalarFn& f) {
  require(space->kind == SpaceKind::DgPressure, "l2_project: pressure space required");
  const Mesh& m = *space->mesh;
  const int n = space->dofs_per_cell;
  DiscreteField out(space);
  const auto& rule = quadrature_rule(QuadEntity::Triangle, kInterpQuadDegree);
  std::vector<ScalarBasisPoint> bp;
  for (int t = 0; t < m.num_triangles(); ++t) {
    space->eval_scalar(t, rule.points, bp);
    DenseMatrix M = DenseMatrix::Zero(n, n);
    Vector rhs = Vector::Zero(n);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < rule.size(); ++q) {
      const double w = rule.weights[q] * J;
      M += w * bp[q].value * bp[q].value.transpose();
      rhs += w * f(m.map_to_physical(t, rule.points[q])) * bp[q].value;
    }
    Eigen::FullPivLU<DenseMatrix> lu(M);
    require(lu.isInvertible(), "l2_project: singular local mass matrix (degenerate triangle)");
    const Vector sol = lu.solve(rhs);
    for (int j = 0; j < n; ++j) out.coeffs[space->cell_dof(t, j)] = sol(j);
  }
  return out;
}

namespace {

/// Point evaluation of a source field, using the child->parent map when the
/// target mesh was refined directly from the source mesh.
struct SourceEvaluator {
  const DiscreteField& src;
  const Mesh& src_mesh;
  const Mesh* tgt_mesh = nullptr;
  bool nested = false;

  SourceEvaluator(const DiscreteField& f, const Mesh& target)
      : src(f), src_mesh(*f.space->mesh), tgt_mesh(&target) {
    nested = target.parent_mesh_id == src_mesh.mesh_id;
  }

  int source_tri(const Vec2& x, int tgt_tri) const {
    if (nested && tgt_tri >= 0) {
      const int p = tgt_mesh->triangles[tgt_tri].parent;
      if (p >= 0) {
        const auto b = src_mesh.barycentric(p, x);
        if (b[0] >= -1e-10 && b[1] >= -1e-10 && b[2] >= -1e-10) return p;
      }
    }
    return src_mesh.locate_point(x).tri;
  }

  Vec2 vec_value(const Vec2& x, int tgt_tri) const {
    const int t = source_tri(x, tgt_tri);
    const auto b = src_mesh.barycentric(t, x);
    return eval_velocity(src, t, ref_from_bary(b)).value;
  }
  double scal_value(const Vec2& x, int tgt_tri) const {
    const int t = source_tri(x, tgt_tri);
    const auto b = src_mesh.barycentric(t, x);
    return eval_scalar(src, t, ref_from_bary(b)).value;
  }
};

} // namespace

DiscreteField transfer_field(const DiscreteField& f, const SpacePtr& target) {
  require(f.space->kind == target->kind, "transfer_field: space kinds differ");
  const Mesh& tm = *target->mesh;
  SourceEvaluator se(f, tm);
  switch (target->kind) {
    case SpaceKind::BDM: {
      // identical mesh: reuse coefficients directly (moments coincide)
      if (f.space->mesh->mesh_id == tm.mesh_id && f.space->degree == target->degree)
        return DiscreteField(target, f.coeffs);
      return bdm_interpolate(target, [&](const Vec2& x) {
        const int t = se.source_tri(x, -1);
        const auto b = se.src_mesh.barycentric(t, x);
        return eval_velocity(f, t, ref_from_bary(b)).value;
      });
    }
    case SpaceKind::Lagrange: {
      if (f.space->mesh->mesh_id == tm.mesh_id && f.space->degree == target->degree)
        return DiscreteField(target, f.coeffs);
      DiscreteField out(target);
      for (int d = 0; d < target->ndofs; ++d)
        out.coeffs[d] = se.scal_value(target->lagrange_node(d), -1);
      return out;
    }
    case SpaceKind::DgPressure: {
      if (f.space->mesh->mesh_id == tm.mesh_id && f.space->degree == target->degree)
        return DiscreteField(target, f.coeffs);
      const int n = target->dofs_per_cell;
      DiscreteField out(target);
      const auto& rule = quadrature_rule(QuadEntity::Triangle, kInterpQuadDegree);
      std::vector<ScalarBasisPoint> bp;
      for (int t = 0; t < tm.num_triangles(); ++t) {
        target->eval_scalar(t, rule.points, bp);
        DenseMatrix M = DenseMatrix::Zero(n, n);
        Vector rhs = Vector::Zero(n);
        const double J = tm.jacobian(t).determinant();
        for (int q = 0; q < rule.size(); ++q) {
          const double w = rule.weights[q] * J;
          M += w * bp[q].value * bp[q].value.transpose();
          rhs += w * se.scal_value(tm.map_to_physical(t, rule.points[q]), t) * bp[q].value;
        }
        const Vector sol = M.fullPivLu().solve(rhs);
        for (int j = 0; j < n; ++j) out.coeffs[target->cell_dof(t, j)] = sol(j);
      }
      return out;
    }
  }
  throw Error("transfer_field: unreachable");
}

BoundaryValues velocity_normal_bc(const SpacePtr& space, const VectorFn& g) {
  require(space->kind == SpaceKind::BDM, "velocity_normal_bc: BDM space required");
  const Mesh& m = *space->mesh;
  const int per_edge = space->degree + 1;
  BoundaryValues out;
  const auto& erule = quadrature_rule(QuadEntity::Edge, kInterpQuadDegree);
  for (int e = 0; e < m.num_edges(); ++e) {
    if (!m.edges[e].on_boundary()) continue;
    const Vec2 a = m.vertices[m.edges[e].v[0]];
    const Vec2 b = m.vertices[m.edges[e].v[1]];
    const Vec2 n = m.edge_normal(e);
    const double len = m.edges[e].length;
    std::vector<double> mom(per_edge, 0.0);
    for (int q = 0; q < erule.size(); ++q) {
      const double t = erule.points[q].x();
      const double gn = g(a + t * (b - a)).dot(n);
      for (int mm = 0; mm < per_edge; ++mm)
        mom[mm] += len * erule.weights[q] * gn * legendre(mm, 2.0 * t - 1.0);
    }
    for (int mm = 0; mm < per_edge; ++mm) out.append(e * per_edge + mm, mom[mm]);
  }
  return out;
}

BoundaryValues lagrange_dirichlet_bc(const SpacePtr& space, const ScalarFn& g,
                                     const std::vector<int>& tag_filter) {
  require(space->kind == SpaceKind::Lagrange, "lagrange_dirichlet_bc: Lagrange space required");
  const Mesh& m = *space->mesh;
  std::set<int> dofs;
  for (int e = 0; e < m.num_edges(); ++e) {
    const auto& ed = m.edges[e];
    if (!ed.on_boundary()) continue;
    if (!tag_filter.empty() &&
        std::find(tag_filter.begin(), tag_filter.end(), ed.boundary_tag) == tag_filter.end())
      continue;
    for (int d : space->edge_dofs(e)) dofs.insert(d);
  }
  BoundaryValues out;
  for (int d : dofs) out.append(d, g(space->lagrange_node(d)));
  return out;
}

} // namespace divflow
