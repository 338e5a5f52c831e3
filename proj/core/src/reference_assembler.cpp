#include "divflow/reference_assembler.hpp"

#include "divflow/quadrature.hpp"

namespace divflow {
namespace verify {
namespace {

constexpr int kRefDegree = 10;

// trace of every global basis function of `space` at physical point x, seen
// from triangle t (columns indexed by global dof)
void global_vector_trace(const SpacePtr& space, int t, const Vec2& x, DenseMatrix& value,
                         std::vector<Mat2>* grad) {
  const Mesh& m = *space->mesh;
  const auto b = m.barycentric(t, x);
  std::vector<VectorBasisPoint> bp;
  space->eval_vector(t, {Vec2(b[1], b[2])}, bp);
  value.setZero(2, space->ndofs);
  if (grad) grad->assign(space->ndofs, Mat2::Zero());
  for (int j = 0; j < space->dofs_per_cell; ++j) {
    const int g = space->cell_dof(t, j);
    value.col(g) += bp[0].value.col(j);
    if (grad) (*grad)[g] += bp[0].grad[j];
  }
}

void global_scalar_trace(const SpacePtr& space, int t, const Vec2& x, Vector& value,
                         DenseMatrix* grad) {
  const Mesh& m = *space->mesh;
  const auto b = m.barycentric(t, x);
  std::vector<ScalarBasisPoint> bp;
  space->eval_scalar(t, {Vec2(b[1], b[2])}, bp);
  value.setZero(space->ndofs);
  if (grad) grad->setZero(2, space->ndofs);
  for (int j = 0; j < space->dofs_per_cell; ++j) {
    const int g = space->cell_dof(t, j);
    value(g) += bp[0].value(j);
    if (grad) grad->col(g) += bp[0].grad.col(j);
  }
}

double field_value_at(const DiscreteField& f, int t, const Vec2& x) {
  const auto b = f.space->mesh->barycentric(t, x);
  return eval_scalar(f, t, Vec2(b[1], b[2])).value;
}

Vec2 vfield_value_at(const DiscreteField& f, int t, const Vec2& x) {
  const auto b = f.space->mesh->barycentric(t, x);
  return eval_velocity(f, t, Vec2(b[1], b[2])).value;
}

} // namespace

DenseMatrix ref_a1h(const DiscreteField* c_field, const SpacePtr& uspace,
                    const PhysicalParams& params) {
  const Mesh& m = *uspace->mesh;
  const int n = uspace->ndofs;
  DenseMatrix A = DenseMatrix::Zero(n, n);
  const auto& vr = quadrature_rule(QuadEntity::Triangle, kRefDegree);

  // volume: nu(c) grad(u) : grad(v)
  for (int t = 0; t < m.num_triangles(); ++t) {
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vr.size(); ++q) {
      const Vec2 x = m.map_to_physical(t, vr.points[q]);
      DenseMatrix val;
      std::vector<Mat2> grad;
      global_vector_trace(uspace, t, x, val, &grad);
      const double cv = c_field ? field_value_at(*c_field, t, x) : 0.0;
      const double nu = params.viscosity.value(cv, t, vr.points[q]);
      const double w = J * vr.weights[q] * nu;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          A(i, j) += w * grad[j].cwiseProduct(grad[i]).sum();
    }
  }

  // facets: - {nu grad(u) n}.[v] - {nu grad(v) n}.[u] + (a0/h) nu [u].[v]
  const auto& er = quadrature_rule(QuadEntity::Edge, kRefDegree);
  for (int e = 0; e < m.num_edges(); ++e) {
    const MeshEdge& ed = m.edges[e];
    if (ed.on_boundary() && params.slip_boundary) continue;
    const Vec2 a = m.vertices[ed.v[0]], b = m.vertices[ed.v[1]];
    const Vec2 N = m.edge_normal(e);
    const double he = ed.length;
    const double pen = (ed.on_boundary() ? params.boundary_penalty() : params.a0) / he;
    for (int q = 0; q < er.size(); ++q) {
      const Vec2 x = a + er.points[q].x() * (b - a);
      DenseMatrix v0, v1;
      std::vector<Mat2> g0, g1;
      global_vector_trace(uspace, ed.tri[0], x, v0, &g0);
      double nu;
      if (c_field)
        nu = params.viscosity.value(field_value_at(*c_field, ed.tri[0], x), ed.tri[0],
                                    Vec2::Zero());
      else if (params.viscosity.kind == ViscosityModel::Kind::Spatial)
        nu = params.viscosity.value(0.0, ed.tri[0],
                                    [&] {
                                      const auto bb = m.barycentric(ed.tri[0], x);
                                      return Vec2(bb[1], bb[2]);
                                    }());
      else
        nu = params.viscosity.value(0.0, 0, Vec2::Zero());
      const double w = he * er.weights[q] * nu;
      if (ed.on_boundary()) {
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const Vec2 ju = v0.col(j), jv = v0.col(i);
            const Vec2 gu = g0[j] * N, gv = g0[i] * N;
            A(i, j) += w * (-gu.dot(jv) - gv.dot(ju) + pen * ju.dot(jv));
          }
      } else {
        global_vector_trace(uspace, ed.tri[1], x, v1, &g1);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const Vec2 ju = v0.col(j) - v1.col(j);
            const Vec2 jv = v0.col(i) - v1.col(i);
            const Vec2 gu = 0.5 * (g0[j] + g1[j]) * N;
            const Vec2 gv = 0.5 * (g0[i] + g1[i]) * N;
            A(i, j) += w * (-gu.dot(jv) - gv.dot(ju) + pen * ju.dot(jv));
          }
      }
    }
  }
  return A;
}

DenseMatrix ref_c1h(const DiscreteField& w_field, const SpacePtr& uspace) {
  const Mesh& m = *uspace->mesh;
  const int n = uspace->ndofs;
  DenseMatrix A = DenseMatrix::Zero(n, n);
  const auto& vr = quadrature_rule(QuadEntity::Triangle, kRefDegree);
  for (int t = 0; t < m.num_triangles(); ++t) {
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vr.size(); ++q) {
      const Vec2 x = m.map_to_physical(t, vr.points[q]);
      DenseMatrix val;
      std::vector<Mat2> grad;
      global_vector_trace(uspace, t, x, val, &grad);
      const Vec2 wv = vfield_value_at(w_field, t, x);
      const double w = J * vr.weights[q];
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          A(i, j) += w * (grad[j] * wv).dot(val.col(i));
    }
  }
  // upwind: sum over elements K and their non-boundary edges, as defined:
  // int_{dK \ Gamma} 0.5 (w.n_K - |w.n_K|) (u^e - u).v
  const auto& er = quadrature_rule(QuadEntity::Edge, kRefDegree);
  for (int t = 0; t < m.num_triangles(); ++t) {
    for (int le = 0; le < 3; ++le) {
      const int e = m.tri_edges[t][le];
      const MeshEdge& ed = m.edges[e];
      if (ed.on_boundary()) continue;
      const int other = ed.tri[0] == t ? ed.tri[1] : ed.tri[0];
      // outward normal of K on this edge
      Vec2 nK = m.edge_normal(e);
      if (ed.tri[0] != t) nK = -nK;
      const Vec2 a = m.vertices[ed.v[0]], b = m.vertices[ed.v[1]];
      for (int q = 0; q < er.size(); ++q) {
        const Vec2 x = a + er.points[q].x() * (b - a);
        DenseMatrix vt, ve;
        global_vector_trace(uspace, t, x, vt, nullptr);
        global_vector_trace(uspace, other, x, ve, nullptr);
        const double wn = vfield_value_at(w_field, t, x).dot(nK);
        const double coeff = 0.5 * (wn - std::abs(wn));
        const double w = ed.length * er.weights[q] * coeff;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            A(i, j) += w * (ve.col(j) - vt.col(j)).dot(vt.col(i));
      }
    }
  }
  return A;
}

DenseMatrix ref_b(const SpacePtr& uspace, const SpacePtr& pspace, const PhysicalParams& params) {
  const Mesh& m = *uspace->mesh;
  DenseMatrix B = DenseMatrix::Zero(pspace->ndofs, uspace->ndofs);
  const auto& vr = quadrature_rule(QuadEntity::Triangle, kRefDegree);
  for (int t = 0; t < m.num_triangles(); ++t) {
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vr.size(); ++q) {
      const Vec2 x = m.map_to_physical(t, vr.points[q]);
      const auto bc = m.barycentric(t, x);
      const Vec2 ref(bc[1], bc[2]);
      std::vector<VectorBasisPoint> bu;
      uspace->eval_vector(t, {ref}, bu);
      Vector pv;
      global_scalar_trace(pspace, t, x, pv, nullptr);
      const double w = J * vr.weights[q] / params.rho_m;
      for (int i = 0; i < pspace->ndofs; ++i) {
        if (pv(i) == 0.0) continue;
        for (int j = 0; j < uspace->dofs_per_cell; ++j)
          B(i, uspace->cell_dof(t, j)) += w * pv(i) * bu[0].div[j];
      }
    }
  }
  return B;
}

DenseMatrix ref_a2(const SpacePtr& mspace, double diffusivity) {
  const Mesh& m = *mspace->mesh;
  const int n = mspace->ndofs;
  DenseMatrix A = DenseMatrix::Zero(n, n);
  const auto& vr = quadrature_rule(QuadEntity::Triangle, kRefDegree);
  for (int t = 0; t < m.num_triangles(); ++t) {
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vr.size(); ++q) {
      const Vec2 x = m.map_to_physical(t, vr.points[q]);
      Vector val;
      DenseMatrix grad;
      global_scalar_trace(mspace, t, x, val, &grad);
      const double w = diffusivity * J * vr.weights[q];
      A += w * grad.transpose() * grad;
    }
  }
  return A;
}

DenseMatrix ref_c2(const DiscreteField* advect, const Vec2& shift, const SpacePtr& mspace) {
  const Mesh& m = *mspace->mesh;
  const int n = mspace->ndofs;
  DenseMatrix A = DenseMatrix::Zero(n, n);
  const auto& vr = quadrature_rule(QuadEntity::Triangle, kRefDegree);
  for (int t = 0; t < m.num_triangles(); ++t) {
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vr.size(); ++q) {
      const Vec2 x = m.map_to_physical(t, vr.points[q]);
      Vector val;
      DenseMatrix grad;
      global_scalar_trace(mspace, t, x, val, &grad);
      Vec2 a = shift;
      if (advect) a += vfield_value_at(*advect, t, x);
      const double w = J * vr.weights[q];
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          A(i, j) += w * a.dot(grad.col(j)) * val(i);
    }
  }
  return A;
}

DenseMatrix ref_mass(const SpacePtr& space) {
  const Mesh& m = *space->mesh;
  const int n = space->ndofs;
  DenseMatrix A = DenseMatrix::Zero(n, n);
  const auto& vr = quadrature_rule(QuadEntity::Triangle, kRefDegree);
  for (int t = 0; t < m.num_triangles(); ++t) {
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vr.size(); ++q) {
      const Vec2 x = m.map_to_physical(t, vr.points[q]);
      const double w = J * vr.weights[q];
      if (space->kind == SpaceKind::BDM) {
        DenseMatrix val;
        global_vector_trace(space, t, x, val, nullptr);
        A += w * val.transpose() * val;
      } else {
        Vector val;
        global_scalar_trace(space, t, x, val, nullptr);
        A += w * val * val.transpose();
      }
    }
  }
  return A;
}

} // namespace verify
} // namespace divflow
