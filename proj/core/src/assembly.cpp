#include "divflow/assembly.hpp"

#include "divflow/quadrature.hpp"

#include <cstdlib>
#include <thread>

namespace divflow {
namespace {

int volume_degree(int k) { return 2 * k + 2; }
int edge_degree(int k) { return 2 * k + 1; }

// Facet geometry plus per-side trace configuration (local edge + orientation
// relative to the global lo->hi parametrization).
struct EdgeContext {
  int e = -1;
  Vec2 lo, hi, N;
  double h = 0.0;
  int tri[2] = {-1, -1};
  int local_edge[2] = {-1, -1};
  bool flip[2] = {false, false};
  std::vector<Vec2> x; // physical quad points

  bool boundary() const { return tri[1] < 0; }
};

EdgeContext make_edge_context(const Mesh& m, int e, const QuadratureRule& er) {
  EdgeContext ec;
  ec.e = e;
  const MeshEdge& ed = m.edges[e];
  ec.lo = m.vertices[ed.v[0]];
  ec.hi = m.vertices[ed.v[1]];
  ec.N = m.edge_normal(e);
  ec.h = ed.length;
  for (int s = 0; s < 2; ++s) {
    ec.tri[s] = ed.tri[s];
    if (ec.tri[s] >= 0) {
      ec.local_edge[s] = m.local_edge_index(ec.tri[s], e);
      ec.flip[s] = !m.local_edge_matches_global(ec.tri[s], ec.local_edge[s]);
    }
  }
  ec.x.resize(er.size());
  for (int q = 0; q < er.size(); ++q)
    ec.x[q] = ec.lo + er.points[q].x() * (ec.hi - ec.lo);
  return ec;
}


template <typename CellFn>
void for_cells(const Mesh& m, Triplets& out, const CellFn& fn) {
  const int nt = m.num_triangles();
  const int nthreads = std::min(assembly_thread_count(), std::max(1, nt / 128));
  if (nthreads <= 1) {
    for (int t = 0; t < nt; ++t) fn(t, out);
    return;
  }
  std::vector<Triplets> local(nthreads, Triplets(out.rows(), out.cols()));
  std::vector<std::thread> threads;
  const int chunk = (nt + nthreads - 1) / nthreads;
  for (int c = 0; c < nthreads; ++c) {
    threads.emplace_back([&, c]() {
      const int b = c * chunk, e = std::min(nt, (c + 1) * chunk);
      for (int t = b; t < e; ++t) fn(t, local[c]);
    });
  }
  for (auto& th : threads) th.join();
  for (auto& l : local) out.append(l);
}

// Viscosity trace along an edge (side 0): spatial fields are sampled
// directly, concentration-dependent models through the c trace.
void viscosity_on_edge(const PhysicalParams& params, const DiscreteField* c_field, int e,
                       const QuadratureRule& erule, std::vector<double>& nuq) {
  nuq.resize(erule.size());
  if (params.viscosity.kind == ViscosityModel::Kind::Spatial) {
    thread_local std::vector<ScalarSample> nus;
    scalar_edge_samples(params.viscosity.field, e, 0, erule, nus);
    for (int q = 0; q < erule.size(); ++q) nuq[q] = nus[q].value;
  } else if (c_field && params.viscosity.depends_on_c()) {
    thread_local std::vector<ScalarSample> ctr;
    scalar_edge_samples(*c_field, e, 0, erule, ctr);
    for (int q = 0; q < erule.size(); ++q)
      nuq[q] = params.viscosity.value(ctr[q].value, 0, Vec2::Zero());
  } else {
    for (int q = 0; q < erule.size(); ++q)
      nuq[q] = params.viscosity.value(0.0, 0, Vec2::Zero());
  }
}

} // namespace

int assembly_thread_count() {
  static const int n = [] {
    const char* env = std::getenv("DIVFLOW_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    return std::max(1, std::min(v, hw > 0 ? hw : 1));
  }();
  return n;
}

CompressedMatrix assemble_a1h(const DiscreteField* c_field, const SpacePtr& uspace,
                              const PhysicalParams& params) {
  const Mesh& m = *uspace->mesh;
  const int k = uspace->degree;
  const int nloc = uspace->dofs_per_cell;
  Triplets trips(uspace->ndofs, uspace->ndofs);
  trips.reserve(static_cast<size_t>(m.num_triangles()) * nloc * nloc * 3);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, volume_degree(k));

  for_cells(m, trips, [&](int t, Triplets& out) {
    thread_local std::vector<VectorBasisPoint> bu;
    uspace->eval_vector_rule(t, vrule, bu);
    thread_local std::vector<ScalarSample> cvals;
    if (c_field) scalar_samples(*c_field, t, vrule, cvals);
    const double J = m.jacobian(t).determinant();
    thread_local DenseMatrix K;
    K.setZero(nloc, nloc);
    for (int q = 0; q < vrule.size(); ++q) {
      const double cq = c_field ? cvals[q].value : 0.0;
      const double nu = params.viscosity.value(cq, t, vrule.points[q]);
      const double w = J * vrule.weights[q] * nu;
      for (int i = 0; i < nloc; ++i)
        for (int j = 0; j < nloc; ++j)
          K(i, j) += w * bu[q].grad[j].cwiseProduct(bu[q].grad[i]).sum();
    }
    for (int i = 0; i < nloc; ++i)
      for (int j = 0; j < nloc; ++j)
        out.add(uspace->cell_dof(t, i), uspace->cell_dof(t, j), K(i, j));
  });

  // facet terms
  const auto& erule = quadrature_rule(QuadEntity::Edge, edge_degree(k));
  std::array<std::vector<VectorBasisPoint>, 2> bu;
  DenseMatrix K;
  for (int e = 0; e < m.num_edges(); ++e) {
    const bool boundary = m.edges[e].on_boundary();
    if (boundary && params.slip_boundary) continue;
    const EdgeContext ec = make_edge_context(m, e, erule);
    const int nsides = boundary ? 1 : 2;
    const double mean_w = boundary ? 1.0 : 0.5;
    const double pen = (boundary ? params.boundary_penalty() : params.a0) / ec.h;

    for (int s = 0; s < nsides; ++s)
      uspace->eval_vector_edge(ec.tri[s], ec.local_edge[s], ec.flip[s], erule, bu[s]);
    std::vector<double> nuq;
    viscosity_on_edge(params, c_field, e, erule, nuq);

    const std::array<double, 2> jump_sign = {1.0, -1.0};
    K.setZero(nsides * nloc, nsides * nloc);
    for (int q = 0; q < erule.size(); ++q) {
      const double w = ec.h * erule.weights[q] * nuq[q];
      for (int si = 0; si < nsides; ++si) {
        for (int i = 0; i < nloc; ++i) {
          const Vec2 vi = jump_sign[si] * bu[si][q].value.col(i);
          const Vec2 gvi = mean_w * (bu[si][q].grad[i] * ec.N);
          for (int sj = 0; sj < nsides; ++sj) {
            for (int j = 0; j < nloc; ++j) {
              const Vec2 uj = jump_sign[sj] * bu[sj][q].value.col(j);
              const Vec2 guj = mean_w * (bu[sj][q].grad[j] * ec.N);
              K(si * nloc + i, sj * nloc + j) +=
                  w * (-guj.dot(vi) - gvi.dot(uj) + pen * uj.dot(vi));
            }
          }
        }
      }
    }
    for (int si = 0; si < nsides; ++si)
      for (int i = 0; i < nloc; ++i)
        for (int sj = 0; sj < nsides; ++sj)
          for (int j = 0; j < nloc; ++j)
            trips.add(uspace->cell_dof(ec.tri[si], i), uspace->cell_dof(ec.tri[sj], j),
                      K(si * nloc + i, sj * nloc + j));
  }
  return CompressedMatrix::from_triplets(trips);
}

Vector assemble_a1h_boundary_rhs(const DiscreteField* c_field, const SpacePtr& uspace,
                                 const PhysicalParams& params, const VectorFn& g) {
  const Mesh& m = *uspace->mesh;
  Vector rhs = Vector::Zero(uspace->ndofs);
  if (params.slip_boundary || !g) return rhs;
  const int k = uspace->degree;
  const int nloc = uspace->dofs_per_cell;
  const auto& erule = quadrature_rule(QuadEntity::Edge, edge_degree(k));
  std::vector<VectorBasisPoint> bu;
  for (int e = 0; e < m.num_edges(); ++e) {
    if (!m.edges[e].on_boundary()) continue;
    const EdgeContext ec = make_edge_context(m, e, erule);
    uspace->eval_vector_edge(ec.tri[0], ec.local_edge[0], ec.flip[0], erule, bu);
    std::vector<double> nuq;
    viscosity_on_edge(params, c_field, e, erule, nuq);
    const double pen = params.boundary_penalty() / ec.h;
    for (int q = 0; q < erule.size(); ++q) {
      const Vec2 gv = g(ec.x[q]);
      const double w = ec.h * erule.weights[q] * nuq[q];
      for (int i = 0; i < nloc; ++i) {
        const Vec2 vi = bu[q].value.col(i);
        const Vec2 gvi = bu[q].grad[i] * ec.N;
        rhs[uspace->cell_dof(ec.tri[0], i)] += w * (-gvi.dot(gv) + pen * gv.dot(vi));
      }
    }
  }
  return rhs;
}

CompressedMatrix assemble_a1h_dc(const DiscreteField& u_field, const DiscreteField& c_field,
                                 const SpacePtr& cspace, const PhysicalParams& params,
                                 const VectorFn* g) {
  const SpacePtr& uspace = u_field.space;
  const Mesh& m = *uspace->mesh;
  const int k = uspace->degree;
  Triplets trips(uspace->ndofs, cspace->ndofs);
  if (!params.viscosity.depends_on_c())
    return CompressedMatrix::from_triplets(trips);
  const int nloc = uspace->dofs_per_cell;
  const int ncloc = cspace->dofs_per_cell;
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, volume_degree(k));

  for_cells(m, trips, [&](int t, Triplets& out) {
    thread_local std::vector<VectorBasisPoint> bu;
    thread_local std::vector<ScalarBasisPoint> bc;
    thread_local std::vector<VelocitySample> us;
    thread_local std::vector<ScalarSample> cs;
    uspace->eval_vector_rule(t, vrule, bu);
    cspace->eval_scalar_rule(t, vrule, bc);
    velocity_samples(u_field, t, vrule, us);
    scalar_samples(c_field, t, vrule, cs);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const double w = J * vrule.weights[q] * params.viscosity.deriv(cs[q].value);
      if (w == 0.0) continue;
      for (int i = 0; i < nloc; ++i) {
        const double gg = us[q].grad.cwiseProduct(bu[q].grad[i]).sum();
        for (int j = 0; j < ncloc; ++j)
          out.add(uspace->cell_dof(t, i), cspace->cell_dof(t, j), w * gg * bc[q].value(j));
      }
    }
  });

  const auto& erule = quadrature_rule(QuadEntity::Edge, edge_degree(k));
  std::array<std::vector<VectorBasisPoint>, 2> bu;
  std::vector<ScalarBasisPoint> bc;
  std::array<std::vector<VelocitySample>, 2> us;
  std::vector<ScalarSample> ctr;
  for (int e = 0; e < m.num_edges(); ++e) {
    const bool boundary = m.edges[e].on_boundary();
    if (boundary && params.slip_boundary) continue;
    const EdgeContext ec = make_edge_context(m, e, erule);
    const int nsides = boundary ? 1 : 2;
    const double mean_w = boundary ? 1.0 : 0.5;
    const double pen = (boundary ? params.boundary_penalty() : params.a0) / ec.h;
    const std::array<double, 2> jump_sign = {1.0, -1.0};

    for (int s = 0; s < nsides; ++s) {
      uspace->eval_vector_edge(ec.tri[s], ec.local_edge[s], ec.flip[s], erule, bu[s]);
      velocity_edge_samples(u_field, e, s, erule, us[s]);
    }
    cspace->eval_scalar_edge(ec.tri[0], ec.local_edge[0], ec.flip[0], erule, bc);
    scalar_edge_samples(c_field, e, 0, erule, ctr);

    for (int q = 0; q < erule.size(); ++q) {
      const double dnu = params.viscosity.deriv(ctr[q].value);
      if (dnu == 0.0) continue;
      Vec2 ujump, umean_gn;
      if (boundary) {
        const Vec2 gval = g && *g ? (*g)(ec.x[q]) : Vec2::Zero();
        ujump = us[0][q].value - gval;
        umean_gn = us[0][q].grad * ec.N;
      } else {
        ujump = us[0][q].value - us[1][q].value;
        umean_gn = 0.5 * (us[0][q].grad * ec.N + us[1][q].grad * ec.N);
      }
      const double w = ec.h * erule.weights[q] * dnu;
      for (int si = 0; si < nsides; ++si) {
        for (int i = 0; i < nloc; ++i) {
          const Vec2 vi = jump_sign[si] * bu[si][q].value.col(i);
          const Vec2 gvi = mean_w * (bu[si][q].grad[i] * ec.N);
          const double form = -umean_gn.dot(vi) - gvi.dot(ujump) + pen * ujump.dot(vi);
          for (int j = 0; j < ncloc; ++j)
            trips.add(uspace->cell_dof(ec.tri[si], i), cspace->cell_dof(ec.tri[0], j),
                      w * form * bc[q].value(j));
        }
      }
    }
  }
  return CompressedMatrix::from_triplets(trips);
}

CompressedMatrix assemble_c1h(const DiscreteField& w_field, const SpacePtr& uspace,
                              const PhysicalParams&) {
  const Mesh& m = *uspace->mesh;
  const int k = uspace->degree;
  const int nloc = uspace->dofs_per_cell;
  Triplets trips(uspace->ndofs, uspace->ndofs);
  trips.reserve(static_cast<size_t>(m.num_triangles()) * nloc * nloc * 3);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, volume_degree(k));

  for_cells(m, trips, [&](int t, Triplets& out) {
    thread_local std::vector<VectorBasisPoint> bu;
    thread_local std::vector<VelocitySample> ws;
    uspace->eval_vector_rule(t, vrule, bu);
    velocity_samples(w_field, t, vrule, ws);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const double w = J * vrule.weights[q];
      for (int i = 0; i < nloc; ++i)
        for (int j = 0; j < nloc; ++j)
          out.add(uspace->cell_dof(t, i), uspace->cell_dof(t, j),
                  w * (bu[q].grad[j] * ws[q].value).dot(bu[q].value.col(i)));
    }
  });

  // upwind facet terms over element boundaries excluding Gamma
  const auto& erule = quadrature_rule(QuadEntity::Edge, edge_degree(k));
  std::array<std::vector<VectorBasisPoint>, 2> bu;
  std::vector<VelocitySample> w0;
  for (int e = 0; e < m.num_edges(); ++e) {
    if (m.edges[e].on_boundary()) continue;
    const EdgeContext ec = make_edge_context(m, e, erule);
    for (int s = 0; s < 2; ++s)
      uspace->eval_vector_edge(ec.tri[s], ec.local_edge[s], ec.flip[s], erule, bu[s]);
    velocity_edge_samples(w_field, e, 0, erule, w0);
    for (int q = 0; q < erule.size(); ++q) {
      const double wn = w0[q].value.dot(ec.N);
      const double wq = ec.h * erule.weights[q];
      // side 0: n_K = N, coeff = (wn - |wn|)/2, (u1 - u0) . v0
      // side 1: n_K = -N, coeff = (-wn - |wn|)/2, (u0 - u1) . v1
      const double c0 = 0.5 * (wn - std::abs(wn));
      const double c1 = 0.5 * (-wn - std::abs(wn));
      for (int i = 0; i < nloc; ++i) {
        const Vec2 v0 = bu[0][q].value.col(i);
        const Vec2 v1 = bu[1][q].value.col(i);
        for (int j = 0; j < nloc; ++j) {
          const Vec2 u0 = bu[0][q].value.col(j);
          const Vec2 u1 = bu[1][q].value.col(j);
          trips.add(uspace->cell_dof(ec.tri[0], i), uspace->cell_dof(ec.tri[1], j),
                    wq * c0 * u1.dot(v0));
          trips.add(uspace->cell_dof(ec.tri[0], i), uspace->cell_dof(ec.tri[0], j),
                    -wq * c0 * u0.dot(v0));
          trips.add(uspace->cell_dof(ec.tri[1], i), uspace->cell_dof(ec.tri[0], j),
                    wq * c1 * u0.dot(v1));
          trips.add(uspace->cell_dof(ec.tri[1], i), uspace->cell_dof(ec.tri[1], j),
                    -wq * c1 * u1.dot(v1));
        }
      }
    }
  }
  return CompressedMatrix::from_triplets(trips);
}

CompressedMatrix assemble_c1h_dw(const DiscreteField& w_field, const DiscreteField& u_field,
                                 const PhysicalParams&) {
  const SpacePtr& uspace = u_field.space;
  const Mesh& m = *uspace->mesh;
  const int k = uspace->degree;
  const int nloc = uspace->dofs_per_cell;
  Triplets trips(uspace->ndofs, uspace->ndofs);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, volume_degree(k));

  for_cells(m, trips, [&](int t, Triplets& out) {
    thread_local std::vector<VectorBasisPoint> bu;
    thread_local std::vector<VelocitySample> us;
    uspace->eval_vector_rule(t, vrule, bu);
    velocity_samples(u_field, t, vrule, us);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const double w = J * vrule.weights[q];
      for (int i = 0; i < nloc; ++i)
        for (int j = 0; j < nloc; ++j)
          out.add(uspace->cell_dof(t, i), uspace->cell_dof(t, j),
                  w * (us[q].grad * bu[q].value.col(j)).dot(bu[q].value.col(i)));
    }
  });

  const auto& erule = quadrature_rule(QuadEntity::Edge, edge_degree(k));
  std::array<std::vector<VectorBasisPoint>, 2> bu;
  std::vector<VelocitySample> w0;
  std::array<std::vector<VelocitySample>, 2> us;
  for (int e = 0; e < m.num_edges(); ++e) {
    if (m.edges[e].on_boundary()) continue;
    const EdgeContext ec = make_edge_context(m, e, erule);
    for (int s = 0; s < 2; ++s) {
      uspace->eval_vector_edge(ec.tri[s], ec.local_edge[s], ec.flip[s], erule, bu[s]);
      velocity_edge_samples(u_field, e, s, erule, us[s]);
    }
    velocity_edge_samples(w_field, e, 0, erule, w0);
    for (int q = 0; q < erule.size(); ++q) {
      const double wn = w0[q].value.dot(ec.N);
      const double sgn = wn > 0.0 ? 1.0 : (wn < 0.0 ? -1.0 : 0.0);
      const double wq = ec.h * erule.weights[q];
      const Vec2 du = us[1][q].value - us[0][q].value; // u^e - u from side 0
      const double d0 = 0.5 * (1.0 - sgn);
      const double d1 = 0.5 * (-1.0 - sgn);
      // w.n depends only on dofs of each side's own cell list
      for (int i = 0; i < nloc; ++i) {
        const double f0 = du.dot(bu[0][q].value.col(i));
        const double f1 = (-du).dot(bu[1][q].value.col(i));
        for (int j = 0; j < nloc; ++j) {
          const double dwn0 = bu[0][q].value.col(j).dot(ec.N);
          const double dwn1 = bu[1][q].value.col(j).dot(ec.N);
          trips.add(uspace->cell_dof(ec.tri[0], i), uspace->cell_dof(ec.tri[0], j),
                    wq * d0 * dwn0 * f0);
          trips.add(uspace->cell_dof(ec.tri[1], i), uspace->cell_dof(ec.tri[1], j),
                    wq * d1 * dwn1 * f1);
        }
      }
    }
  }
  return CompressedMatrix::from_triplets(trips);
}

CompressedMatrix assemble_b(const SpacePtr& uspace, const SpacePtr& pspace,
                            const PhysicalParams& params) {
  const Mesh& m = *uspace->mesh;
  const int k = uspace->degree;
  Triplets trips(pspace->ndofs, uspace->ndofs);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, volume_degree(k));
  const double scale = 1.0 / params.rho_m;
  for_cells(m, trips, [&](int t, Triplets& out) {
    thread_local std::vector<VectorBasisPoint> bu;
    thread_local std::vector<ScalarBasisPoint> bp;
    uspace->eval_vector_rule(t, vrule, bu);
    pspace->eval_scalar_rule(t, vrule, bp);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const double w = scale * J * vrule.weights[q];
      for (int i = 0; i < pspace->dofs_per_cell; ++i)
        for (int j = 0; j < uspace->dofs_per_cell; ++j)
          out.add(pspace->cell_dof(t, i), uspace->cell_dof(t, j),
                  w * bp[q].value(i) * bu[q].div[j]);
    }
  });
  return CompressedMatrix::from_triplets(trips);
}

CompressedMatrix assemble_a2(const SpacePtr& mspace, double diffusivity) {
  const Mesh& m = *mspace->mesh;
  const int k = mspace->degree;
  Triplets trips(mspace->ndofs, mspace->ndofs);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, volume_degree(k));
  for_cells(m, trips, [&](int t, Triplets& out) {
    thread_local std::vector<ScalarBasisPoint> bs;
    mspace->eval_scalar_rule(t, vrule, bs);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const double w = diffusivity * J * vrule.weights[q];
      for (int i = 0; i < mspace->dofs_per_cell; ++i)
        for (int j = 0; j < mspace->dofs_per_cell; ++j)
          out.add(mspace->cell_dof(t, i), mspace->cell_dof(t, j),
                  w * bs[q].grad.col(j).dot(bs[q].grad.col(i)));
    }
  });
  return CompressedMatrix::from_triplets(trips);
}

CompressedMatrix assemble_c2(const DiscreteField* advect, const Vec2& shift,
                             const SpacePtr& mspace) {
  const Mesh& m = *mspace->mesh;
  const int k = mspace->degree;
  Triplets trips(mspace->ndofs, mspace->ndofs);
  const int deg = advect ? volume_degree(std::max(k, advect->space->degree)) : volume_degree(k);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, deg);
  for_cells(m, trips, [&](int t, Triplets& out) {
    thread_local std::vector<ScalarBasisPoint> bs;
    thread_local std::vector<VelocitySample> as;
    mspace->eval_scalar_rule(t, vrule, bs);
    if (advect) velocity_samples(*advect, t, vrule, as);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const Vec2 a = advect ? Vec2(as[q].value + shift) : shift;
      const double w = J * vrule.weights[q];
      for (int i = 0; i < mspace->dofs_per_cell; ++i)
        for (int j = 0; j < mspace->dofs_per_cell; ++j)
          out.add(mspace->cell_dof(t, i), mspace->cell_dof(t, j),
                  w * a.dot(bs[q].grad.col(j)) * bs[q].value(i));
    }
  });
  return CompressedMatrix::from_triplets(trips);
}

CompressedMatrix assemble_c2_du(const DiscreteField& phi_field, const SpacePtr& uspace) {
  const SpacePtr& mspace = phi_field.space;
  const Mesh& m = *mspace->mesh;
  Triplets trips(mspace->ndofs, uspace->ndofs);
  const auto& vrule = quadrature_rule(
      QuadEntity::Triangle, volume_degree(std::max(mspace->degree, uspace->degree)));
  for_cells(m, trips, [&](int t, Triplets& out) {
    thread_local std::vector<ScalarBasisPoint> bs;
    thread_local std::vector<VectorBasisPoint> bu;
    thread_local std::vector<ScalarSample> ps;
    mspace->eval_scalar_rule(t, vrule, bs);
    uspace->eval_vector_rule(t, vrule, bu);
    scalar_samples(phi_field, t, vrule, ps);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const double w = J * vrule.weights[q];
      for (int i = 0; i < mspace->dofs_per_cell; ++i)
        for (int j = 0; j < uspace->dofs_per_cell; ++j)
          out.add(mspace->cell_dof(t, i), uspace->cell_dof(t, j),
                  w * bu[q].value.col(j).dot(ps[q].grad) * bs[q].value(i));
    }
  });
  return CompressedMatrix::from_triplets(trips);
}

Vector assemble_buoyancy(const DiscreteField& s_field, const DiscreteField& c_field,
                         const SpacePtr& uspace, const PhysicalParams& params) {
  const Mesh& m = *uspace->mesh;
  Vector rhs = Vector::Zero(uspace->ndofs);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, volume_degree(uspace->degree));
  std::vector<VectorBasisPoint> bu;
  std::vector<ScalarSample> ss, cs;
  for (int t = 0; t < m.num_triangles(); ++t) {
    uspace->eval_vector_rule(t, vrule, bu);
    scalar_samples(s_field, t, vrule, ss);
    scalar_samples(c_field, t, vrule, cs);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const double rho =
          params.alpha * ss[q].value + params.beta * cs[q].value + params.buoyancy_offset;
      const double w = J * vrule.weights[q] * rho;
      for (int i = 0; i < uspace->dofs_per_cell; ++i)
        rhs[uspace->cell_dof(t, i)] += w * params.gravity.dot(bu[q].value.col(i));
    }
  }
  return rhs;
}

CompressedMatrix assemble_gravity_coupling(const SpacePtr& uspace, const SpacePtr& mspace,
                                           const Vec2& g) {
  const Mesh& m = *uspace->mesh;
  Triplets trips(uspace->ndofs, mspace->ndofs);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, volume_degree(uspace->degree));
  for_cells(m, trips, [&](int t, Triplets& out) {
    thread_local std::vector<VectorBasisPoint> bu;
    thread_local std::vector<ScalarBasisPoint> bs;
    uspace->eval_vector_rule(t, vrule, bu);
    mspace->eval_scalar_rule(t, vrule, bs);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const double w = J * vrule.weights[q];
      for (int i = 0; i < uspace->dofs_per_cell; ++i)
        for (int j = 0; j < mspace->dofs_per_cell; ++j)
          out.add(uspace->cell_dof(t, i), mspace->cell_dof(t, j),
                  w * bs[q].value(j) * g.dot(bu[q].value.col(i)));
    }
  });
  return CompressedMatrix::from_triplets(trips);
}

CompressedMatrix assemble_mass(const SpacePtr& space) {
  const Mesh& m = *space->mesh;
  Triplets trips(space->ndofs, space->ndofs);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, volume_degree(space->degree));
  const bool vec = space->kind == SpaceKind::BDM;
  for_cells(m, trips, [&](int t, Triplets& out) {
    const double J = m.jacobian(t).determinant();
    if (vec) {
      thread_local std::vector<VectorBasisPoint> bu;
      space->eval_vector_rule(t, vrule, bu);
      for (int q = 0; q < vrule.size(); ++q) {
        const double w = J * vrule.weights[q];
        for (int i = 0; i < space->dofs_per_cell; ++i)
          for (int j = 0; j < space->dofs_per_cell; ++j)
            out.add(space->cell_dof(t, i), space->cell_dof(t, j),
                    w * bu[q].value.col(j).dot(bu[q].value.col(i)));
      }
    } else {
      thread_local std::vector<ScalarBasisPoint> bs;
      space->eval_scalar_rule(t, vrule, bs);
      for (int q = 0; q < vrule.size(); ++q) {
        const double w = J * vrule.weights[q];
        for (int i = 0; i < space->dofs_per_cell; ++i)
          for (int j = 0; j < space->dofs_per_cell; ++j)
            out.add(space->cell_dof(t, i), space->cell_dof(t, j),
                    w * bs[q].value(j) * bs[q].value(i));
      }
    }
  });
  return CompressedMatrix::from_triplets(trips);
}

Vector assemble_source(const SpacePtr& uspace, const VectorFn& f) {
  Vector rhs = Vector::Zero(uspace->ndofs);
  if (!f) return rhs;
  const Mesh& m = *uspace->mesh;
  const auto& vrule =
      quadrature_rule(QuadEntity::Triangle,
                      std::min(volume_degree(uspace->degree) + 2, kMaxQuadratureDegree));
  std::vector<VectorBasisPoint> bu;
  for (int t = 0; t < m.num_triangles(); ++t) {
    uspace->eval_vector_rule(t, vrule, bu);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const Vec2 fv = f(m.map_to_physical(t, vrule.points[q]));
      const double w = J * vrule.weights[q];
      for (int i = 0; i < uspace->dofs_per_cell; ++i)
        rhs[uspace->cell_dof(t, i)] += w * fv.dot(bu[q].value.col(i));
    }
  }
  return rhs;
}

Vector assemble_source(const SpacePtr& mspace, const ScalarFn& f) {
  Vector rhs = Vector::Zero(mspace->ndofs);
  if (!f) return rhs;
  const Mesh& m = *mspace->mesh;
  const auto& vrule =
      quadrature_rule(QuadEntity::Triangle,
                      std::min(volume_degree(mspace->degree) + 2, kMaxQuadratureDegree));
  std::vector<ScalarBasisPoint> bs;
  for (int t = 0; t < m.num_triangles(); ++t) {
    mspace->eval_scalar_rule(t, vrule, bs);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q) {
      const double fv = f(m.map_to_physical(t, vrule.points[q]));
      const double w = J * vrule.weights[q];
      for (int i = 0; i < mspace->dofs_per_cell; ++i)
        rhs[mspace->cell_dof(t, i)] += w * fv * bs[q].value(i);
    }
  }
  return rhs;
}

Vector assemble_pressure_integral(const SpacePtr& pspace) {
  Vector v = Vector::Zero(pspace->ndofs);
  const Mesh& m = *pspace->mesh;
  const auto& vrule =
      quadrature_rule(QuadEntity::Triangle, volume_degree(std::max(1, pspace->degree)));
  std::vector<ScalarBasisPoint> bs;
  for (int t = 0; t < m.num_triangles(); ++t) {
    pspace->eval_scalar_rule(t, vrule, bs);
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < vrule.size(); ++q)
      for (int i = 0; i < pspace->dofs_per_cell; ++i)
        v[pspace->cell_dof(t, i)] += J * vrule.weights[q] * bs[q].value(i);
  }
  return v;
}

BlockLayout make_layout(const CoupledState& state) {
  BlockLayout l;
  l.n_u = state.u.space->ndofs;
  l.n_p = state.p.space->ndofs;
  l.n_s = state.s.space->ndofs;
  l.n_c = state.c.space->ndofs;
  l.multiplier = true;
  return l;
}

namespace {

Vector matvec_transpose(const CompressedMatrix& A, const Vector& x) {
  require(x.size() == A.rows, "matvec_transpose: dimension mismatch");
  Vector y = Vector::Zero(A.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p)
      y[A.col[p]] += A.val[p] * x[i];
  return y;
}

struct ConstraintSet {
  std::vector<char> mask;
  std::vector<int> dofs;
  std::vector<double> values;

  void add(int dof, double v) {
    if (!mask[dof]) {
      mask[dof] = 1;
      dofs.push_back(dof);
      values.push_back(v);
    }
  }
};

ConstraintSet build_constraints(const CoupledState& state, const CoupledBCs& bcs,
                                const BlockLayout& layout) {
  ConstraintSet cs;
  cs.mask.assign(layout.total(), 0);
  {
    const VectorFn g =
        bcs.velocity ? bcs.velocity : VectorFn([](const Vec2&) { return Vec2::Zero(); });
    const BoundaryValues bv = velocity_normal_bc(state.u.space, g);
    for (size_t i = 0; i < bv.dofs.size(); ++i) cs.add(layout.off_u() + bv.dofs[i], bv.values[i]);
  }
  if (bcs.s_dirichlet) {
    const BoundaryValues bv =
        lagrange_dirichlet_bc(state.s.space, bcs.s_dirichlet->value, bcs.s_dirichlet->tags);
    for (size_t i = 0; i < bv.dofs.size(); ++i) cs.add(layout.off_s() + bv.dofs[i], bv.values[i]);
  }
  if (bcs.c_dirichlet) {
    const BoundaryValues bv =
        lagrange_dirichlet_bc(state.c.space, bcs.c_dirichlet->value, bcs.c_dirichlet->tags);
    for (size_t i = 0; i < bv.dofs.size(); ++i) cs.add(layout.off_c() + bv.dofs[i], bv.values[i]);
  }
  return cs;
}

void append_block(Triplets& out, const CompressedMatrix& A, int row_off, int col_off,
                  double scale, const std::vector<char>& row_mask) {
  for (int i = 0; i < A.rows; ++i) {
    if (row_mask[row_off + i]) continue;
    for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p)
      out.add(row_off + i, col_off + A.col[p], scale * A.val[p]);
  }
}

} // namespace

SparseSystem assemble_residual_and_jacobian(const CoupledState& state, double lambda,
                                            const SchemeWeights& scheme,
                                            const PhysicalParams& params, const Sources& sources,
                                            const CoupledBCs& bcs, double pressure_mean,
                                            bool want_jacobian) {
  params.validate();
  const SpacePtr& U = state.u.space;
  const SpacePtr& P = state.p.space;
  const SpacePtr& M = state.s.space;
  const BlockLayout layout = make_layout(state);
  const bool nu_needs_c = params.viscosity.depends_on_c() ||
                          params.viscosity.kind == ViscosityModel::Kind::Spatial;

  const CompressedMatrix A1 = assemble_a1h(nu_needs_c ? &state.c : nullptr, U, params);
  const CompressedMatrix C1 = assemble_c1h(state.u, U, params);
  const CompressedMatrix B = assemble_b(U, P, params);
  const CompressedMatrix Mu = assemble_mass(U);
  const CompressedMatrix Ms = assemble_mass(M);
  const CompressedMatrix A2s = assemble_a2(M, 1.0 / params.Sc);
  const CompressedMatrix A2c = assemble_a2(M, 1.0 / (params.tau * params.Sc));
  const Vec2 settling(0.0, -params.v_p);
  const CompressedMatrix C2s = assemble_c2(&state.u, Vec2::Zero(), M);
  const CompressedMatrix C2c = assemble_c2(&state.u, settling, M);
  const Vector mq = assemble_pressure_integral(P);
  const Vector Fb = assemble_buoyancy(state.s, state.c, U, params);
  const Vector Lg =
      assemble_a1h_boundary_rhs(nu_needs_c ? &state.c : nullptr, U, params, bcs.velocity);
  const Vector Su = assemble_source(U, sources.f);
  const Vector S1 = assemble_source(M, sources.f1);
  const Vector S2 = assemble_source(M, sources.f2);

  // residual blocks
  Vector r = Vector::Zero(layout.total());
  {
    Vector ru = matvec(A1, state.u.coeffs) + matvec(C1, state.u.coeffs) -
                matvec_transpose(B, state.p.coeffs) - Fb - Lg - Su;
    Vector mu_u = state.u.coeffs * scheme.mass_coef;
    if (scheme.u_hist.size() > 0) mu_u += scheme.u_hist;
    if (scheme.mass_coef != 0.0 || scheme.u_hist.size() > 0) ru += matvec(Mu, mu_u);
    if (params.drag > 0.0) ru += params.drag * matvec(Mu, state.u.coeffs);
    r.segment(layout.off_u(), layout.n_u) = ru;

    r.segment(layout.off_p(), layout.n_p) = matvec(B, state.u.coeffs) + lambda * mq;

    Vector rs = matvec(A2s, state.s.coeffs) + matvec(C2s, state.s.coeffs) - S1;
    Vector ms_s = state.s.coeffs * scheme.mass_coef;
    if (scheme.s_hist.size() > 0) ms_s += scheme.s_hist;
    if (scheme.mass_coef != 0.0 || scheme.s_hist.size() > 0) rs += matvec(Ms, ms_s);
    r.segment(layout.off_s(), layout.n_s) = rs;

    Vector rc = matvec(A2c, state.c.coeffs) + matvec(C2c, state.c.coeffs) - S2;
    Vector ms_c = state.c.coeffs * scheme.mass_coef;
    if (scheme.c_hist.size() > 0) ms_c += scheme.c_hist;
    if (scheme.mass_coef != 0.0 || scheme.c_hist.size() > 0) rc += matvec(Ms, ms_c);
    r.segment(layout.off_c(), layout.n_c) = rc;

    r[layout.off_lambda()] = mq.dot(state.p.coeffs) - pressure_mean;
  }

  const ConstraintSet cs = build_constraints(state, bcs, layout);
  Vector x = Vector::Zero(layout.total());
  x.segment(layout.off_u(), layout.n_u) = state.u.coeffs;
  x.segment(layout.off_p(), layout.n_p) = state.p.coeffs;
  x.segment(layout.off_s(), layout.n_s) = state.s.coeffs;
  x.segment(layout.off_c(), layout.n_c) = state.c.coeffs;
  x[layout.off_lambda()] = lambda;
  for (size_t i = 0; i < cs.dofs.size(); ++i) r[cs.dofs[i]] = x[cs.dofs[i]] - cs.values[i];

  SparseSystem sys;
  sys.layout = layout;
  sys.rhs = r;
  if (!want_jacobian) return sys;

  const CompressedMatrix C1w = assemble_c1h_dw(state.u, state.u, params);
  const CompressedMatrix A1dc =
      assemble_a1h_dc(state.u, state.c, M, params, bcs.velocity ? &bcs.velocity : nullptr);
  const CompressedMatrix G = assemble_gravity_coupling(U, M, params.gravity);
  const CompressedMatrix C2s_du = assemble_c2_du(state.s, U);
  const CompressedMatrix C2c_du = assemble_c2_du(state.c, U);

  Triplets trips(layout.total(), layout.total());
  trips.reserve(A1.nnz() * 2 + C1.nnz() + B.nnz() * 2 + 2 * A2s.nnz() + 4 * C2s.nnz());
  const auto& mask = cs.mask;
  append_block(trips, A1, layout.off_u(), layout.off_u(), 1.0, mask);
  append_block(trips, C1, layout.off_u(), layout.off_u(), 1.0, mask);
  append_block(trips, C1w, layout.off_u(), layout.off_u(), 1.0, mask);
  if (scheme.mass_coef != 0.0)
    append_block(trips, Mu, layout.off_u(), layout.off_u(), scheme.mass_coef, mask);
  if (params.drag > 0.0)
    append_block(trips, Mu, layout.off_u(), layout.off_u(), params.drag, mask);
  append_block(trips, A1dc, layout.off_u(), layout.off_c(), 1.0, mask);
  append_block(trips, G, layout.off_u(), layout.off_s(), -params.alpha, mask);
  append_block(trips, G, layout.off_u(), layout.off_c(), -params.beta, mask);
  // -B^T in the momentum rows
  for (int i = 0; i < B.rows; ++i)
    for (int p = B.row_ptr[i]; p < B.row_ptr[i + 1]; ++p)
      if (!mask[layout.off_u() + B.col[p]])
        trips.add(layout.off_u() + B.col[p], layout.off_p() + i, -B.val[p]);
  append_block(trips, B, layout.off_p(), layout.off_u(), 1.0, mask);
  for (int i = 0; i < mq.size(); ++i) {
    trips.add(layout.off_p() + i, layout.off_lambda(), mq[i]);
    trips.add(layout.off_lambda(), layout.off_p() + i, mq[i]);
  }
  append_block(trips, A2s, layout.off_s(), layout.off_s(), 1.0, mask);
  append_block(trips, C2s, layout.off_s(), layout.off_s(), 1.0, mask);
  if (scheme.mass_coef != 0.0)
    append_block(trips, Ms, layout.off_s(), layout.off_s(), scheme.mass_coef, mask);
  append_block(trips, C2s_du, layout.off_s(), layout.off_u(), 1.0, mask);
  append_block(trips, A2c, layout.off_c(), layout.off_c(), 1.0, mask);
  append_block(trips, C2c, layout.off_c(), layout.off_c(), 1.0, mask);
  if (scheme.mass_coef != 0.0)
    append_block(trips, Ms, layout.off_c(), layout.off_c(), scheme.mass_coef, mask);
  append_block(trips, C2c_du, layout.off_c(), layout.off_u(), 1.0, mask);
  for (int d : cs.dofs) trips.add(d, d, 1.0);

  sys.matrix = CompressedMatrix::from_triplets(trips);
  return sys;
}

Vector assemble_residual(const CoupledState& state, double lambda, const SchemeWeights& scheme,
                         const PhysicalParams& params, const Sources& sources,
                         const CoupledBCs& bcs, double pressure_mean) {
  return assemble_residual_and_jacobian(state, lambda, scheme, params, sources, bcs,
                                        pressure_mean, false)
      .rhs;
}

} // namespace divflow
