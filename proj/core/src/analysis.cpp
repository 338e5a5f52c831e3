#include "divflow/analysis.hpp"

#include "divflow/quadrature.hpp"

#include <cmath>
#include <ostream>

namespace divflow {
namespace {

int error_degree(int k) { return std::min(2 * k + 3, kMaxQuadratureDegree); }

} // namespace

double broken_h1_norm(const DiscreteField& v) {
  require(v.space->kind == SpaceKind::BDM, "broken_h1_norm: BDM field expected");
  const Mesh& m = *v.space->mesh;
  const int k = v.space->degree;
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, error_degree(k));
  double acc = 0.0;
  std::vector<VelocitySample> vs;
  for (int t = 0; t < m.num_triangles(); ++t) {
    const double J = m.jacobian(t).determinant();
    velocity_samples(v, t, vrule, vs);
    for (int q = 0; q < vrule.size(); ++q)
      acc += J * vrule.weights[q] * (vs[q].value.squaredNorm() + vs[q].grad.squaredNorm());
  }
  const auto& erule = quadrature_rule(QuadEntity::Edge, error_degree(k));
  std::array<std::vector<VelocitySample>, 2> ve;
  for (int e = 0; e < m.num_edges(); ++e) {
    const int nsides = m.edges[e].on_boundary() ? 1 : 2;
    for (int s = 0; s < nsides; ++s) velocity_edge_samples(v, e, s, erule, ve[s]);
    for (int q = 0; q < erule.size(); ++q) {
      Vec2 jump = ve[0][q].value;
      if (nsides == 2) jump -= ve[1][q].value;
      acc += erule.weights[q] * jump.squaredNorm(); // h_e^{-1} * (h_e dq) = dq
    }
  }
  return std::sqrt(acc);
}

NormSet error_norms(const CoupledState& fields, const ExactSolution& exact, double t) {
  const Mesh& m = *fields.u.space->mesh;
  const int k = fields.u.space->degree;
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, error_degree(k));
  double u2 = 0.0, p2 = 0.0, s2 = 0.0, c2 = 0.0;
  std::vector<VelocitySample> su;
  std::vector<ScalarSample> sp, ss, sc;
  for (int tri = 0; tri < m.num_triangles(); ++tri) {
    const double J = m.jacobian(tri).determinant();
    velocity_samples(fields.u, tri, vrule, su);
    scalar_samples(fields.p, tri, vrule, sp);
    scalar_samples(fields.s, tri, vrule, ss);
    scalar_samples(fields.c, tri, vrule, sc);
    for (int q = 0; q < vrule.size(); ++q) {
      const Vec2 x = m.map_to_physical(tri, vrule.points[q]);
      const double w = J * vrule.weights[q];
      u2 += w * ((su[q].value - exact.u(x, t)).squaredNorm() +
                 (su[q].grad - exact.grad_u(x, t)).squaredNorm());
      p2 += w * std::pow(sp[q].value - exact.p(x, t), 2);
      s2 += w * (std::pow(ss[q].value - exact.s(x, t), 2) +
                 (ss[q].grad - exact.grad_s(x, t)).squaredNorm());
      c2 += w * (std::pow(sc[q].value - exact.c(x, t), 2) +
                 (sc[q].grad - exact.grad_c(x, t)).squaredNorm());
    }
  }
  const auto& erule = quadrature_rule(QuadEntity::Edge, error_degree(k));
  std::array<std::vector<VelocitySample>, 2> ue;
  for (int e = 0; e < m.num_edges(); ++e) {
    const MeshEdge& ed = m.edges[e];
    const int nsides = ed.on_boundary() ? 1 : 2;
    for (int s = 0; s < nsides; ++s) velocity_edge_samples(fields.u, e, s, erule, ue[s]);
    const Vec2 lo = m.vertices[ed.v[0]], hi = m.vertices[ed.v[1]];
    for (int q = 0; q < erule.size(); ++q) {
      Vec2 jump = ue[0][q].value;
      if (nsides == 2)
        jump -= ue[1][q].value;
      else
        jump -= exact.u(lo + erule.points[q].x() * (hi - lo), t);
      u2 += erule.weights[q] * jump.squaredNorm();
    }
  }
  NormSet n;
  n.e_u = std::sqrt(u2);
  n.e_p = std::sqrt(p2);
  n.e_s = std::sqrt(s2);
  n.e_c = std::sqrt(c2);
  n.div_sup = divergence_sup(fields.u);
  return n;
}

double divergence_sup(const DiscreteField& u) {
  const Mesh& m = *u.space->mesh;
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, 2 * u.space->degree + 2);
  double best = 0.0;
  std::vector<VelocitySample> vs;
  for (int t = 0; t < m.num_triangles(); ++t) {
    velocity_samples(u, t, vrule, vs);
    for (int q = 0; q < vrule.size(); ++q) best = std::max(best, std::abs(vs[q].div));
  }
  return best;
}

void compute_rates(RunRecord& rec) {
  for (size_t i = 1; i < rec.rows.size(); ++i) {
    RunRow& cur = rec.rows[i];
    const RunRow& prev = rec.rows[i - 1];
    auto rate = [&](double e, double ep) {
      require(e > 0.0 && ep > 0.0, "compute_rates: errors must be positive");
      if (rec.adaptive_rates)
        return -2.0 * std::log(e / ep) /
               std::log(static_cast<double>(cur.dof) / static_cast<double>(prev.dof));
      return std::log(e / ep) / std::log(cur.h / prev.h);
    };
    cur.rate_u = rate(cur.norms.e_u, prev.norms.e_u);
    cur.rate_p = rate(cur.norms.e_p, prev.norms.e_p);
    cur.rate_s = rate(cur.norms.e_s, prev.norms.e_s);
    cur.rate_c = rate(cur.norms.e_c, prev.norms.e_c);
  }
}

void write_run_csv(const RunRecord& rec, std::ostream& os) {
  os << "level,h,dof,dt,e_u,rate_u,e_p,rate_p,e_s,rate_s,e_c,rate_c,div_sup,psi,eff,"
        "newton_iters\n";
  os.precision(10);
  for (const auto& r : rec.rows) {
    os << r.level << ',' << r.h << ',' << r.dof << ',' << r.dt << ',' << r.norms.e_u << ','
       << r.rate_u << ',' << r.norms.e_p << ',' << r.rate_p << ',' << r.norms.e_s << ','
       << r.rate_s << ',' << r.norms.e_c << ',' << r.rate_c << ',' << r.norms.div_sup << ','
       << r.psi << ',' << r.eff << ',' << r.newton_iters << "\n";
  }
}

} // namespace divflow
