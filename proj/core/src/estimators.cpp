#include "divflow/estimators.hpp"

#include "divflow/quadrature.hpp"

#include <cmath>
#include <ostream>

namespace divflow {
namespace {

int est_degree(int k) { return std::min(2 * k + 4, kMaxQuadratureDegree); }

} // namespace

ElementIndicators steady_indicators(const CoupledState& fields, const EstimatorSources& sources,
                                    const PhysicalParams& params, const VectorFn& udata,
                                    const TimeResidualTerms* tt) {
  params.validate();
  const Mesh& m = *fields.u.space->mesh;
  const SpacePtr& M = fields.s.space;
  const int k = fields.u.space->degree;

  // sources interpolated into the Lagrange space; oscillation reported
  DiscreteField fx_h, fy_h, f1_h, f2_h;
  const bool has_f = static_cast<bool>(sources.f);
  const bool has_f1 = static_cast<bool>(sources.f1);
  const bool has_f2 = static_cast<bool>(sources.f2);
  if (has_f) {
    fx_h = lagrange_interpolate(M, [&](const Vec2& x) { return sources.f(x).x(); });
    fy_h = lagrange_interpolate(M, [&](const Vec2& x) { return sources.f(x).y(); });
  }
  if (has_f1) f1_h = lagrange_interpolate(M, sources.f1);
  if (has_f2) f2_h = lagrange_interpolate(M, sources.f2);

  ElementIndicators out;
  out.mesh = fields.u.space->mesh;
  out.psi_R2 = Vector::Zero(m.num_triangles());
  out.psi_e2 = Vector::Zero(m.num_triangles());
  out.psi_J2 = Vector::Zero(m.num_triangles());

  const auto& vrule = quadrature_rule(QuadEntity::Triangle, est_degree(k));
  const bool spatial_nu = params.viscosity.kind == ViscosityModel::Kind::Spatial;
  double osc2 = 0.0;
  const double inv_sc = 1.0 / params.Sc;
  const double inv_tausc = 1.0 / (params.tau * params.Sc);
  const Vec2 settling(0.0, params.v_p);

  std::vector<VelocitySample2> us;
  std::vector<ScalarSample2> ss, cs;
  std::vector<ScalarSample> ps, fxs, fys, f1s, f2s, nus;
  std::vector<VelocitySample> uo;
  std::vector<ScalarSample> so, co;
  for (int t = 0; t < m.num_triangles(); ++t) {
    velocity_samples2(fields.u, t, vrule, us);
    scalar_samples2(fields.s, t, vrule, ss);
    scalar_samples2(fields.c, t, vrule, cs);
    scalar_samples(fields.p, t, vrule, ps);
    if (has_f) {
      scalar_samples(fx_h, t, vrule, fxs);
      scalar_samples(fy_h, t, vrule, fys);
    }
    if (has_f1) scalar_samples(f1_h, t, vrule, f1s);
    if (has_f2) scalar_samples(f2_h, t, vrule, f2s);
    if (spatial_nu) scalar_samples(params.viscosity.field, t, vrule, nus);
    if (tt) {
      velocity_samples(*tt->u_old, t, vrule, uo);
      scalar_samples(*tt->s_old, t, vrule, so);
      scalar_samples(*tt->c_old, t, vrule, co);
    }
    const double J = m.jacobian(t).determinant();
    const double hK = m.triangles[t].diameter;
    double r2 = 0.0;
    for (int q = 0; q < vrule.size(); ++q) {
      const Vec2 x = m.map_to_physical(t, vrule.points[q]);
      const double nu =
          spatial_nu ? nus[q].value : params.viscosity.value(cs[q].value, t, vrule.points[q]);
      const Vec2 grad_nu =
          spatial_nu ? nus[q].grad : Vec2(params.viscosity.deriv(cs[q].value) * cs[q].grad);

      Vec2 fh = Vec2::Zero();
      if (has_f) {
        fh = Vec2(fxs[q].value, fys[q].value);
        osc2 += J * vrule.weights[q] * (sources.f(x) - fh).squaredNorm();
      }
      const double rho =
          params.alpha * ss[q].value + params.beta * cs[q].value + params.buoyancy_offset;
      Vec2 R = fh + rho * params.gravity;
      R += nu * us[q].lap + us[q].grad * grad_nu; // div(nu grad u)
      R -= us[q].grad * us[q].value;              // (u . grad) u
      R -= ps[q].grad / params.rho_m;
      if (params.drag > 0.0) R -= params.drag * us[q].value;

      double f1h = 0.0, f2h = 0.0;
      if (has_f1) {
        f1h = f1s[q].value;
        osc2 += J * vrule.weights[q] * std::pow(sources.f1(x) - f1h, 2);
      }
      if (has_f2) {
        f2h = f2s[q].value;
        osc2 += J * vrule.weights[q] * std::pow(sources.f2(x) - f2h, 2);
      }
      double R1 = f1h + inv_sc * ss[q].lap - us[q].value.dot(ss[q].grad);
      double R2 = f2h + inv_tausc * cs[q].lap - (us[q].value - settling).dot(cs[q].grad);

      if (tt) {
        R -= (us[q].value - uo[q].value) / tt->tau;
        R1 -= (ss[q].value - so[q].value) / tt->tau;
        R2 -= (cs[q].value - co[q].value) / tt->tau;
      }
      r2 += J * vrule.weights[q] * (R.squaredNorm() + R1 * R1 + R2 * R2);
    }
    out.psi_R2[t] = hK * hK * r2;
  }
  out.data_osc = std::sqrt(osc2);

  // edge residuals and jumps
  const auto& erule = quadrature_rule(QuadEntity::Edge, est_degree(k));
  std::array<std::vector<VelocitySample>, 2> ue;
  std::array<std::vector<ScalarSample>, 2> se, ce, pe, nue;
  for (int e = 0; e < m.num_edges(); ++e) {
    const MeshEdge& ed = m.edges[e];
    const int t0 = ed.tri[0], t1 = ed.tri[1];
    const Vec2 lo = m.vertices[ed.v[0]], hi = m.vertices[ed.v[1]];
    const Vec2 N = m.edge_normal(e);
    const double he = ed.length;
    const int nsides = t1 >= 0 ? 2 : 1;
    for (int s = 0; s < nsides; ++s) {
      velocity_edge_samples(fields.u, e, s, erule, ue[s]);
      if (t1 >= 0) {
        scalar_edge_samples(fields.s, e, s, erule, se[s]);
        scalar_edge_samples(fields.c, e, s, erule, ce[s]);
        scalar_edge_samples(fields.p, e, s, erule, pe[s]);
        if (spatial_nu) scalar_edge_samples(params.viscosity.field, e, s, erule, nue[s]);
      }
    }
    double re2 = 0.0, j2 = 0.0;
    for (int q = 0; q < erule.size(); ++q) {
      if (t1 >= 0) {
        const double nu0 = spatial_nu
                               ? nue[0][q].value
                               : params.viscosity.value(ce[0][q].value, t0, Vec2::Zero());
        const double nu1 = spatial_nu
                               ? nue[1][q].value
                               : params.viscosity.value(ce[1][q].value, t1, Vec2::Zero());
        const Vec2 stress0 = (pe[0][q].value / params.rho_m) * N - nu0 * (ue[0][q].grad * N);
        const Vec2 stress1 = (pe[1][q].value / params.rho_m) * N - nu1 * (ue[1][q].grad * N);
        const Vec2 Re = 0.5 * (stress0 - stress1);
        const double R1e = 0.5 * inv_sc * (se[0][q].grad - se[1][q].grad).dot(N);
        const double R2e = 0.5 * inv_tausc * (ce[0][q].grad - ce[1][q].grad).dot(N);
        re2 += he * erule.weights[q] * (Re.squaredNorm() + R1e * R1e + R2e * R2e);
        j2 += erule.weights[q] * (ue[0][q].value - ue[1][q].value).squaredNorm();
      } else {
        const Vec2 x = lo + erule.points[q].x() * (hi - lo);
        const Vec2 g = udata ? udata(x) : Vec2::Zero();
        j2 += erule.weights[q] * (ue[0][q].value - g).squaredNorm();
      }
    }
    out.psi_e2[t0] += he * re2;
    out.psi_J2[t0] += j2;
    if (t1 >= 0) {
      out.psi_e2[t1] += he * re2;
      out.psi_J2[t1] += j2;
    }
  }
  return out;
}

void write_indicator_csv(const ElementIndicators& ind, std::ostream& os) {
  os << "element_id,psi_R,psi_e,psi_J,psi_total\n";
  os.precision(10);
  for (int t = 0; t < ind.mesh->num_triangles(); ++t)
    os << t << ',' << std::sqrt(ind.psi_R2[t]) << ',' << std::sqrt(ind.psi_e2[t]) << ','
       << std::sqrt(ind.psi_J2[t]) << ',' << std::sqrt(ind.element_total2(t)) << "\n";
}

TimeIndicator time_indicator(const CoupledState& level_k, const DiscreteField& u_old_t,
                             const DiscreteField& s_old_t, const DiscreteField& c_old_t,
                             const DiscreteField* u_old_raw, double tau) {
  require(tau > 0.0, "time_indicator: tau must be positive");
  const Mesh& m = *level_k.u.space->mesh;
  const int k = level_k.u.space->degree;
  TimeIndicator xi;

  // velocity increment du = u^k - I^k u^{k-1}: broken gradient seminorm plus
  // h_e^{-1}-weighted jumps ([[w]] = w on the boundary)
  const DiscreteField du(level_k.u.space, level_k.u.coeffs - u_old_t.coeffs);
  const auto& vrule = quadrature_rule(QuadEntity::Triangle, est_degree(k));
  double grad2 = 0.0;
  std::vector<VelocitySample> dus;
  for (int t = 0; t < m.num_triangles(); ++t) {
    const double J = m.jacobian(t).determinant();
    velocity_samples(du, t, vrule, dus);
    for (int q = 0; q < vrule.size(); ++q)
      grad2 += J * vrule.weights[q] * dus[q].grad.squaredNorm();
  }
  const auto& erule = quadrature_rule(QuadEntity::Edge, est_degree(k));
  double jump_du2 = 0.0;   // sum_e h_e^{-1} ||[[du]]||^2
  double corr_old2 = 0.0;  // sum_e h_e ||[[I u^{k-1} - u^{k-1}]]||^2
  double corr_new2 = 0.0;  // sum_e h_e ||[[u^k - I u^{k-1}]]||^2
  std::array<std::vector<VelocitySample>, 2> due, iue;
  for (int e = 0; e < m.num_edges(); ++e) {
    const MeshEdge& ed = m.edges[e];
    const int t0 = ed.tri[0], t1 = ed.tri[1];
    const Vec2 lo = m.vertices[ed.v[0]], hi = m.vertices[ed.v[1]];
    const double he = ed.length;
    const int nsides = t1 >= 0 ? 2 : 1;
    for (int s = 0; s < nsides; ++s) {
      velocity_edge_samples(du, e, s, erule, due[s]);
      if (u_old_raw) velocity_edge_samples(u_old_t, e, s, erule, iue[s]);
    }
    for (int q = 0; q < erule.size(); ++q) {
      Vec2 jdu = due[0][q].value;
      if (t1 >= 0) jdu -= due[1][q].value;
      jump_du2 += erule.weights[q] * jdu.squaredNorm(); // h_e^{-1} ds = dq
      corr_new2 += he * he * erule.weights[q] * jdu.squaredNorm();
      if (u_old_raw && t1 >= 0) {
        const Vec2 x = lo + erule.points[q].x() * (hi - lo);
        Vec2 jIu = iue[0][q].value - iue[1][q].value;
        // side traces of the raw old field through the parent map when nested
        const Mesh& om = *u_old_raw->space->mesh;
        Vec2 jraw = Vec2::Zero();
        if (m.parent_mesh_id == om.mesh_id) {
          const int p0 = m.triangles[t0].parent, p1 = m.triangles[t1].parent;
          if (p0 >= 0 && p1 >= 0 && p0 != p1) {
            const auto ob0 = om.barycentric(p0, x);
            const auto ob1 = om.barycentric(p1, x);
            jraw = eval_velocity(*u_old_raw, p0, Vec2(ob0[1], ob0[2])).value -
                   eval_velocity(*u_old_raw, p1, Vec2(ob1[1], ob1[2])).value;
          }
        }
        corr_old2 += he * he * erule.weights[q] * (jIu - jraw).squaredNorm();
      }
    }
  }
  xi.xi1_sq = tau * (grad2 + jump_du2 + (corr_old2 + corr_new2) / (tau * tau));

  auto h1_increment2 = [&](const DiscreteField& fnew, const DiscreteField& fold) {
    const DiscreteField d(fnew.space, fnew.coeffs - fold.coeffs);
    double acc = 0.0;
    std::vector<ScalarSample> sv;
    for (int t = 0; t < m.num_triangles(); ++t) {
      const double J = m.jacobian(t).determinant();
      scalar_samples(d, t, vrule, sv);
      for (int q = 0; q < vrule.size(); ++q)
        acc += J * vrule.weights[q] * (sv[q].value * sv[q].value + sv[q].grad.squaredNorm());
    }
    return acc;
  };
  xi.xi2_sq = tau * h1_increment2(level_k.s, s_old_t);
  xi.xi3_sq = tau * h1_increment2(level_k.c, c_old_t);
  return xi;
}

ElementIndicators UpsilonAccumulator::add_step(const CoupledState& new_fields,
                                               const CoupledState& old_transferred,
                                               const EstimatorSources& src_new,
                                               const EstimatorSources& src_old,
                                               const VectorFn& g_new, const VectorFn& g_old,
                                               const DiscreteField* u_old_raw,
                                               const PhysicalParams& params, double tau) {
  TimeResidualTerms tt;
  tt.u_old = &old_transferred.u;
  tt.s_old = &old_transferred.s;
  tt.c_old = &old_transferred.c;
  tt.tau = tau;
  ElementIndicators ind_new = steady_indicators(new_fields, src_new, params, g_new, &tt);
  const ElementIndicators ind_old =
      steady_indicators(old_transferred, src_old, params, g_old, &tt);
  StepContribution sc;
  sc.tau = tau;
  sc.upsilon_new2 = ind_new.global2();
  sc.upsilon_old2 = ind_old.global2();
  sc.xi = time_indicator(new_fields, old_transferred.u, old_transferred.s, old_transferred.c,
                         u_old_raw, tau);
  upsilon2_ += tau * (sc.upsilon_new2 + sc.upsilon_old2);
  xi2_ += sc.xi.total2();
  steps_.push_back(sc);
  return ind_new;
}

MarkSet dorfler_mark(const ElementIndicators& ind, double gamma_ratio) {
  require(ind.mesh && ind.mesh->num_triangles() > 0, "dorfler_mark: empty indicators");
  require(gamma_ratio > 0.0 && gamma_ratio < 1.0, "dorfler_mark: gamma_ratio must be in (0,1)");
  double max_psi = 0.0;
  for (int t = 0; t < ind.mesh->num_triangles(); ++t)
    max_psi = std::max(max_psi, std::sqrt(ind.element_total2(t)));
  MarkSet marks;
  if (max_psi == 0.0) return marks;
  const double threshold = gamma_ratio * max_psi;
  for (int t = 0; t < ind.mesh->num_triangles(); ++t)
    if (std::sqrt(ind.element_total2(t)) >= threshold) marks.marked.insert(t);
  return marks;
}

double effectivity(double total_error, double estimator) {
  require(estimator > 0.0, "effectivity: estimator must be positive");
  return total_error / estimator;
}

} // namespace divflow
