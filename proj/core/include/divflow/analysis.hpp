#pragma once

#include "divflow/assembly.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace divflow {

/// Closed-form solution 4-tuple with the derivatives needed for manufactured
/// forcing and error evaluation. All callables take (x, t).
struct ExactSolution {
  std::function<Vec2(const Vec2&, double)> u, u_t, lap_u;
  std::function<Mat2(const Vec2&, double)> grad_u; // (i,j) = d u_i / d x_j
  std::function<double(const Vec2&, double)> p;
  std::function<Vec2(const Vec2&, double)> grad_p;
  std::function<double(const Vec2&, double)> s, s_t, lap_s;
  std::function<Vec2(const Vec2&, double)> grad_s;
  std::function<double(const Vec2&, double)> c, c_t, lap_c;
  std::function<Vec2(const Vec2&, double)> grad_c;
};

struct NormSet {
  double e_u = 0.0;   // broken H1 of the velocity error
  double e_p = 0.0;   // L2
  double e_s = 0.0;   // H1
  double e_c = 0.0;   // H1
  double div_sup = 0.0;
};

/// Broken norm ||v||_{1,Th}: L2 + elementwise gradients + h_e^{-1}-weighted
/// jumps over all edges ([[v]] = v on the boundary).
double broken_h1_norm(const DiscreteField& v);

/// Errors of the discrete 4-tuple against the exact solution at time t.
NormSet error_norms(const CoupledState& fields, const ExactSolution& exact, double t);

/// max |div u_h| over all volume quadrature points.
double divergence_sup(const DiscreteField& u);

struct RunRow {
  int level = 0;
  double h = 0.0;
  long dof = 0;
  double dt = 0.0;
  NormSet norms;
  double psi = 0.0;  // estimator (Psi or Upsilon)
  double eff = 0.0;
  int newton_iters = 0;
  double rate_u = 0.0, rate_p = 0.0, rate_s = 0.0, rate_c = 0.0;
};

struct RunRecord {
  std::vector<RunRow> rows;
  bool adaptive_rates = false; // DoF-based formula instead of h-based
};

/// Fills per-row rate columns from consecutive rows: log(e/ê)/log(xi/xî) with
/// xi = h, or -2 log(e/ê)/log(DoF/DôF) in adaptive mode. Errors must be
/// positive.
void compute_rates(RunRecord& rec);

/// CSV schema:
/// level,h,dof,dt,e_u,rate_u,e_p,rate_p,e_s,rate_s,e_c,rate_c,div_sup,psi,eff,newton_iters
void write_run_csv(const RunRecord& rec, std::ostream& os);

} // namespace divflow
