#pragma once

#include "divflow/params.hpp"
#include "divflow/sparse.hpp"

#include <optional>

namespace divflow {

/// Row/column offsets of the coupled unknown (u, p, s, c, multiplier).
struct BlockLayout {
  int n_u = 0, n_p = 0, n_s = 0, n_c = 0;
  bool multiplier = true;

  int off_u() const { return 0; }
  int off_p() const { return n_u; }
  int off_s() const { return n_u + n_p; }
  int off_c() const { return n_u + n_p + n_s; }
  int off_lambda() const { return n_u + n_p + n_s + n_c; }
  int total() const { return n_u + n_p + n_s + n_c + (multiplier ? 1 : 0); }
};

struct SparseSystem {
  CompressedMatrix matrix;
  Vector rhs;
  BlockLayout layout;
};

/// SIP form a1h(c; u, v): viscous volume term plus consistency, symmetry and
/// (a0/h_e)-penalty facet terms over all edges (boundary edges use the
/// [[w]] = w convention and penalty max(a0, nitsche); skipped entirely for
/// slip boundaries). c_field may be null when the viscosity does not depend
/// on concentration.
CompressedMatrix assemble_a1h(const DiscreteField* c_field, const SpacePtr& uspace,
                              const PhysicalParams& params);

/// Boundary-data functional of the SIP form: L_g(v) = sum_{e in Gamma}
/// int_e [ -(nu grad(v) n).g + (pen nu/h_e) g.v ]. Zero for slip boundaries.
Vector assemble_a1h_boundary_rhs(const DiscreteField* c_field, const SpacePtr& uspace,
                                 const PhysicalParams& params, const VectorFn& g);

/// Derivative of a1h(c; u, .) - L_g(c; .) with respect to c (nu'(c) chain rule).
CompressedMatrix assemble_a1h_dc(const DiscreteField& u_field, const DiscreteField& c_field,
                                 const SpacePtr& cspace, const PhysicalParams& params,
                                 const VectorFn* g);

/// Convection form c1h(w; u, v): volume (w.grad)u.v plus the upwind facet sum
/// over element boundaries excluding Gamma.
CompressedMatrix assemble_c1h(const DiscreteField& w_field, const SpacePtr& uspace,
                              const PhysicalParams& params);

/// Derivative of c1h(w; u, .) with respect to the advecting field w, evaluated
/// at w = w_field, u = u_field (|w.n| differentiated via sign, sign(0) = 0).
CompressedMatrix assemble_c1h_dw(const DiscreteField& w_field, const DiscreteField& u_field,
                                 const PhysicalParams& params);

/// b(v, q) = (1/rho_m)(q, div v), stored as an n_p x n_u matrix.
CompressedMatrix assemble_b(const SpacePtr& uspace, const SpacePtr& pspace,
                            const PhysicalParams& params);

/// diffusivity * (grad(phi), grad(psi)).
CompressedMatrix assemble_a2(const SpacePtr& mspace, double diffusivity);

/// c2(advect + shift; phi, psi) = (((advect + shift).grad) phi, psi).
/// advect may be null (pure constant advection).
CompressedMatrix assemble_c2(const DiscreteField* advect, const Vec2& shift,
                             const SpacePtr& mspace);

/// Derivative of c2(w; phi, .) with respect to w at fixed phi = phi_field:
/// entries ((delta_w . grad) phi, psi), an n_m x n_u matrix.
CompressedMatrix assemble_c2_du(const DiscreteField& phi_field, const SpacePtr& uspace);

/// Buoyancy load F(s, c, v) = ((alpha s + beta c + offset) g, v).
Vector assemble_buoyancy(const DiscreteField& s_field, const DiscreteField& c_field,
                         const SpacePtr& uspace, const PhysicalParams& params);

/// Gravity coupling (psi_j g, phi_i): n_u x n_m, reused for dF/ds and dF/dc.
CompressedMatrix assemble_gravity_coupling(const SpacePtr& uspace, const SpacePtr& mspace,
                                           const Vec2& g);

/// L^2 mass matrix of a scalar or BDM space.
CompressedMatrix assemble_mass(const SpacePtr& space);

/// Load vector (f, v) for a vector- or scalar-valued source.
Vector assemble_source(const SpacePtr& uspace, const VectorFn& f);
Vector assemble_source(const SpacePtr& mspace, const ScalarFn& f);

/// Vector of pressure-basis integrals (q, 1), for the zero-mean multiplier.
Vector assemble_pressure_integral(const SpacePtr& pspace);

struct CoupledState {
  DiscreteField u, p, s, c;
};

/// Time-scheme contribution: residual gains mass_coef*(y,test) + (y_hist,test)
/// per evolved variable. mass_coef = 3/(2 dt) for BDF2, 1/dt for backward
/// Euler, 0 for the stationary problem.
struct SchemeWeights {
  double mass_coef = 0.0;
  Vector u_hist, s_hist, c_hist; // empty = zero
};

struct Sources {
  VectorFn f;   // momentum; null = zero
  ScalarFn f1;  // salinity
  ScalarFn f2;  // concentration
};

struct ScalarDirichlet {
  ScalarFn value;
  std::vector<int> tags; // empty = whole boundary
};

struct CoupledBCs {
  VectorFn velocity;  // full velocity trace; null = homogeneous
  std::optional<ScalarDirichlet> s_dirichlet;
  std::optional<ScalarDirichlet> c_dirichlet;
};

/// Residual of the coupled nonlinear algebraic system at the given state and
/// its exact Jacobian. The pressure mean is constrained to `pressure_mean`
/// through one extra multiplier row/column.
SparseSystem assemble_residual_and_jacobian(const CoupledState& state, double lambda,
                                            const SchemeWeights& scheme,
                                            const PhysicalParams& params, const Sources& sources,
                                            const CoupledBCs& bcs, double pressure_mean,
                                            bool want_jacobian);

/// Residual only (no Jacobian triplets), same constraints applied.
Vector assemble_residual(const CoupledState& state, double lambda, const SchemeWeights& scheme,
                         const PhysicalParams& params, const Sources& sources,
                         const CoupledBCs& bcs, double pressure_mean);

BlockLayout make_layout(const CoupledState& state);

/// Assembly parallelism cap from DIVFLOW_THREADS (>= 1).
int assembly_thread_count();

} // namespace divflow
