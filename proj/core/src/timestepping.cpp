#include "divflow/timestepping.hpp"

#include <cmath>
#include <sstream>

namespace divflow {
namespace {

Sources sources_at(const TransientProblem& p, double t) {
  return p.sources_at ? p.sources_at(t) : Sources{};
}
CoupledBCs bcs_at(const TransientProblem& p, double t) {
  return p.bcs_at ? p.bcs_at(t) : CoupledBCs{};
}
double pressure_mean_at(const TransientProblem& p, double t) {
  return p.pressure_mean_at ? p.pressure_mean_at(t) : 0.0;
}

struct NewtonWork {
  CoupledState state;
  double lambda = 0.0;
};

NewtonDiagnostics newton_solve(NewtonWork& w, const SchemeWeights& scheme,
                               const PhysicalParams& params, const Sources& src,
                               const CoupledBCs& bcs, double pmean, const NewtonOptions& opts) {
  const BlockLayout layout = make_layout(w.state);
  SparseLuSolver solver;
  NewtonDiagnostics diag;

  auto unpack = [&](const Vector& x, NewtonWork& out) {
    out.state.u.coeffs = x.segment(layout.off_u(), layout.n_u);
    out.state.p.coeffs = x.segment(layout.off_p(), layout.n_p);
    out.state.s.coeffs = x.segment(layout.off_s(), layout.n_s);
    out.state.c.coeffs = x.segment(layout.off_c(), layout.n_c);
    out.lambda = x[layout.off_lambda()];
  };
  auto pack = [&](const NewtonWork& in) {
    Vector x(layout.total());
    x.segment(layout.off_u(), layout.n_u) = in.state.u.coeffs;
    x.segment(layout.off_p(), layout.n_p) = in.state.p.coeffs;
    x.segment(layout.off_s(), layout.n_s) = in.state.s.coeffs;
    x.segment(layout.off_c(), layout.n_c) = in.state.c.coeffs;
    x[layout.off_lambda()] = in.lambda;
    return x;
  };

  Vector x = pack(w);
  Vector r = assemble_residual(w.state, w.lambda, scheme, params, src, bcs, pmean);
  diag.initial_residual = r.norm();
  double rnorm = diag.initial_residual;
  const double target = std::max(opts.rel_tol * diag.initial_residual, opts.abs_tol);

  for (int it = 1; it <= opts.max_iterations; ++it) {
    SparseSystem sys =
        assemble_residual_and_jacobian(w.state, w.lambda, scheme, params, src, bcs, pmean, true);
    solver.factorize(sys.matrix);
    const Vector delta = solver.solve(-sys.rhs);
    x += delta;
    unpack(x, w);
    r = assemble_residual(w.state, w.lambda, scheme, params, src, bcs, pmean);
    double rnew = r.norm();
    if (rnew > rnorm && it < opts.max_iterations) {
      // one halving retry on residual increase
      x -= 0.5 * delta;
      unpack(x, w);
      r = assemble_residual(w.state, w.lambda, scheme, params, src, bcs, pmean);
      rnew = r.norm();
    }
    rnorm = rnew;
    diag.iterations = it;
    diag.final_residual = rnorm;
    if (rnorm <= target) {
      diag.converged = true;
      return diag;
    }
  }
  std::ostringstream os;
  os << "Newton did not converge after " << opts.max_iterations
     << " iterations; final residual " << diag.final_residual << " (initial "
     << diag.initial_residual << ")";
  throw Error(os.str());
}

SchemeWeights scheme_weights(const StepState& s) {
  SchemeWeights w;
  if (s.scheme == TimeScheme::BackwardEuler) {
    w.mass_coef = 1.0 / s.dt;
    w.u_hist = -s.current.u.coeffs / s.dt;
    w.s_hist = -s.current.s.coeffs / s.dt;
    w.c_hist = -s.current.c.coeffs / s.dt;
  } else {
    require(s.u_prev.coeffs.size() > 0, "advance: BDF2 requires two history levels");
    const double c = 1.0 / (2.0 * s.dt);
    w.mass_coef = 3.0 * c;
    w.u_hist = c * (-4.0 * s.current.u.coeffs + s.u_prev.coeffs);
    w.s_hist = c * (-4.0 * s.current.s.coeffs + s.s_prev.coeffs);
    w.c_hist = c * (-4.0 * s.current.c.coeffs + s.c_prev.coeffs);
  }
  return w;
}

} // namespace

Vector apply_difference(const Vector& y_np1, const Vector& y_n, const Vector& y_nm1) {
  require(y_np1.size() == y_n.size() && y_n.size() == y_nm1.size(),
          "apply_difference: length mismatch");
  return 3.0 * y_np1 - 4.0 * y_n + y_nm1;
}

StepState advance(const StepState& state, const TransientProblem& problem,
                  NewtonDiagnostics* diag, const NewtonOptions& opts) {
  require(state.dt > 0.0, "advance: dt must be positive");
  const double t_new = state.t_n + state.dt;
  const SchemeWeights w = scheme_weights(state);
  NewtonWork work{state.current, state.lambda};
  NewtonDiagnostics d = newton_solve(work, w, problem.params, sources_at(problem, t_new),
                                     bcs_at(problem, t_new), pressure_mean_at(problem, t_new),
                                     opts);
  if (diag) *diag = d;
  StepState out = state;
  out.t_n = t_new;
  out.u_prev = state.current.u;
  out.s_prev = state.current.s;
  out.c_prev = state.current.c;
  out.current = work.state;
  out.lambda = work.lambda;
  return out;
}

CoupledState steady_solve(const CoupledState& initial, const TransientProblem& problem,
                          NewtonDiagnostics* diag, const NewtonOptions& opts) {
  SchemeWeights w; // stationary: no mass terms
  NewtonWork work{initial, 0.0};
  NewtonDiagnostics d = newton_solve(work, w, problem.params, sources_at(problem, 0.0),
                                     bcs_at(problem, 0.0), pressure_mean_at(problem, 0.0), opts);
  if (diag) *diag = d;
  return work.state;
}

StepState picard_advance(const StepState& state, const TransientProblem& problem,
                         PicardDiagnostics* diag, const PicardOptions& opts) {
  require(state.dt > 0.0, "picard_advance: dt must be positive");
  const double t_new = state.t_n + state.dt;
  const SchemeWeights w = scheme_weights(state);
  const PhysicalParams& prm = problem.params;
  prm.validate();
  const Sources src = sources_at(problem, t_new);
  const CoupledBCs bcs = bcs_at(problem, t_new);
  const double pmean = pressure_mean_at(problem, t_new);

  const SpacePtr& U = state.current.u.space;
  const SpacePtr& P = state.current.p.space;
  const SpacePtr& M = state.current.s.space;
  const int n_u = U->ndofs, n_p = P->ndofs, n_m = M->ndofs;

  CoupledState it = state.current; // iterate; (u,p,s,c)
  double lambda = state.lambda;

  const CompressedMatrix Mu = assemble_mass(U);
  const CompressedMatrix Ms = assemble_mass(M);
  const CompressedMatrix B = assemble_b(U, P, prm);
  const CompressedMatrix A2s = assemble_a2(M, 1.0 / prm.Sc);
  const CompressedMatrix A2c = assemble_a2(M, 1.0 / (prm.tau * prm.Sc));
  const Vector mq = assemble_pressure_integral(P);
  const Vector Su = assemble_source(U, src.f);
  const Vector S1 = assemble_source(M, src.f1);
  const Vector S2 = assemble_source(M, src.f2);
  const Vector Mu_hist = matvec(Mu, w.u_hist);
  const Vector Ms_hist_s = matvec(Ms, w.s_hist);
  const Vector Ms_hist_c = matvec(Ms, w.c_hist);
  const bool nu_needs_c =
      prm.viscosity.depends_on_c() || prm.viscosity.kind == ViscosityModel::Kind::Spatial;

  PicardDiagnostics d;
  for (int sweep = 1; sweep <= opts.max_iterations; ++sweep) {
    const CoupledState prev_it = it;

    // Oseen solve for (u, p, lambda) with frozen (s, c) and advecting field u*
    {
      const CompressedMatrix A1 = assemble_a1h(nu_needs_c ? &it.c : nullptr, U, prm);
      const CompressedMatrix C1 = assemble_c1h(it.u, U, prm);
      const Vector Fb = assemble_buoyancy(it.s, it.c, U, prm);
      const Vector Lg =
          assemble_a1h_boundary_rhs(nu_needs_c ? &it.c : nullptr, U, prm, bcs.velocity);
      const int ntot = n_u + n_p + 1;
      Triplets trips(ntot, ntot);
      Vector rhs = Vector::Zero(ntot);
      std::vector<char> mask(ntot, 0);
      const VectorFn g =
          bcs.velocity ? bcs.velocity : VectorFn([](const Vec2&) { return Vec2::Zero(); });
      const BoundaryValues bv = velocity_normal_bc(U, g);
      for (size_t i = 0; i < bv.dofs.size(); ++i) mask[bv.dofs[i]] = 1;

      auto add = [&](const CompressedMatrix& A, int ro, int co, double sc) {
        for (int i = 0; i < A.rows; ++i) {
          if (mask[ro + i]) continue;
          for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p)
            trips.add(ro + i, co + A.col[p], sc * A.val[p]);
        }
      };
      add(A1, 0, 0, 1.0);
      add(C1, 0, 0, 1.0);
      add(Mu, 0, 0, w.mass_coef + prm.drag);
      for (int i = 0; i < B.rows; ++i)
        for (int p = B.row_ptr[i]; p < B.row_ptr[i + 1]; ++p) {
          if (!mask[B.col[p]]) trips.add(B.col[p], n_u + i, -B.val[p]);
          trips.add(n_u + i, B.col[p], B.val[p]);
        }
      for (int i = 0; i < n_p; ++i) {
        trips.add(n_u + i, n_u + n_p, mq[i]);
        trips.add(n_u + n_p, n_u + i, mq[i]);
      }
      rhs.segment(0, n_u) = Fb + Lg + Su - Mu_hist;
      rhs[n_u + n_p] = pmean;
      for (size_t i = 0; i < bv.dofs.size(); ++i) {
        trips.add(bv.dofs[i], bv.dofs[i], 1.0);
        rhs[bv.dofs[i]] = bv.values[i];
      }
      const Vector sol = lu_solve(CompressedMatrix::from_triplets(trips), rhs);
      it.u.coeffs = sol.segment(0, n_u);
      it.p.coeffs = sol.segment(n_u, n_p);
      lambda = sol[n_u + n_p];
    }

    // transport solves with the fresh velocity
    {
      const CompressedMatrix C2s = assemble_c2(&it.u, Vec2::Zero(), M);
      const CompressedMatrix C2c = assemble_c2(&it.u, Vec2(0.0, -prm.v_p), M);
      auto transport = [&](const CompressedMatrix& A2, const CompressedMatrix& C2,
                           const Vector& Sv, const Vector& hist,
                           const std::optional<ScalarDirichlet>& bc) {
        Triplets trips(n_m, n_m);
        Vector rhs = Sv - hist;
        std::vector<char> mask(n_m, 0);
        BoundaryValues bv;
        if (bc) {
          bv = lagrange_dirichlet_bc(M, bc->value, bc->tags);
          for (int dof : bv.dofs) mask[dof] = 1;
        }
        auto add = [&](const CompressedMatrix& A, double sc) {
          for (int i = 0; i < A.rows; ++i) {
            if (mask[i]) continue;
            for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p)
              trips.add(i, A.col[p], sc * A.val[p]);
          }
        };
        add(A2, 1.0);
        add(C2, 1.0);
        add(Ms, w.mass_coef);
        for (size_t i = 0; i < bv.dofs.size(); ++i) {
          trips.add(bv.dofs[i], bv.dofs[i], 1.0);
          rhs[bv.dofs[i]] = bv.values[i];
        }
        return lu_solve(CompressedMatrix::from_triplets(trips), rhs);
      };
      it.s.coeffs = transport(A2s, C2s, S1, Ms_hist_s, bcs.s_dirichlet);
      it.c.coeffs = transport(A2c, C2c, S2, Ms_hist_c, bcs.c_dirichlet);
    }

    double change = 0.0;
    auto upd = [&](const Vector& a, const Vector& b) {
      const double num = (a - b).lpNorm<Eigen::Infinity>();
      const double den = 1.0 + a.lpNorm<Eigen::Infinity>();
      change = std::max(change, num / den);
    };
    upd(it.u.coeffs, prev_it.u.coeffs);
    upd(it.p.coeffs, prev_it.p.coeffs);
    upd(it.s.coeffs, prev_it.s.coeffs);
    upd(it.c.coeffs, prev_it.c.coeffs);
    d.iterations = sweep;
    d.final_change = change;
    if (change < opts.tol) {
      d.converged = true;
      break;
    }
  }
  if (!d.converged) {
    std::ostringstream os;
    os << "Picard iteration did not converge after " << opts.max_iterations
       << " sweeps; last change " << d.final_change;
    throw Error(os.str());
  }
  if (diag) *diag = d;

  StepState out = state;
  out.t_n = t_new;
  out.u_prev = state.current.u;
  out.s_prev = state.current.s;
  out.c_prev = state.current.c;
  out.current = it;
  out.lambda = lambda;
  return out;
}

} // namespace divflow
