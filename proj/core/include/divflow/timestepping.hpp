#pragma once

#include "divflow/assembly.hpp"

namespace divflow {

enum class TimeScheme { BackwardEuler, Bdf2 };

/// D y^{n+1} = 3 y^{n+1} - 4 y^n + y^{n-1}.
Vector apply_difference(const Vector& y_np1, const Vector& y_n, const Vector& y_nm1);

struct NewtonOptions {
  double rel_tol = 1e-6;
  double abs_tol = 1e-12;
  int max_iterations = 25;
};

struct NewtonDiagnostics {
  int iterations = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
  bool converged = false;
};

/// Time-stepping state: fields at level n (and n-1 for BDF2) plus the current
/// time and step size. All fields live on one mesh.
struct StepState {
  double t_n = 0.0;
  double dt = 0.0;
  TimeScheme scheme = TimeScheme::Bdf2;
  CoupledState current;               // fields at t_n (u, p, s, c)
  DiscreteField u_prev, s_prev, c_prev; // level n-1 (BDF2 only; may be empty)
  double lambda = 0.0;                // pressure multiplier value
};

/// Time-dependent problem data bound by the caller at each step time.
struct TransientProblem {
  PhysicalParams params;
  std::function<Sources(double t)> sources_at;      // may be null
  std::function<CoupledBCs(double t)> bcs_at;       // may be null
  std::function<double(double t)> pressure_mean_at; // may be null (zero mean)
};

/// One implicit step t_n -> t_n + dt solved by monolithic Newton with exact
/// Jacobian. The first step of a BDF2 run must use TimeScheme::BackwardEuler.
StepState advance(const StepState& state, const TransientProblem& problem,
                  NewtonDiagnostics* diag = nullptr, const NewtonOptions& opts = {});

/// Stationary version (mass terms off): Newton on the steady coupled system
/// starting from `initial`.
CoupledState steady_solve(const CoupledState& initial, const TransientProblem& problem,
                          NewtonDiagnostics* diag = nullptr, const NewtonOptions& opts = {});

struct PicardOptions {
  double tol = 1e-8;
  int max_iterations = 50;
};

struct PicardDiagnostics {
  int iterations = 0;
  double final_change = 0.0;
  bool converged = false;
};

/// One implicit step solved by an inner fixed-point iteration alternating an
/// Oseen solve for (u, p) with frozen (s, c) and linear transport solves with
/// frozen u.
StepState picard_advance(const StepState& state, const TransientProblem& problem,
                         PicardDiagnostics* diag = nullptr, const PicardOptions& opts = {});

} // namespace divflow
