#pragma once

#include "divflow/estimators.hpp"
#include "divflow/timestepping.hpp"

#include <optional>
#include <string>

namespace divflow {

/// Analytic forcing 3-tuple of (x, t); members may be null (zero source).
struct TimeSources {
  std::function<Vec2(const Vec2&, double)> f;
  std::function<double(const Vec2&, double)> f1, f2;

  Sources at(double t) const;
  EstimatorSources estimator_at(double t) const;
  bool empty() const { return !f && !f1 && !f2; }
};

/// Sources that make `exact` a strong solution of the coupled model:
/// f  = u_t + (u.grad)u - div(nu(c) grad u) + grad(p)/rho_m + sigma u - (alpha s + beta c + r0) g,
/// f1 = s_t + u.grad s - (1/Sc) lap s,
/// f2 = c_t + (u - v_p e_z).grad c - (1/(tau Sc)) lap c.
TimeSources manufactured_forcing(const ExactSolution& exact, const PhysicalParams& params);

enum class ExperimentKind {
  TransientConvergence, // Example 1
  SteadyAdaptive,       // Example 2
  TransientEstimator,   // Example 3
  DemoLayering,         // Example 4
  DemoExothermic,       // Example 5
};

struct ProblemSpec {
  std::string name;
  ExperimentKind kind;
  PhysicalParams params;
  std::optional<ExactSolution> exact;
  TimeSources forcing;
  int default_degree = 1;
  double default_dt = 0.0;
  double default_t_end = 0.0;
  double default_gamma = 1e-4;
  int default_levels = 4;
};

/// Registered experiments: example1 .. example5.
const ProblemSpec& problem_registry(const std::string& name);
std::vector<std::string> problem_names();

struct ExperimentConfig {
  int levels = -1;      // refinement levels beyond the initial mesh
  int degree = -1;      // velocity degree k
  double dt = -1.0;
  double t_end = -1.0;
  double gamma_ratio = -1.0;
  double a0 = -1.0;
  double nitsche = -1.0;
  double drag = -1.0;
  std::uint64_t seed = 1;
  int demo_steps = -1;      // Example 5 step count
  bool uniform = false;     // force uniform refinement (Example 2)
  std::string out_dir;      // empty: no file output
};

struct DemoBounds {
  double s_min = 0.0, s_max = 0.0, c_min = 0.0, c_max = 0.0;       // observed
  double s_lo = 0.0, s_hi = 0.0, c_lo = 0.0, c_hi = 0.0;           // allowed band
  bool ok() const {
    return s_min >= s_lo && s_max <= s_hi && c_min >= c_lo && c_max <= c_hi;
  }
};

struct ExperimentResult {
  RunRecord record;
  double max_div_sup = 0.0;     // over every accepted step / level
  int max_newton_iters = 0;
  std::optional<DemoBounds> bounds; // demos only
  std::vector<std::string> vtk_files;
  std::vector<std::string> notes;
};

/// Executes the refinement/time loop of the named experiment; deterministic
/// for a fixed seed.
ExperimentResult run_experiment(const ProblemSpec& spec, const ExperimentConfig& cfg);

/// Integral of an analytic function over the mesh (used for the exact-pressure
/// gauge).
double domain_integral(const Mesh& m, const std::function<double(const Vec2&)>& fn);

/// Uniform [0,1] draws per dof from a seeded mt19937_64 (portable mapping).
Vector random_unit_vector(int n, std::uint64_t seed);

} // namespace divflow
