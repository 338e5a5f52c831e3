#include "divflow/problems.hpp"

#include "divflow/quadrature.hpp"
#include "divflow/vtk.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

namespace divflow {
namespace {

// ---------------------------------------------------------------------------
// Closed-form solutions (machine-generated derivatives).
// ---------------------------------------------------------------------------

// Example 1: unit square, transient (div u = 0)
inline double ex1_u1(double x, double y, double t) { return std::sin(t)*std::pow(std::sin(M_PI*x), 2)*std::pow(std::sin(M_PI*y), 2)*std::cos(M_PI*y); }
inline double ex1_u2(double x, double y, double t) { return -1.0/3.0*std::sin(t)*std::sin(2*M_PI*x)*std::pow(std::sin(M_PI*y), 3); }
inline double ex1_u1_t(double x, double y, double t) { return std::pow(std::sin(M_PI*x), 2)*std::pow(std::sin(M_PI*y), 2)*std::cos(t)*std::cos(M_PI*y); }
inline double ex1_u2_t(double x, double y, double t) { return -1.0/3.0*std::sin(2*M_PI*x)*std::pow(std::sin(M_PI*y), 3)*std::cos(t); }
inline double ex1_u1_x(double x, double y, double t) { return 2*M_PI*std::sin(t)*std::sin(M_PI*x)*std::pow(std::sin(M_PI*y), 2)*std::cos(M_PI*x)*std::cos(M_PI*y); }
inline double ex1_u1_y(double x, double y, double t) { return M_PI*(2 - 3*std::pow(std::sin(M_PI*y), 2))*std::sin(t)*std::pow(std::sin(M_PI*x), 2)*std::sin(M_PI*y); }
inline double ex1_u2_x(double x, double y, double t) { return -2.0/3.0*M_PI*std::sin(t)*std::pow(std::sin(M_PI*y), 3)*std::cos(2*M_PI*x); }
inline double ex1_u2_y(double x, double y, double t) { return -M_PI*std::sin(t)*std::sin(2*M_PI*x)*std::pow(std::sin(M_PI*y), 2)*std::cos(M_PI*y); }
inline double ex1_lap_u1(double x, double y, double t) { return std::pow(M_PI, 2)*(-13*std::pow(std::sin(M_PI*x), 2)*std::pow(std::sin(M_PI*y), 2) + 2*std::pow(std::sin(M_PI*x), 2) + 2*std::pow(std::sin(M_PI*y), 2))*std::sin(t)*std::cos(M_PI*y); }
inline double ex1_lap_u2(double x, double y, double t) { return (1.0/3.0)*std::pow(M_PI, 2)*(13*std::pow(std::sin(M_PI*y), 2) - 6)*std::sin(t)*std::sin(2*M_PI*x)*std::sin(M_PI*y); }
inline double ex1_p(double x, double y, double t) { return (std::pow(x, 4) - std::pow(y, 4))*std::sin(t); }
inline double ex1_p_x(double x, double y, double t) { (void)y; return 4*std::pow(x, 3)*std::sin(t); }
inline double ex1_p_y(double x, double y, double t) { (void)x; return -4*std::pow(y, 3)*std::sin(t); }
inline double ex1_s(double x, double y, double t) { return (1.0/2.0)*(std::sin((1.0/2.0)*M_PI*x*y) + 1)*std::exp(-t); }
inline double ex1_s_t(double x, double y, double t) { return -1.0/2.0*(std::sin((1.0/2.0)*M_PI*x*y) + 1)*std::exp(-t); }
inline double ex1_s_x(double x, double y, double t) { return (1.0/4.0)*M_PI*y*std::exp(-t)*std::cos((1.0/2.0)*M_PI*x*y); }
inline double ex1_s_y(double x, double y, double t) { return (1.0/4.0)*M_PI*x*std::exp(-t)*std::cos((1.0/2.0)*M_PI*x*y); }
inline double ex1_lap_s(double x, double y, double t) { return (1.0/8.0)*std::pow(M_PI, 2)*(-std::pow(x, 2) - std::pow(y, 2))*std::exp(-t)*std::sin((1.0/2.0)*M_PI*x*y); }
inline double ex1_c(double x, double y, double t) { return (1.0/2.0)*(std::cos((1.0/4.0)*M_PI*x*y) + 1)*std::exp(-t); }
inline double ex1_c_t(double x, double y, double t) { return -1.0/2.0*(std::cos((1.0/4.0)*M_PI*x*y) + 1)*std::exp(-t); }
inline double ex1_c_x(double x, double y, double t) { return -1.0/8.0*M_PI*y*std::exp(-t)*std::sin((1.0/4.0)*M_PI*x*y); }
inline double ex1_c_y(double x, double y, double t) { return -1.0/8.0*M_PI*x*std::exp(-t)*std::sin((1.0/4.0)*M_PI*x*y); }
inline double ex1_lap_c(double x, double y, double t) { return (1.0/32.0)*std::pow(M_PI, 2)*(-std::pow(x, 2) - std::pow(y, 2))*std::exp(-t)*std::cos((1.0/4.0)*M_PI*x*y); }

// Example 2: L-shape, stationary (div u = 0)
inline double ex2_u1(double x, double y, double) { return std::sin(M_PI*y)*std::cos(M_PI*x); }
inline double ex2_u2(double x, double y, double) { return -std::sin(M_PI*x)*std::cos(M_PI*y); }
inline double ex2_u1_x(double x, double y, double) { return -M_PI*std::sin(M_PI*x)*std::sin(M_PI*y); }
inline double ex2_u1_y(double x, double y, double) { return M_PI*std::cos(M_PI*x)*std::cos(M_PI*y); }
inline double ex2_u2_x(double x, double y, double) { return -M_PI*std::cos(M_PI*x)*std::cos(M_PI*y); }
inline double ex2_u2_y(double x, double y, double) { return M_PI*std::sin(M_PI*x)*std::sin(M_PI*y); }
inline double ex2_lap_u1(double x, double y, double) { return -2*std::pow(M_PI, 2)*std::sin(M_PI*y)*std::cos(M_PI*x); }
inline double ex2_lap_u2(double x, double y, double) { return 2*std::pow(M_PI, 2)*std::sin(M_PI*x)*std::cos(M_PI*y); }
inline double ex2_p(double x, double y, double) { return 2500*(std::sin(x*y) + 2)/(std::pow(50*x - 1, 2) + std::pow(50*y - 1, 2)); }
inline double ex2_p_x(double x, double y, double) { return 2500*(y*(std::pow(50*x - 1, 2) + std::pow(50*y - 1, 2))*std::cos(x*y) + (100 - 5000*x)*(std::sin(x*y) + 2))/std::pow(std::pow(50*x - 1, 2) + std::pow(50*y - 1, 2), 2); }
inline double ex2_p_y(double x, double y, double) { return 2500*(x*(std::pow(50*x - 1, 2) + std::pow(50*y - 1, 2))*std::cos(x*y) + (100 - 5000*y)*(std::sin(x*y) + 2))/std::pow(std::pow(50*x - 1, 2) + std::pow(50*y - 1, 2), 2); }
inline double ex2_s(double x, double y, double) { return std::exp(-3.0/200.0*std::pow(100*x - 1, 2) - 3.0/200.0*std::pow(100*y - 1, 2)); }
inline double ex2_s_x(double x, double y, double) { return (3 - 300*x)*std::exp(-3.0/200.0*std::pow(100*x - 1, 2) - 3.0/200.0*std::pow(100*y - 1, 2)); }
inline double ex2_s_y(double x, double y, double) { return (3 - 300*y)*std::exp(-3.0/200.0*std::pow(100*x - 1, 2) - 3.0/200.0*std::pow(100*y - 1, 2)); }
inline double ex2_lap_s(double x, double y, double) { return (9*std::pow(100*x - 1, 2) + 9*std::pow(100*y - 1, 2) - 600)*std::exp(-3.0/200.0*std::pow(100*x - 1, 2) - 3.0/200.0*std::pow(100*y - 1, 2)); }
inline double ex2_c(double x, double y, double) { return (1.0/10.0)*(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2) + 40*std::sin((1.0/2.0)*M_PI*y)*std::cos(M_PI*x))/(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2)); }
inline double ex2_c_x(double x, double y, double) { return 4*((20 - 200*x)*std::cos(M_PI*x) - M_PI*(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2))*std::sin(M_PI*x))*std::sin((1.0/2.0)*M_PI*y)/std::pow(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2), 2); }
inline double ex2_c_y(double x, double y, double) { return 2*((40 - 400*y)*std::sin((1.0/2.0)*M_PI*y) + M_PI*(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2))*std::cos((1.0/2.0)*M_PI*y))*std::cos(M_PI*x)/std::pow(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2), 2); }
inline double ex2_lap_c(double x, double y, double) { return (4*(800*std::pow(10*x - 1, 2)*std::cos(M_PI*x) + 40*(M_PI*(10*x - 1)*std::sin(M_PI*x) - 5*std::cos(M_PI*x))*(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2)) - std::pow(M_PI, 2)*std::pow(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2), 2)*std::cos(M_PI*x))*std::sin((1.0/2.0)*M_PI*y) - (-3200*std::pow(10*y - 1, 2)*std::sin((1.0/2.0)*M_PI*y) + 80*(M_PI*(10*y - 1)*std::cos((1.0/2.0)*M_PI*y) + 10*std::sin((1.0/2.0)*M_PI*y))*(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2)) + std::pow(M_PI, 2)*std::pow(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2), 2)*std::sin((1.0/2.0)*M_PI*y))*std::cos(M_PI*x))/std::pow(std::pow(10*x - 1, 2) + std::pow(10*y - 1, 2), 3); }

// Example 3: unit square, transient (div u = 0)
inline double ex3_u1(double x, double y, double t) { return std::sin(t)*std::sin(M_PI*y)*std::cos(M_PI*x); }
inline double ex3_u2(double x, double y, double t) { return -std::sin(t)*std::sin(M_PI*x)*std::cos(M_PI*y); }
inline double ex3_u1_t(double x, double y, double t) { return std::sin(M_PI*y)*std::cos(t)*std::cos(M_PI*x); }
inline double ex3_u2_t(double x, double y, double t) { return -std::sin(M_PI*x)*std::cos(t)*std::cos(M_PI*y); }
inline double ex3_u1_x(double x, double y, double t) { return -M_PI*std::sin(t)*std::sin(M_PI*x)*std::sin(M_PI*y); }
inline double ex3_u1_y(double x, double y, double t) { return M_PI*std::sin(t)*std::cos(M_PI*x)*std::cos(M_PI*y); }
inline double ex3_u2_x(double x, double y, double t) { return -M_PI*std::sin(t)*std::cos(M_PI*x)*std::cos(M_PI*y); }
inline double ex3_u2_y(double x, double y, double t) { return M_PI*std::sin(t)*std::sin(M_PI*x)*std::sin(M_PI*y); }
inline double ex3_lap_u1(double x, double y, double t) { return -2*std::pow(M_PI, 2)*std::sin(t)*std::sin(M_PI*y)*std::cos(M_PI*x); }
inline double ex3_lap_u2(double x, double y, double t) { return 2*std::pow(M_PI, 2)*std::sin(t)*std::sin(M_PI*x)*std::cos(M_PI*y); }
inline double ex3_p(double x, double y, double t) { return (std::pow(x, 4) - std::pow(y, 4))*std::cos(t); }
inline double ex3_p_x(double x, double y, double t) { (void)y; return 4*std::pow(x, 3)*std::cos(t); }
inline double ex3_p_y(double x, double y, double t) { (void)x; return -4*std::pow(y, 3)*std::cos(t); }

ExactSolution make_ex1() {
  ExactSolution e;
  e.u = [](const Vec2& p, double t) { return Vec2(ex1_u1(p.x(), p.y(), t), ex1_u2(p.x(), p.y(), t)); };
  e.u_t = [](const Vec2& p, double t) { return Vec2(ex1_u1_t(p.x(), p.y(), t), ex1_u2_t(p.x(), p.y(), t)); };
  e.lap_u = [](const Vec2& p, double t) { return Vec2(ex1_lap_u1(p.x(), p.y(), t), ex1_lap_u2(p.x(), p.y(), t)); };
  e.grad_u = [](const Vec2& p, double t) {
    Mat2 g;
    g << ex1_u1_x(p.x(), p.y(), t), ex1_u1_y(p.x(), p.y(), t),
         ex1_u2_x(p.x(), p.y(), t), ex1_u2_y(p.x(), p.y(), t);
    return g;
  };
  e.p = [](const Vec2& p, double t) { return ex1_p(p.x(), p.y(), t); };
  e.grad_p = [](const Vec2& p, double t) { return Vec2(ex1_p_x(p.x(), p.y(), t), ex1_p_y(p.x(), p.y(), t)); };
  e.s = [](const Vec2& p, double t) { return ex1_s(p.x(), p.y(), t); };
  e.s_t = [](const Vec2& p, double t) { return ex1_s_t(p.x(), p.y(), t); };
  e.lap_s = [](const Vec2& p, double t) { return ex1_lap_s(p.x(), p.y(), t); };
  e.grad_s = [](const Vec2& p, double t) { return Vec2(ex1_s_x(p.x(), p.y(), t), ex1_s_y(p.x(), p.y(), t)); };
  e.c = [](const Vec2& p, double t) { return ex1_c(p.x(), p.y(), t); };
  e.c_t = [](const Vec2& p, double t) { return ex1_c_t(p.x(), p.y(), t); };
  e.lap_c = [](const Vec2& p, double t) { return ex1_lap_c(p.x(), p.y(), t); };
  e.grad_c = [](const Vec2& p, double t) { return Vec2(ex1_c_x(p.x(), p.y(), t), ex1_c_y(p.x(), p.y(), t)); };
  return e;
}

ExactSolution make_ex2() {
  ExactSolution e;
  e.u = [](const Vec2& p, double t) { return Vec2(ex2_u1(p.x(), p.y(), t), ex2_u2(p.x(), p.y(), t)); };
  e.u_t = [](const Vec2&, double) { return Vec2::Zero(); };
  e.lap_u = [](const Vec2& p, double t) { return Vec2(ex2_lap_u1(p.x(), p.y(), t), ex2_lap_u2(p.x(), p.y(), t)); };
  e.grad_u = [](const Vec2& p, double t) {
    Mat2 g;
    g << ex2_u1_x(p.x(), p.y(), t), ex2_u1_y(p.x(), p.y(), t),
         ex2_u2_x(p.x(), p.y(), t), ex2_u2_y(p.x(), p.y(), t);
    return g;
  };
  e.p = [](const Vec2& p, double t) { return ex2_p(p.x(), p.y(), t); };
  e.grad_p = [](const Vec2& p, double t) { return Vec2(ex2_p_x(p.x(), p.y(), t), ex2_p_y(p.x(), p.y(), t)); };
  e.s = [](const Vec2& p, double t) { return ex2_s(p.x(), p.y(), t); };
  e.s_t = [](const Vec2&, double) { return 0.0; };
  e.lap_s = [](const Vec2& p, double t) { return ex2_lap_s(p.x(), p.y(), t); };
  e.grad_s = [](const Vec2& p, double t) { return Vec2(ex2_s_x(p.x(), p.y(), t), ex2_s_y(p.x(), p.y(), t)); };
  e.c = [](const Vec2& p, double t) { return ex2_c(p.x(), p.y(), t); };
  e.c_t = [](const Vec2&, double) { return 0.0; };
  e.lap_c = [](const Vec2& p, double t) { return ex2_lap_c(p.x(), p.y(), t); };
  e.grad_c = [](const Vec2& p, double t) { return Vec2(ex2_c_x(p.x(), p.y(), t), ex2_c_y(p.x(), p.y(), t)); };
  return e;
}

ExactSolution make_ex3() {
  ExactSolution e = make_ex1(); // s and c coincide
  e.u = [](const Vec2& p, double t) { return Vec2(ex3_u1(p.x(), p.y(), t), ex3_u2(p.x(), p.y(), t)); };
  e.u_t = [](const Vec2& p, double t) { return Vec2(ex3_u1_t(p.x(), p.y(), t), ex3_u2_t(p.x(), p.y(), t)); };
  e.lap_u = [](const Vec2& p, double t) { return Vec2(ex3_lap_u1(p.x(), p.y(), t), ex3_lap_u2(p.x(), p.y(), t)); };
  e.grad_u = [](const Vec2& p, double t) {
    Mat2 g;
    g << ex3_u1_x(p.x(), p.y(), t), ex3_u1_y(p.x(), p.y(), t),
         ex3_u2_x(p.x(), p.y(), t), ex3_u2_y(p.x(), p.y(), t);
    return g;
  };
  e.p = [](const Vec2& p, double t) { return ex3_p(p.x(), p.y(), t); };
  e.grad_p = [](const Vec2& p, double t) { return Vec2(ex3_p_x(p.x(), p.y(), t), ex3_p_y(p.x(), p.y(), t)); };
  return e;
}

// ---------------------------------------------------------------------------

double nu_of_c(const PhysicalParams& prm, double c) {
  require(prm.viscosity.kind != ViscosityModel::Kind::Spatial,
          "manufactured_forcing: spatial viscosity has no closed form");
  return prm.viscosity.value(c, 0, Vec2::Zero());
}

} // namespace

Sources TimeSources::at(double t) const {
  Sources s;
  if (f) s.f = [fn = f, t](const Vec2& x) { return fn(x, t); };
  if (f1) s.f1 = [fn = f1, t](const Vec2& x) { return fn(x, t); };
  if (f2) s.f2 = [fn = f2, t](const Vec2& x) { return fn(x, t); };
  return s;
}

EstimatorSources TimeSources::estimator_at(double t) const {
  EstimatorSources s;
  if (f) s.f = [fn = f, t](const Vec2& x) { return fn(x, t); };
  if (f1) s.f1 = [fn = f1, t](const Vec2& x) { return fn(x, t); };
  if (f2) s.f2 = [fn = f2, t](const Vec2& x) { return fn(x, t); };
  return s;
}

TimeSources manufactured_forcing(const ExactSolution& exact, const PhysicalParams& params) {
  TimeSources out;
  out.f = [exact, params](const Vec2& x, double t) -> Vec2 {
    const Vec2 u = exact.u(x, t);
    const Mat2 gu = exact.grad_u(x, t);
    const double cval = exact.c(x, t);
    const double sval = exact.s(x, t);
    const double nu = nu_of_c(params, cval);
    const double dnu = params.viscosity.deriv(cval);
    const Vec2 div_visc = nu * exact.lap_u(x, t) + gu * (dnu * exact.grad_c(x, t));
    const double rho = params.alpha * sval + params.beta * cval + params.buoyancy_offset;
    Vec2 f = exact.u_t(x, t) + gu * u - div_visc + exact.grad_p(x, t) / params.rho_m -
             rho * params.gravity;
    if (params.drag > 0.0) f += params.drag * u;
    return f;
  };
  out.f1 = [exact, params](const Vec2& x, double t) {
    return exact.s_t(x, t) + exact.u(x, t).dot(exact.grad_s(x, t)) -
           exact.lap_s(x, t) / params.Sc;
  };
  out.f2 = [exact, params](const Vec2& x, double t) {
    const Vec2 adv = exact.u(x, t) - Vec2(0.0, params.v_p);
    return exact.c_t(x, t) + adv.dot(exact.grad_c(x, t)) -
           exact.lap_c(x, t) / (params.tau * params.Sc);
  };
  return out;
}

namespace {
PhysicalParams smooth_benchmark_params() {
  PhysicalParams prm;
  prm.viscosity = ViscosityModel::constant(1.0);
  prm.rho_m = 1.5;
  prm.gravity = Vec2(0.0, -1.0);
  prm.Sc = 1.0;
  prm.tau = 0.5;
  prm.v_p = 1.0;
  prm.alpha = 0.0;
  prm.beta = 0.0;
  prm.buoyancy_offset = 1.0 / 1.5; // fixed rho = 1.0
  prm.a0 = 50.0;
  return prm;
}
} // namespace

const ProblemSpec& problem_registry(const std::string& name) {
  static const auto make_registry = [] {
    std::vector<ProblemSpec> reg;
    {
      ProblemSpec p;
      p.name = "example1";
      p.kind = ExperimentKind::TransientConvergence;
      p.params = smooth_benchmark_params();
      p.exact = make_ex1();
      p.forcing = manufactured_forcing(*p.exact, p.params);
      p.default_degree = 2;
      p.default_t_end = 2.0;
      p.default_levels = 4;
      reg.push_back(std::move(p));
    }
    {
      ProblemSpec p;
      p.name = "example2";
      p.kind = ExperimentKind::SteadyAdaptive;
      p.params.viscosity = ViscosityModel::affine_exponential(0.1);
      p.params.rho_m = 1.5;
      p.params.gravity = Vec2(0.0, -1.0);
      p.params.Sc = 1.0;
      p.params.tau = 0.5;
      p.params.v_p = 1.0;
      p.params.alpha = 0.5;
      p.params.beta = 0.5;
      p.params.a0 = 5.0;
      p.params.nitsche = 1e3;
      p.exact = make_ex2();
      p.forcing = manufactured_forcing(*p.exact, p.params);
      p.default_degree = 1;
      p.default_gamma = 1e-4;
      p.default_levels = 7;
      reg.push_back(std::move(p));
    }
    {
      ProblemSpec p;
      p.name = "example3";
      p.kind = ExperimentKind::TransientEstimator;
      p.params = smooth_benchmark_params();
      p.exact = make_ex3();
      p.forcing = manufactured_forcing(*p.exact, p.params);
      p.default_degree = 1;
      p.default_dt = 0.002;
      p.default_t_end = 0.01;
      p.default_levels = 6;
      reg.push_back(std::move(p));
    }
    {
      ProblemSpec p;
      p.name = "example4";
      p.kind = ExperimentKind::DemoLayering;
      p.params.viscosity = ViscosityModel::constant(1e-3);
      p.params.rho_m = 1.0;
      p.params.gravity = Vec2(0.0, -9.8);
      p.params.Sc = 7.0;
      p.params.tau = 25.0;
      p.params.v_p = 0.04;
      p.params.alpha = -2.0;
      p.params.beta = 0.5;
      p.params.a0 = 50.0;
      p.default_degree = 1;
      p.default_dt = 0.1;
      p.default_t_end = 6.0;
      reg.push_back(std::move(p));
    }
    {
      ProblemSpec p;
      p.name = "example5";
      p.kind = ExperimentKind::DemoExothermic;
      p.params.viscosity = ViscosityModel::constant(1.0); // replaced by the random field per run
      p.params.rho_m = 1.0;
      p.params.gravity = Vec2(0.0, -1.0);
      p.params.Sc = 0.125;  // 1/Sc = 8
      p.params.tau = 3.2;   // 1/(tau Sc) = 2.5
      p.params.v_p = 0.0;
      p.params.alpha = 5.0;
      p.params.beta = -1.0;
      p.params.a0 = 50.0;
      p.params.drag = 1.0;
      p.params.slip_boundary = true;
      p.default_degree = 1;
      p.default_dt = 20.0;
      p.default_t_end = 1500.0;
      p.default_gamma = 0.5;
      reg.push_back(std::move(p));
    }
    return reg;
  }();
  static const std::vector<ProblemSpec>& reg = make_registry;
  for (const auto& p : reg)
    if (p.name == name) return p;
  throw Error("unknown problem '" + name + "'");
}

std::vector<std::string> problem_names() {
  return {"example1", "example2", "example3", "example4", "example5"};
}

double domain_integral(const Mesh& m, const std::function<double(const Vec2&)>& fn) {
  const auto& rule = quadrature_rule(QuadEntity::Triangle, 10);
  double acc = 0.0;
  for (int t = 0; t < m.num_triangles(); ++t) {
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < rule.size(); ++q)
      acc += J * rule.weights[q] * fn(m.map_to_physical(t, rule.points[q]));
  }
  return acc;
}

Vector random_unit_vector(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Vector v(n);
  for (int i = 0; i < n; ++i)
    v[i] = static_cast<double>(rng() >> 11) * 0x1.0p-53; // uniform on [0,1)
  return v;
}

namespace {

struct LevelSpaces {
  MeshPtr mesh;
  SpacePtr U, P, M;
};

LevelSpaces make_spaces(MeshPtr mesh, int k) {
  LevelSpaces ls;
  ls.mesh = mesh;
  ls.U = SpaceDescriptor::bdm(mesh, k);
  ls.P = SpaceDescriptor::pressure(mesh, k);
  ls.M = SpaceDescriptor::lagrange(mesh, k);
  return ls;
}

long total_dofs(const LevelSpaces& ls) {
  return ls.U->ndofs + ls.P->ndofs + 2L * ls.M->ndofs + 1; // + pressure multiplier
}

double mesh_h(const Mesh& m) {
  double h = 0.0;
  for (const auto& t : m.triangles) h = std::max(h, t.diameter);
  return h;
}

CoupledState interpolate_exact(const LevelSpaces& ls, const ExactSolution& ex, double t) {
  CoupledState st;
  st.u = bdm_interpolate(ls.U, [&](const Vec2& x) { return ex.u(x, t); });
  st.p = l2_project(ls.P, [&](const Vec2& x) { return ex.p(x, t); });
  st.s = lagrange_interpolate(ls.M, [&](const Vec2& x) { return ex.s(x, t); });
  st.c = lagrange_interpolate(ls.M, [&](const Vec2& x) { return ex.c(x, t); });
  return st;
}

PhysicalParams apply_overrides(PhysicalParams prm, const ExperimentConfig& cfg) {
  if (cfg.a0 > 0.0) prm.a0 = cfg.a0;
  if (cfg.nitsche >= 0.0) prm.nitsche = cfg.nitsche;
  if (cfg.drag >= 0.0) prm.drag = cfg.drag;
  return prm;
}

TransientProblem bind_problem(const ProblemSpec& spec, const PhysicalParams& prm,
                              MeshPtr mesh) {
  TransientProblem tp;
  tp.params = prm;
  if (!spec.forcing.empty())
    tp.sources_at = [f = spec.forcing](double t) { return f.at(t); };
  if (spec.exact) {
    const ExactSolution ex = *spec.exact;
    tp.bcs_at = [ex](double t) {
      CoupledBCs bcs;
      bcs.velocity = [ex, t](const Vec2& x) { return ex.u(x, t); };
      bcs.s_dirichlet = ScalarDirichlet{[ex, t](const Vec2& x) { return ex.s(x, t); }, {}};
      bcs.c_dirichlet = ScalarDirichlet{[ex, t](const Vec2& x) { return ex.c(x, t); }, {}};
      return bcs;
    };
    tp.pressure_mean_at = [ex, mesh](double t) {
      return domain_integral(*mesh, [&](const Vec2& x) { return ex.p(x, t); });
    };
  }
  return tp;
}

std::string out_path(const ExperimentConfig& cfg, const std::string& file) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  return (fs::path(cfg.out_dir) / file).string();
}

// Example 1: BDF2 accuracy sweep on uniformly refined unit squares,
// dt = sqrt(2) h.
ExperimentResult run_transient_convergence(const ProblemSpec& spec, const ExperimentConfig& cfg) {
  const int k = cfg.degree > 0 ? cfg.degree : spec.default_degree;
  const int levels = cfg.levels >= 0 ? cfg.levels : spec.default_levels;
  const double t_end = cfg.t_end > 0.0 ? cfg.t_end : spec.default_t_end;
  const PhysicalParams prm = apply_overrides(spec.params, cfg);
  const ExactSolution& ex = *spec.exact;
  ExperimentResult result;

  for (int level = 0; level <= levels; ++level) {
    const int nx = 2 << level;
    LevelSpaces ls = make_spaces(build_rectangle_mesh(1.0, 1.0, nx, nx), k);
    const double h = mesh_h(*ls.mesh);
    double dt = cfg.dt > 0.0 ? cfg.dt / (1 << level) : std::sqrt(2.0) * h;
    int nsteps = std::max(1, static_cast<int>(std::lround(t_end / dt)));
    dt = t_end / nsteps;

    TransientProblem tp = bind_problem(spec, prm, ls.mesh);
    StepState st;
    st.t_n = 0.0;
    st.dt = dt;
    st.current = interpolate_exact(ls, ex, 0.0);
    st.lambda = 0.0;

    double eu2 = 0.0, ep2 = 0.0, es2 = 0.0, ec2 = 0.0;
    double div_final = 0.0;
    int iters = 0;
    for (int n = 1; n <= nsteps; ++n) {
      st.scheme = n == 1 ? TimeScheme::BackwardEuler : TimeScheme::Bdf2;
      NewtonDiagnostics diag;
      st = advance(st, tp, &diag);
      iters = std::max(iters, diag.iterations);
      const NormSet ns = error_norms(st.current, ex, st.t_n);
      eu2 += dt * ns.e_u * ns.e_u;
      ep2 += dt * ns.e_p * ns.e_p;
      es2 += dt * ns.e_s * ns.e_s;
      ec2 += dt * ns.e_c * ns.e_c;
      div_final = ns.div_sup;
      result.max_div_sup = std::max(result.max_div_sup, ns.div_sup);
      result.max_newton_iters = std::max(result.max_newton_iters, diag.iterations);
    }
    RunRow row;
    row.level = level;
    row.h = h;
    row.dof = total_dofs(ls);
    row.dt = dt;
    row.norms = NormSet{std::sqrt(eu2), std::sqrt(ep2), std::sqrt(es2), std::sqrt(ec2), div_final};
    row.newton_iters = iters;
    result.record.rows.push_back(row);
  }
  compute_rates(result.record);
  if (!cfg.out_dir.empty()) {
    std::ofstream os(out_path(cfg, spec.name + "_convergence.csv"));
    write_run_csv(result.record, os);
  }
  return result;
}

// Example 2: stationary solves on the L-shape under uniform or
// estimator-driven adaptive refinement.
ExperimentResult run_steady_adaptive(const ProblemSpec& spec, const ExperimentConfig& cfg) {
  const int k = cfg.degree > 0 ? cfg.degree : spec.default_degree;
  const int levels = cfg.levels >= 0 ? cfg.levels : spec.default_levels;
  const double gamma = cfg.gamma_ratio > 0.0 ? cfg.gamma_ratio : spec.default_gamma;
  const bool adaptive = !cfg.uniform;
  const PhysicalParams prm = apply_overrides(spec.params, cfg);
  const ExactSolution& ex = *spec.exact;
  ExperimentResult result;
  result.record.adaptive_rates = adaptive;

  MeshPtr mesh = build_lshape_mesh(1);
  CoupledState warm;
  bool have_warm = false;
  for (int level = 0; level <= levels; ++level) {
    LevelSpaces ls = make_spaces(mesh, k);
    TransientProblem tp = bind_problem(spec, prm, ls.mesh);
    CoupledState init{DiscreteField(ls.U), DiscreteField(ls.P), DiscreteField(ls.M),
                      DiscreteField(ls.M)};
    if (have_warm) {
      init.u = transfer_field(warm.u, ls.U);
      init.p = transfer_field(warm.p, ls.P);
      init.s = transfer_field(warm.s, ls.M);
      init.c = transfer_field(warm.c, ls.M);
    }
    NewtonDiagnostics diag;
    CoupledState sol = steady_solve(init, tp, &diag);

    const NormSet ns = error_norms(sol, ex, 0.0);
    const ElementIndicators ind = steady_indicators(
        sol, spec.forcing.estimator_at(0.0), prm,
        [&](const Vec2& x) { return ex.u(x, 0.0); });
    const double psi = ind.global();
    const double total_err = std::sqrt(ns.e_u * ns.e_u + ns.e_p * ns.e_p + ns.e_s * ns.e_s +
                                       ns.e_c * ns.e_c);
    RunRow row;
    row.level = level;
    row.h = mesh_h(*mesh);
    row.dof = total_dofs(ls);
    row.norms = ns;
    row.psi = psi;
    row.eff = effectivity(total_err, psi);
    row.newton_iters = diag.iterations;
    result.record.rows.push_back(row);
    result.max_div_sup = std::max(result.max_div_sup, ns.div_sup);
    result.max_newton_iters = std::max(result.max_newton_iters, diag.iterations);

    if (!cfg.out_dir.empty()) {
      std::ofstream os(out_path(cfg, spec.name + "_indicators_l" + std::to_string(level) + ".csv"));
      write_indicator_csv(ind, os);
      if (level == levels) {
        const std::string vtk = out_path(cfg, spec.name + "_final.vtk");
        write_vtk(sol, vtk, &ind);
        result.vtk_files.push_back(vtk);
      }
    }
    if (level < levels) {
      mesh = adaptive ? refine_marked(*mesh, dorfler_mark(ind, gamma)) : refine_uniform(*mesh);
      warm = sol;
      have_warm = true;
    }
  }
  compute_rates(result.record);
  if (!cfg.out_dir.empty()) {
    std::ofstream os(out_path(cfg, spec.name + (adaptive ? "_adaptive.csv" : "_uniform.csv")));
    write_run_csv(result.record, os);
  }
  return result;
}

// Example 3: backward Euler runs with the accumulated space-time estimator on
// uniformly refined unit squares (fixed dt).
ExperimentResult run_transient_estimator(const ProblemSpec& spec, const ExperimentConfig& cfg) {
  const int k = cfg.degree > 0 ? cfg.degree : spec.default_degree;
  const int levels = cfg.levels >= 0 ? cfg.levels : spec.default_levels;
  const double t_end = cfg.t_end > 0.0 ? cfg.t_end : spec.default_t_end;
  const double dt0 = cfg.dt > 0.0 ? cfg.dt : spec.default_dt;
  const PhysicalParams prm = apply_overrides(spec.params, cfg);
  const ExactSolution& ex = *spec.exact;
  ExperimentResult result;

  for (int level = 0; level <= levels; ++level) {
    const int nx = 2 << level;
    LevelSpaces ls = make_spaces(build_rectangle_mesh(1.0, 1.0, nx, nx), k);
    int nsteps = std::max(1, static_cast<int>(std::lround(t_end / dt0)));
    const double dt = t_end / nsteps;
    TransientProblem tp = bind_problem(spec, prm, ls.mesh);

    StepState st;
    st.t_n = 0.0;
    st.dt = dt;
    st.scheme = TimeScheme::BackwardEuler;
    st.current = interpolate_exact(ls, ex, 0.0);
    st.lambda = 0.0;

    UpsilonAccumulator acc;
    double eu2 = 0.0, ep2 = 0.0, es2 = 0.0, ec2 = 0.0;
    double div_final = 0.0;
    int iters = 0;
    for (int n = 1; n <= nsteps; ++n) {
      const CoupledState old_fields = st.current;
      const double t_old = st.t_n;
      NewtonDiagnostics diag;
      st = advance(st, tp, &diag);
      iters = std::max(iters, diag.iterations);
      acc.add_step(st.current, old_fields, spec.forcing.estimator_at(st.t_n),
                   spec.forcing.estimator_at(t_old),
                   [&, tn = st.t_n](const Vec2& x) { return ex.u(x, tn); },
                   [&, to = t_old](const Vec2& x) { return ex.u(x, to); }, nullptr, prm, dt);
      const NormSet ns = error_norms(st.current, ex, st.t_n);
      eu2 += dt * ns.e_u * ns.e_u;
      ep2 += dt * ns.e_p * ns.e_p;
      es2 += dt * ns.e_s * ns.e_s;
      ec2 += dt * ns.e_c * ns.e_c;
      div_final = ns.div_sup;
      result.max_div_sup = std::max(result.max_div_sup, ns.div_sup);
      result.max_newton_iters = std::max(result.max_newton_iters, diag.iterations);
    }
    const double total_err = std::sqrt(eu2 + ep2 + es2 + ec2);
    RunRow row;
    row.level = level;
    row.h = mesh_h(*ls.mesh);
    row.dof = total_dofs(ls);
    row.dt = dt;
    row.norms = NormSet{std::sqrt(eu2), std::sqrt(ep2), std::sqrt(es2), std::sqrt(ec2), div_final};
    row.psi = acc.upsilon();
    row.eff = effectivity(total_err, acc.upsilon());
    row.newton_iters = iters;
    result.record.rows.push_back(row);
  }
  compute_rates(result.record);
  if (!cfg.out_dir.empty()) {
    std::ofstream os(out_path(cfg, spec.name + "_estimator.csv"));
    write_run_csv(result.record, os);
  }
  return result;
}

void track_bounds(const CoupledState& st, DemoBounds& b) {
  b.s_min = std::min(b.s_min, st.s.coeffs.minCoeff());
  b.s_max = std::max(b.s_max, st.s.coeffs.maxCoeff());
  b.c_min = std::min(b.c_min, st.c.coeffs.minCoeff());
  b.c_max = std::max(b.c_max, st.c.coeffs.maxCoeff());
}

DemoBounds init_bounds(const CoupledState& st) {
  DemoBounds b;
  b.s_min = b.s_lo = st.s.coeffs.minCoeff();
  b.s_max = b.s_hi = st.s.coeffs.maxCoeff();
  b.c_min = b.c_lo = st.c.coeffs.minCoeff();
  b.c_max = b.c_hi = st.c.coeffs.maxCoeff();
  // allowed band: initial range widened by 10% of its span on both sides
  const double sspan = std::max(b.s_hi - b.s_lo, 1e-12);
  const double cspan = std::max(b.c_hi - b.c_lo, 1e-12);
  b.s_lo -= 0.1 * sspan;
  b.s_hi += 0.1 * sspan;
  b.c_lo -= 0.1 * cspan;
  b.c_hi += 0.1 * cspan;
  return b;
}

// Example 4: salinity-driven layering on a tall rectangle, BDF2 time stepping.
ExperimentResult run_demo_layering(const ProblemSpec& spec, const ExperimentConfig& cfg) {
  const int k = cfg.degree > 0 ? cfg.degree : spec.default_degree;
  const double t_end = cfg.t_end > 0.0 ? cfg.t_end : spec.default_t_end;
  const double dt = cfg.dt > 0.0 ? cfg.dt : spec.default_dt;
  const PhysicalParams prm = apply_overrides(spec.params, cfg);
  ExperimentResult result;

  const double Lx = 40.0, Ly = 300.0;
  LevelSpaces ls = make_spaces(build_rectangle_mesh(Lx, Ly, 8, 60), k);
  const double A0 = 2.86, A1 = 0.5, sigma = 0.35;
  const auto profile = [&](const Vec2& x) {
    const double z = x.y();
    return A0 * std::exp(-z * z / (sigma * sigma)) + A1 * std::sin(x.x());
  };
  StepState st;
  st.dt = dt;
  st.current = CoupledState{DiscreteField(ls.U), DiscreteField(ls.P),
                            lagrange_interpolate(ls.M, profile),
                            lagrange_interpolate(ls.M, profile)};
  DemoBounds bounds = init_bounds(st.current);

  TransientProblem tp;
  tp.params = prm;
  tp.bcs_at = [](double) {
    CoupledBCs bcs; // no-slip velocity, natural scalar fluxes
    bcs.velocity = [](const Vec2&) { return Vec2::Zero(); };
    return bcs;
  };

  const int nsteps = std::max(1, static_cast<int>(std::lround(t_end / dt)));
  RunRow row0;
  row0.level = 0;
  row0.h = mesh_h(*ls.mesh);
  row0.dof = total_dofs(ls);
  row0.dt = dt;
  result.record.rows.push_back(row0);
  if (!cfg.out_dir.empty()) {
    const std::string vtk = out_path(cfg, spec.name + "_t0.vtk");
    write_vtk(st.current, vtk);
    result.vtk_files.push_back(vtk);
  }
  for (int n = 1; n <= nsteps; ++n) {
    st.scheme = n == 1 ? TimeScheme::BackwardEuler : TimeScheme::Bdf2;
    NewtonDiagnostics diag;
    st = advance(st, tp, &diag);
    track_bounds(st.current, bounds);
    const double dv = divergence_sup(st.current.u);
    result.max_div_sup = std::max(result.max_div_sup, dv);
    result.max_newton_iters = std::max(result.max_newton_iters, diag.iterations);
    if (!cfg.out_dir.empty() && (n == nsteps / 2 || n == nsteps)) {
      const std::string vtk =
          out_path(cfg, spec.name + "_t" + std::to_string(st.t_n).substr(0, 4) + ".vtk");
      write_vtk(st.current, vtk);
      result.vtk_files.push_back(vtk);
    }
    RunRow row;
    row.level = n;
    row.h = row0.h;
    row.dof = row0.dof;
    row.dt = dt;
    row.norms.div_sup = dv;
    row.newton_iters = diag.iterations;
    result.record.rows.push_back(row);
  }
  result.bounds = bounds;
  if (!cfg.out_dir.empty()) {
    std::ofstream os(out_path(cfg, spec.name + "_log.csv"));
    write_run_csv(result.record, os);
  }
  return result;
}

// Example 5: exothermic fingering demo; Picard (Oseen/transport) stepping and
// one estimator-guided adaptive pass per step.
ExperimentResult run_demo_exothermic(const ProblemSpec& spec, const ExperimentConfig& cfg) {
  const int k = cfg.degree > 0 ? cfg.degree : spec.default_degree;
  const double dt = cfg.dt > 0.0 ? cfg.dt : spec.default_dt;
  const double gamma = cfg.gamma_ratio > 0.0 ? cfg.gamma_ratio : spec.default_gamma;
  const int nsteps = cfg.demo_steps > 0 ? cfg.demo_steps : 10;
  PhysicalParams prm = apply_overrides(spec.params, cfg);
  ExperimentResult result;

  const double L = 2000.0, H = 1000.0, eps = H / 20.0;
  LevelSpaces ls = make_spaces(build_rectangle_mesh(L, H, 50, 26), k);

  const Vector zc = random_unit_vector(ls.M->ndofs, cfg.seed);
  const Vector zs = random_unit_vector(ls.M->ndofs, cfg.seed + 1);
  const Vector znu = random_unit_vector(ls.M->ndofs, cfg.seed + 2);
  DiscreteField c0(ls.M), s0(ls.M), nu_field(ls.M);
  for (int d = 0; d < ls.M->ndofs; ++d) {
    const Vec2 x = ls.M->lagrange_node(d);
    const bool top = x.y() >= H - eps;
    c0.coeffs[d] = top ? 0.999 + 0.001 * zc[d] : 0.0;
    s0.coeffs[d] = top ? 0.999 + 0.001 * zs[d] : 0.0;
    nu_field.coeffs[d] = 1.0 + 0.25 * znu[d];
  }
  prm.viscosity = ViscosityModel::spatial(nu_field);

  StepState st;
  st.dt = dt;
  st.scheme = TimeScheme::BackwardEuler;
  st.current = CoupledState{DiscreteField(ls.U), DiscreteField(ls.P), s0, c0};
  DemoBounds bounds = init_bounds(st.current);

  const auto make_tp = [&](const PhysicalParams& p) {
    TransientProblem tp;
    tp.params = p;
    tp.bcs_at = [H](double) {
      CoupledBCs bcs; // slip velocity (normal trace zero), 0/1 scalar data
      const ScalarFn topbot = [H](const Vec2& x) { return x.y() > 0.5 * H ? 1.0 : 0.0; };
      bcs.s_dirichlet = ScalarDirichlet{topbot, {kBottom, kTop}};
      bcs.c_dirichlet = ScalarDirichlet{topbot, {kBottom, kTop}};
      return bcs;
    };
    return tp;
  };

  if (!cfg.out_dir.empty()) {
    const std::string vtk = out_path(cfg, spec.name + "_step0.vtk");
    write_vtk(st.current, vtk);
    result.vtk_files.push_back(vtk);
  }
  RunRow row0;
  row0.level = 0;
  row0.h = mesh_h(*ls.mesh);
  row0.dof = total_dofs(ls);
  row0.dt = dt;
  result.record.rows.push_back(row0);

  UpsilonAccumulator acc;
  for (int n = 1; n <= nsteps; ++n) {
    const CoupledState old_fields = st.current;
    PicardDiagnostics pd;
    st = picard_advance(st, make_tp(prm), &pd);
    track_bounds(st.current, bounds);
    const double dv = divergence_sup(st.current.u);
    result.max_div_sup = std::max(result.max_div_sup, dv);
    result.max_newton_iters = std::max(result.max_newton_iters, pd.iterations);

    // one adaptive pass guided by the per-step estimator contribution
    const ElementIndicators ind =
        acc.add_step(st.current, old_fields, EstimatorSources{}, EstimatorSources{}, nullptr,
                     nullptr, nullptr, prm, dt);
    RunRow row;
    row.level = n;
    row.h = mesh_h(*ls.mesh);
    row.dof = total_dofs(ls);
    row.dt = dt;
    row.norms.div_sup = dv;
    row.psi = ind.global();
    row.newton_iters = pd.iterations;
    result.record.rows.push_back(row);

    if (n < nsteps) {
      MeshPtr fine = refine_marked(*ls.mesh, dorfler_mark(ind, gamma));
      LevelSpaces nls = make_spaces(fine, k);
      StepState nst;
      nst.dt = dt;
      nst.scheme = TimeScheme::BackwardEuler;
      nst.t_n = st.t_n;
      nst.current = CoupledState{transfer_field(st.current.u, nls.U),
                                 transfer_field(st.current.p, nls.P),
                                 transfer_field(st.current.s, nls.M),
                                 transfer_field(st.current.c, nls.M)};
      nst.lambda = st.lambda;
      nu_field = transfer_field(nu_field, nls.M);
      prm.viscosity = ViscosityModel::spatial(nu_field);
      ls = nls;
      st = nst;
    }
    if (!cfg.out_dir.empty() && (n % 5 == 0 || n == nsteps)) {
      const std::string vtk = out_path(cfg, spec.name + "_step" + std::to_string(n) + ".vtk");
      write_vtk(st.current, vtk);
      result.vtk_files.push_back(vtk);
    }
  }
  result.bounds = bounds;
  if (!cfg.out_dir.empty()) {
    std::ofstream os(out_path(cfg, spec.name + "_log.csv"));
    write_run_csv(result.record, os);
  }
  return result;
}

} // namespace

ExperimentResult run_experiment(const ProblemSpec& spec, const ExperimentConfig& cfg) {
  switch (spec.kind) {
    case ExperimentKind::TransientConvergence: return run_transient_convergence(spec, cfg);
    case ExperimentKind::SteadyAdaptive: return run_steady_adaptive(spec, cfg);
    case ExperimentKind::TransientEstimator: return run_transient_estimator(spec, cfg);
    case ExperimentKind::DemoLayering: return run_demo_layering(spec, cfg);
    case ExperimentKind::DemoExothermic: return run_demo_exothermic(spec, cfg);
  }
  throw Error("run_experiment: unknown kind");
}

} // namespace divflow
