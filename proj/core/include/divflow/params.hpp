#pragma once

#include "divflow/field.hpp"
#include "divflow/types.hpp"

#include <functional>

namespace divflow {

/// Concentration-dependent viscosity nu(c), with the analytic derivative
/// needed by the exact Newton Jacobian. The Spatial variant carries a fixed
/// discrete field (independent of c, derivative zero).
struct ViscosityModel {
  enum class Kind { Constant, AffineExp, Spatial, Custom };
  Kind kind = Kind::Constant;
  double nu0 = 1.0;
  std::function<double(double)> custom_value;
  std::function<double(double)> custom_deriv;
  DiscreteField field;

  double value(double c, int tri, const Vec2& ref) const {
    switch (kind) {
      case Kind::Constant: return nu0;
      case Kind::AffineExp: return nu0 * (1.0 + std::exp(-0.25 * c));
      case Kind::Spatial: return eval_scalar(field, tri, ref).value;
      case Kind::Custom: return custom_value(c);
    }
    return nu0;
  }
  double deriv(double c) const {
    switch (kind) {
      case Kind::Constant: return 0.0;
      case Kind::AffineExp: return -0.25 * nu0 * std::exp(-0.25 * c);
      case Kind::Spatial: return 0.0;
      case Kind::Custom: return custom_deriv(c);
    }
    return 0.0;
  }
  bool depends_on_c() const { return kind == Kind::AffineExp || kind == Kind::Custom; }

  static ViscosityModel constant(double nu) {
    ViscosityModel m;
    m.kind = Kind::Constant;
    m.nu0 = nu;
    return m;
  }
  static ViscosityModel affine_exponential(double nu) {
    ViscosityModel m;
    m.kind = Kind::AffineExp;
    m.nu0 = nu;
    return m;
  }
  static ViscosityModel spatial(DiscreteField f) {
    ViscosityModel m;
    m.kind = Kind::Spatial;
    m.field = std::move(f);
    return m;
  }
  static ViscosityModel custom(std::function<double(double)> v, std::function<double(double)> d) {
    ViscosityModel m;
    m.kind = Kind::Custom;
    m.custom_value = std::move(v);
    m.custom_deriv = std::move(d);
    return m;
  }
};

/// All model coefficients. The buoyancy density is
/// rho/rho_m = alpha*s + beta*c + buoyancy_offset.
struct PhysicalParams {
  ViscosityModel viscosity = ViscosityModel::constant(1.0);
  double rho_m = 1.0;
  Vec2 gravity{0.0, -1.0};
  double Sc = 1.0;   // Schmidt number; s-diffusivity = 1/Sc
  double tau = 1.0;  // inverse diffusivity ratio; c-diffusivity = 1/(tau*Sc)
  double v_p = 0.0;  // settling speed along e_z = (0,1)
  double alpha = 0.0;
  double beta = 0.0;
  double buoyancy_offset = 0.0;
  double a0 = 50.0;      // SIP penalty
  double nitsche = -1.0; // tangential boundary penalty; <0 falls back to a0
  double drag = 0.0;     // Brinkman zeroth-order coefficient sigma
  bool slip_boundary = false;

  double boundary_penalty() const { return nitsche > 0.0 ? std::max(a0, nitsche) : a0; }

  void validate() const {
    require(Sc > 0.0, "params: Sc must be positive");
    require(tau > 0.0, "params: tau must be positive");
    require(a0 > 0.0, "params: a0 must be positive");
    require(drag >= 0.0, "params: drag must be nonnegative");
    require(rho_m > 0.0, "params: rho_m must be positive");
  }
};

} // namespace divflow
