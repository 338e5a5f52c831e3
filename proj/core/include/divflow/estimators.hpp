#pragma once

#include "divflow/analysis.hpp"

namespace divflow {

/// Per-element indicator parts (all squared): volume residuals Psi^2_{R_K},
/// edge residuals Psi^2_{e_K}, velocity jumps Psi^2_{J_K}.
struct ElementIndicators {
  MeshPtr mesh;
  Vector psi_R2, psi_e2, psi_J2;
  double data_osc = 0.0; // ||f - f_h||_0 over all sources (reported separately)

  double element_total2(int t) const { return psi_R2[t] + psi_e2[t] + psi_J2[t]; }
  double global2() const { return psi_R2.sum() + psi_e2.sum() + psi_J2.sum(); }
  double global() const { return std::sqrt(global2()); }
};

/// Analytic extra sources entering the strong residuals (bound at a fixed
/// time by the caller); interpolated into the scalar space before use, with
/// the data oscillation reported on the side.
struct EstimatorSources {
  VectorFn f;
  ScalarFn f1, f2;
};

/// Discrete time-derivative contributions of the fully discrete residuals:
/// -(y^k - I^k y^{k-1}) / tau is added to each volume residual. Old fields
/// must already live on the same mesh as the evaluated tuple.
struct TimeResidualTerms {
  const DiscreteField* u_old = nullptr;
  const DiscreteField* s_old = nullptr;
  const DiscreteField* c_old = nullptr;
  double tau = 0.0;
};

/// Residual-based indicators of the (steady) coupled system at the given
/// fields; `udata` supplies the velocity Dirichlet trace used in the boundary
/// jump part (null = homogeneous).
ElementIndicators steady_indicators(const CoupledState& fields, const EstimatorSources& sources,
                                    const PhysicalParams& params, const VectorFn& udata,
                                    const TimeResidualTerms* time_terms = nullptr);

/// CSV: element_id,psi_R,psi_e,psi_J,psi_total (unsquared values).
void write_indicator_csv(const ElementIndicators& ind, std::ostream& os);

struct TimeIndicator {
  double xi1_sq = 0.0, xi2_sq = 0.0, xi3_sq = 0.0;
  double total2() const { return xi1_sq + xi2_sq + xi3_sq; }
  double total() const { return std::sqrt(total2()); }
};

/// Xi_k of one time step: broken-seminorm velocity increment with the
/// h_e/tau^2 jump corrections, plus H1 increments of s and c. Transferred old
/// fields live on the current mesh; `u_old_raw` is the untransferred old field
/// (null when the meshes coincide, making the I^k u - u correction vanish).
TimeIndicator time_indicator(const CoupledState& level_k, const DiscreteField& u_old_transferred,
                             const DiscreteField& s_old_transferred,
                             const DiscreteField& c_old_transferred,
                             const DiscreteField* u_old_raw, double tau);

/// Accumulates Xi^2 = sum_k Xi_k^2 and Upsilon^2 = sum_k tau_k (Y_k^2(new) +
/// Y_k^2(transferred old)) over a time loop.
class UpsilonAccumulator {
public:
  struct StepContribution {
    double tau = 0.0;
    double upsilon_new2 = 0.0, upsilon_old2 = 0.0;
    TimeIndicator xi;
  };

  /// Adds one step. Sources are bound at t_k (new) and t_{k-1} (old).
  /// Returns the per-element indicators of the new tuple (usable for marking).
  ElementIndicators add_step(const CoupledState& new_fields, const CoupledState& old_transferred,
                             const EstimatorSources& src_new, const EstimatorSources& src_old,
                             const VectorFn& g_new, const VectorFn& g_old,
                             const DiscreteField* u_old_raw, const PhysicalParams& params,
                             double tau);

  double upsilon2() const { return upsilon2_; }
  double upsilon() const { return std::sqrt(upsilon2_); }
  double xi2() const { return xi2_; }
  double xi() const { return std::sqrt(xi2_); }
  const std::vector<StepContribution>& steps() const { return steps_; }

private:
  double upsilon2_ = 0.0, xi2_ = 0.0;
  std::vector<StepContribution> steps_;
};

/// Maximum-threshold bulk criterion: marks every element with
/// Psi_K >= gamma_ratio * max_L Psi_L.
MarkSet dorfler_mark(const ElementIndicators& ind, double gamma_ratio);

/// Ratio total_error / estimator.
double effectivity(double total_error, double estimator);

} // namespace divflow
