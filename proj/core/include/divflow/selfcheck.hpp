#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace divflow {

struct CheckResult {
  std::string name;
  bool pass = false;
  double observed = 0.0;  // worst-case observed value
  double threshold = 0.0; // pass bound on `observed`
  std::string detail;
};

/// Always-on property suite: Jacobian vs central differences, commuting
/// diagram, SIP symmetry, upwind positivity, c2 skew-symmetry, coercivity
/// sample bound, quadrature exactness, dense-assembler equivalence, discrete
/// energy decay. Deterministic (fixed seeds).
std::vector<CheckResult> run_property_suite();

/// Prints one line per check; returns true when every check passed.
bool report_checks(const std::vector<CheckResult>& checks, std::ostream& os);

/// Stable CSV (names, thresholds, statuses) for golden-file comparison.
void write_check_csv(const std::vector<CheckResult>& checks, std::ostream& os);

} // namespace divflow
