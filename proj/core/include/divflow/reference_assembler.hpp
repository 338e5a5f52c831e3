#pragma once

#include "divflow/assembly.hpp"

namespace divflow {
namespace verify {

/// Dense high-order-quadrature reference assemblers, written directly from the
/// form definitions with their own facet handling. Verification only: they
/// share nothing with the sparse assembly path except basis evaluation.
DenseMatrix ref_a1h(const DiscreteField* c_field, const SpacePtr& uspace,
                    const PhysicalParams& params);
DenseMatrix ref_c1h(const DiscreteField& w_field, const SpacePtr& uspace);
DenseMatrix ref_b(const SpacePtr& uspace, const SpacePtr& pspace, const PhysicalParams& params);
DenseMatrix ref_a2(const SpacePtr& mspace, double diffusivity);
DenseMatrix ref_c2(const DiscreteField* advect, const Vec2& shift, const SpacePtr& mspace);
DenseMatrix ref_mass(const SpacePtr& space);

} // namespace verify
} // namespace divflow
