#pragma once

#include "divflow/types.hpp"

#include <array>
#include <vector>

namespace divflow {

enum class QuadEntity { Triangle, Edge };

/// Quadrature rule on the reference entity.
///
/// Triangle rules live on the unit reference triangle (0,0)-(1,0)-(0,1);
/// points are stored as (x,y) reference coordinates and weights sum to 1/2.
/// Edge rules live on the parametric interval [0,1]; points store (t,0) and
/// weights sum to 1.
struct QuadratureRule {
  QuadEntity entity;
  int degree = 0;
  std::vector<Vec2> points;
  std::vector<double> weights;

  int size() const { return static_cast<int>(points.size()); }

  /// Barycentric coordinates (1-x-y, x, y) of a triangle-rule point.
  std::array<double, 3> barycentric(int i) const {
    return {1.0 - points[i].x() - points[i].y(), points[i].x(), points[i].y()};
  }
};

inline constexpr int kMaxQuadratureDegree = 12;

/// Rule exact for all polynomials of total degree <= exactness_degree.
/// Throws for degrees above kMaxQuadratureDegree.
const QuadratureRule& quadrature_rule(QuadEntity entity, int exactness_degree);

} // namespace divflow
