#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace divflow {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;

/// Error type for all recoverable failures (bad input, solver breakdown, I/O).
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

} // namespace divflow
