#include "divflow/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <mutex>

namespace divflow {
namespace {

struct GaussRule {
  std::vector<double> nodes;   // on [-1,1]
  std::vector<double> weights;
};

// Golub-Welsch: nodes/weights from the symmetric tridiagonal Jacobi matrix of
// the orthogonal-polynomial recurrence.
GaussRule golub_welsch(const std::vector<double>& diag,
                       const std::vector<double>& offdiag, double mu0) {
  const int n = static_cast<int>(diag.size());
  DenseMatrix J = DenseMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i) J(i, i) = diag[i];
  for (int i = 0; i + 1 < n; ++i) {
    J(i, i + 1) = offdiag[i];
    J(i + 1, i) = offdiag[i];
  }
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(J);
  GaussRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    r.nodes[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    r.weights[i] = mu0 * v0 * v0;
  }
  return r;
}

// Gauss-Legendre on [-1,1], exact for degree 2n-1.
GaussRule gauss_legendre(int n) {
  std::vector<double> diag(n, 0.0), off(n - 1);
  for (int i = 1; i < n; ++i)
    off[i - 1] = i / std::sqrt(4.0 * i * i - 1.0);
  return golub_welsch(diag, off, 2.0);
}

// Gauss-Jacobi(1,0) on [-1,1] with weight (1-x), exact for degree 2n-1.
GaussRule gauss_jacobi10(int n) {
  std::vector<double> diag(n), off(n - 1);
  for (int k = 0; k < n; ++k)
    diag[k] = -1.0 / ((2.0 * k + 1.0) * (2.0 * k + 3.0));
  for (int k = 1; k < n; ++k)
    off[k - 1] = std::sqrt(k * (k + 1.0)) / (2.0 * k + 1.0);
  return golub_welsch(diag, off, 2.0);
}

QuadratureRule make_edge_rule(int degree) {
  const int n = degree / 2 + 1;
  GaussRule g = gauss_legendre(n);
  QuadratureRule r;
  r.entity = QuadEntity::Edge;
  r.degree = degree;
  for (int i = 0; i < n; ++i) {
    r.points.emplace_back(0.5 * (1.0 + g.nodes[i]), 0.0);
    r.weights.push_back(0.5 * g.weights[i]);
  }
  return r;
}

// Conical product rule: int_T f = int_0^1 int_0^1 f(u(1-y), y) (1-y) du dy.
QuadratureRule make_triangle_rule(int degree) {
  const int n = degree / 2 + 1;
  GaussRule gu = gauss_legendre(n);
  GaussRule gy = gauss_jacobi10(n);
  QuadratureRule r;
  r.entity = QuadEntity::Triangle;
  r.degree = degree;
  for (int j = 0; j < n; ++j) {
    const double y = 0.5 * (1.0 + gy.nodes[j]);
    const double wy = 0.25 * gy.weights[j]; // includes the (1-y) weight
    for (int i = 0; i < n; ++i) {
      const double u = 0.5 * (1.0 + gu.nodes[i]);
      const double wu = 0.5 * gu.weights[i];
      r.points.emplace_back(u * (1.0 - y), y);
      r.weights.push_back(wu * wy);
    }
  }
  return r;
}

} // namespace

const QuadratureRule& quadrature_rule(QuadEntity entity, int exactness_degree) {
  require(exactness_degree >= 0, "quadrature_rule: negative degree");
  require(exactness_degree <= kMaxQuadratureDegree,
          "quadrature_rule: degree " + std::to_string(exactness_degree) +
              " exceeds maximum " + std::to_string(kMaxQuadratureDegree));
  static std::mutex mtx;
  static std::vector<QuadratureRule> tri_cache(kMaxQuadratureDegree + 1);
  static std::vector<QuadratureRule> edge_cache(kMaxQuadratureDegree + 1);
  std::lock_guard<std::mutex> lock(mtx);
  auto& cache = entity == QuadEntity::Triangle ? tri_cache : edge_cache;
  QuadratureRule& slot = cache[exactness_degree];
  if (slot.points.empty()) {
    slot = entity == QuadEntity::Triangle ? make_triangle_rule(exactness_degree)
                                          : make_edge_rule(exactness_degree);
  }
  return slot;
}

} // namespace divflow
