#include "divflow/sparse.hpp"

#include <Eigen/SparseLU>

#include <cmath>

namespace divflow {

CompressedMatrix CompressedMatrix::from_triplets(const Triplets& t) {
  Eigen::SparseMatrix<double, Eigen::RowMajor> A(t.rows(), t.cols());
  A.setFromTriplets(t.entries().begin(), t.entries().end());
  A.makeCompressed();
  CompressedMatrix out;
  out.rows = t.rows();
  out.cols = t.cols();
  out.row_ptr.assign(A.outerIndexPtr(), A.outerIndexPtr() + A.rows() + 1);
  out.col.assign(A.innerIndexPtr(), A.innerIndexPtr() + A.nonZeros());
  out.val.assign(A.valuePtr(), A.valuePtr() + A.nonZeros());
  return out;
}

Eigen::SparseMatrix<double> CompressedMatrix::to_eigen() const {
  Eigen::SparseMatrix<double> A(rows, cols);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(nnz());
  for (int i = 0; i < rows; ++i)
    for (int p = row_ptr[i]; p < row_ptr[i + 1]; ++p)
      trips.emplace_back(i, col[p], val[p]);
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();
  return A;
}

double CompressedMatrix::inf_norm() const {
  double best = 0.0;
  for (int i = 0; i < rows; ++i) {
    double s = 0.0;
    for (int p = row_ptr[i]; p < row_ptr[i + 1]; ++p) s += std::abs(val[p]);
    best = std::max(best, s);
  }
  return best;
}

Vector matvec(const CompressedMatrix& A, const Vector& x) {
  require(x.size() == A.cols, "matvec: dimension mismatch");
  Vector y = Vector::Zero(A.rows);
  for (int i = 0; i < A.rows; ++i) {
    double s = 0.0;
    for (int p = A.row_ptr[i]; p < A.row_ptr[i + 1]; ++p) s += A.val[p] * x[A.col[p]];
    y[i] = s;
  }
  return y;
}

struct SparseLuSolver::Impl {
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  bool analyzed = false;
  int n = 0;
};

SparseLuSolver::SparseLuSolver() : impl_(std::make_unique<Impl>()) {}
SparseLuSolver::~SparseLuSolver() = default;

void SparseLuSolver::factorize(const CompressedMatrix& A) {
  require(A.rows == A.cols, "lu: matrix must be square");
  Eigen::SparseMatrix<double> M = A.to_eigen();
  // re-analyze every time: the pattern may change between calls (e.g. upwind
  // terms switching sides)
  impl_->lu.analyzePattern(M);
  impl_->analyzed = true;
  impl_->n = A.rows;
  impl_->lu.factorize(M);
  if (impl_->lu.info() != Eigen::Success) {
    // Eigen reports the breakdown column in its message; surface it as the
    // pivot position.
    const std::string msg = impl_->lu.lastErrorMessage();
    int pivot = -1;
    if (const auto pos = msg.find_last_of(' '); pos != std::string::npos)
      pivot = std::atoi(msg.c_str() + pos + 1);
    throw SingularMatrixError("lu_solve: singular matrix (" + msg + ")", pivot);
  }
}

Vector SparseLuSolver::solve(const Vector& b) const {
  require(impl_->analyzed, "lu: factorize before solve");
  require(b.size() == impl_->n, "lu: rhs size mismatch");
  return impl_->lu.solve(b);
}

Vector lu_solve(const CompressedMatrix& A, const Vector& b) {
  require(b.size() == A.rows, "lu_solve: rhs size mismatch");
  SparseLuSolver s;
  s.factorize(A);
  return s.solve(b);
}

} // namespace divflow
