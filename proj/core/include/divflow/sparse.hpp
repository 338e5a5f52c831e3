#pragma once

#include "divflow/types.hpp"

#include <Eigen/SparseCore>
#include <memory>
#include <vector>

namespace divflow {

/// Triplet accumulator; duplicate entries sum on compression.
class Triplets {
public:
  Triplets(int rows, int cols) : rows_(rows), cols_(cols) {}

  void add(int i, int j, double v) {
    if (v != 0.0) entries_.emplace_back(i, j, v);
  }
  void reserve(std::size_t n) { entries_.reserve(n); }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const std::vector<Eigen::Triplet<double>>& entries() const { return entries_; }
  void append(const Triplets& other) {
    entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
  }

private:
  int rows_, cols_;
  std::vector<Eigen::Triplet<double>> entries_;
};

/// Compressed sparse row matrix with sorted, deduplicated columns per row.
struct CompressedMatrix {
  int rows = 0, cols = 0;
  std::vector<int> row_ptr;
  std::vector<int> col;
  std::vector<double> val;

  std::size_t nnz() const { return col.size(); }
  static CompressedMatrix from_triplets(const Triplets& t);
  Eigen::SparseMatrix<double> to_eigen() const;
  double inf_norm() const;
};

Vector matvec(const CompressedMatrix& A, const Vector& x);

class SingularMatrixError : public Error {
public:
  SingularMatrixError(const std::string& what, int pivot) : Error(what), pivot_position(pivot) {}
  int pivot_position;
};

/// Direct sparse LU (fill-reducing ordering). Throws SingularMatrixError with
/// the offending pivot position on breakdown.
Vector lu_solve(const CompressedMatrix& A, const Vector& b);

/// Reusable factorization: the symbolic analysis is computed once per sparsity
/// pattern, numeric factorization per call.
class SparseLuSolver {
public:
  SparseLuSolver();
  ~SparseLuSolver();
  void factorize(const CompressedMatrix& A);
  Vector solve(const Vector& b) const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace divflow
