#pragma once

#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace sbglm {

using SparseMatrix = Eigen::SparseMatrix<double>;

class SelectedInverse;

/// Fill-reducing sparse Cholesky factorization P A P^T = L L^T of a
/// symmetric positive definite matrix. Throws NumericError (with the
/// smallest LDL^T pivot) if A is not numerically positive definite.
class SparseCholesky {
 public:
  explicit SparseCholesky(const SparseMatrix& a);

  int size() const { return static_cast<int>(factor_.rows()); }
  double log_determinant() const;

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;

  /// Maps standard normal z to a draw with covariance A^{-1}.
  Eigen::VectorXd correlate(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd correlate(const Eigen::MatrixXd& z) const;

  /// Entries of A^{-1} on the sparsity pattern of L (Takahashi recursion).
  SelectedInverse selected_inverse() const;

  const SparseMatrix& lower() const { return lower_; }
  /// perm()[i] is the row of L corresponding to original index i.
  const Eigen::VectorXi& perm() const { return perm_; }

 private:
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> factor_;
  SparseMatrix lower_;
  Eigen::VectorXi perm_;
};

/// Entries of an inverse restricted to the (symmetrized) pattern of a
/// Cholesky factor. Always contains the diagonal and every entry that is
/// structurally nonzero in the factored matrix.
class SelectedInverse {
 public:
  SelectedInverse(SparseMatrix lower_pattern, std::vector<double> values, Eigen::VectorXi perm);

  int size() const { return static_cast<int>(perm_.size()); }
  bool contains(int i, int j) const;
  /// Throws std::out_of_range if (i, j) is outside the computed pattern.
  double operator()(int i, int j) const;
  Eigen::VectorXd diagonal() const;

 private:
  const double* find(int pi, int pj) const;

  SparseMatrix pattern_;  // permuted lower-triangular pattern
  std::vector<double> values_;
  Eigen::VectorXi perm_;
};

/// log det of an SPD matrix via sparse Cholesky.
double log_determinant(const SparseMatrix& a);

}  // namespace sbglm
