#include "sbglm/sparse_cholesky.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "sbglm/error.hpp"

namespace sbglm {

namespace {

double smallest_pivot(const SparseMatrix& a) {
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt(a);
  if (ldlt.info() != Eigen::Success) return std::nan("");
  return ldlt.vectorD().minCoeff();
}

}  // namespace

SparseCholesky::SparseCholesky(const SparseMatrix& a) {
  if (a.rows() != a.cols()) throw NumericError("cholesky: matrix is not square");
  factor_.compute(a);
  if (factor_.info() != Eigen::Success) {
    throw NumericError("cholesky: matrix is not positive definite (minimum pivot " +
                       std::to_string(smallest_pivot(a)) + ")");
  }
  lower_ = factor_.matrixL();
  lower_.makeCompressed();
  perm_ = factor_.permutationP().indices();
  for (Eigen::Index j = 0; j < lower_.cols(); ++j) {
    const double d = lower_.coeff(j, j);
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NumericError("cholesky: non-positive pivot " + std::to_string(d * d) + " at column " +
                         std::to_string(j));
    }
  }
}

double SparseCholesky::log_determinant() const {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < lower_.cols(); ++j) acc += std::log(lower_.coeff(j, j));
  return 2.0 * acc;
}

Eigen::VectorXd SparseCholesky::solve(const Eigen::VectorXd& b) const { return factor_.solve(b); }

Eigen::MatrixXd SparseCholesky::solve(const Eigen::MatrixXd& b) const { return factor_.solve(b); }

Eigen::VectorXd SparseCholesky::correlate(const Eigen::VectorXd& z) const {
  const Eigen::VectorXd u = factor_.matrixU().solve(z);
  return factor_.permutationPinv() * u;
}

Eigen::MatrixXd SparseCholesky::correlate(const Eigen::MatrixXd& z) const {
  const Eigen::MatrixXd u = factor_.matrixU().solve(z);
  return factor_.permutationPinv() * u;
}

SelectedInverse SparseCholesky::selected_inverse() const {
  const SparseMatrix& L = lower_;
  const int n = static_cast<int>(L.cols());
  const int* outer = L.outerIndexPtr();
  const int* inner = L.innerIndexPtr();
  const double* lv = L.valuePtr();
  std::vector<double> sigma(static_cast<std::size_t>(L.nonZeros()), 0.0);

  // Sigma(r, c) for r >= c, both already computed
  auto lookup = [&](int r, int c) -> double {
    if (r < c) std::swap(r, c);
    const int* begin = inner + outer[c];
    const int* end = inner + outer[c + 1];
    const int* it = std::lower_bound(begin, end, r);
    if (it == end || *it != r) throw NumericError("selected inverse: pattern not closed under fill");
    return sigma[static_cast<std::size_t>(it - inner)];
  };

  for (int j = n - 1; j >= 0; --j) {
    const int start = outer[j];
    const int stop = outer[j + 1];
    if (inner[start] != j) throw NumericError("selected inverse: missing diagonal in factor");
    const double ljj = lv[start];
    for (int a = stop - 1; a > start; --a) {
      const int i = inner[a];
      double acc = 0.0;
      for (int b = start + 1; b < stop; ++b) acc += lv[b] * lookup(i, inner[b]);
      sigma[a] = -acc / ljj;
    }
    double acc = 0.0;
    for (int b = start + 1; b < stop; ++b) acc += lv[b] * sigma[b];
    sigma[start] = 1.0 / (ljj * ljj) - acc / ljj;
  }
  return SelectedInverse(L, std::move(sigma), perm_);
}

SelectedInverse::SelectedInverse(SparseMatrix lower_pattern, std::vector<double> values,
                                 Eigen::VectorXi perm)
    : pattern_(std::move(lower_pattern)), values_(std::move(values)), perm_(std::move(perm)) {}

const double* SelectedInverse::find(int pi, int pj) const {
  if (pi < pj) std::swap(pi, pj);
  const int* outer = pattern_.outerIndexPtr();
  const int* inner = pattern_.innerIndexPtr();
  const int* begin = inner + outer[pj];
  const int* end = inner + outer[pj + 1];
  const int* it = std::lower_bound(begin, end, pi);
  if (it == end || *it != pi) return nullptr;
  return values_.data() + (it - inner);
}

bool SelectedInverse::contains(int i, int j) const { return find(perm_[i], perm_[j]) != nullptr; }

double SelectedInverse::operator()(int i, int j) const {
  const double* p = find(perm_[i], perm_[j]);
  if (!p) throw std::out_of_range("selected inverse: entry outside computed pattern");
  return *p;
}

Eigen::VectorXd SelectedInverse::diagonal() const {
  Eigen::VectorXd d(size());
  for (int i = 0; i < size(); ++i) d[i] = (*this)(i, i);
  return d;
}

double log_determinant(const SparseMatrix& a) { return SparseCholesky(a).log_determinant(); }

}  // namespace sbglm
