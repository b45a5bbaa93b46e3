#include <doctest.h>

#include <random>

#include <Eigen/Dense>

#include "sbglm/error.hpp"
#include "sbglm/sparse_cholesky.hpp"

using namespace sbglm;

namespace {

// Banded SPD matrix with a few random long-range couplings.
SparseMatrix random_spd(int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j : {i + 1, i + 2, (i * 7 + 3) % n}) {
      if (j <= i || j >= n) continue;
      const double v = u(rng);
      a(i, j) += v;
      a(j, i) += v;
    }
  }
  for (int i = 0; i < n; ++i) a(i, i) = a.row(i).cwiseAbs().sum() + 0.5 + std::abs(u(rng));
  return a.sparseView();
}

}  // namespace

TEST_CASE("factorization agrees with dense linear algebra") {
  const SparseMatrix a = random_spd(40, 3);
  const Eigen::MatrixXd dense(a);
  const Eigen::MatrixXd inv = dense.inverse();
  const SparseCholesky chol(a);

  CHECK(chol.log_determinant() == doctest::Approx(std::log(dense.determinant())).epsilon(1e-12));
  CHECK(log_determinant(a) == doctest::Approx(chol.log_determinant()));

  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(40, -1.0, 2.0);
  CHECK((chol.solve(b) - inv * b).norm() < 1e-10);

  const auto sel = chol.selected_inverse();
  CHECK((sel.diagonal() - inv.diagonal()).cwiseAbs().maxCoeff() < 1e-12);
  int checked = 0;
  for (int i = 0; i < 40; ++i) {
    for (int j = 0; j < 40; ++j) {
      if (!sel.contains(i, j)) continue;
      CHECK(sel(i, j) == doctest::Approx(inv(i, j)).epsilon(1e-10));
      ++checked;
    }
  }
  // the pattern includes every nonzero of A
  for (int c = 0; c < a.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(a, c); it; ++it) CHECK(sel.contains(static_cast<int>(it.row()), c));
  CHECK(checked >= a.nonZeros());
}

TEST_CASE("correlate maps white noise to covariance A^{-1}") {
  const SparseMatrix a = random_spd(25, 11);
  const SparseCholesky chol(a);
  const Eigen::MatrixXd m = chol.correlate(Eigen::MatrixXd(Eigen::MatrixXd::Identity(25, 25)));
  const Eigen::MatrixXd inv = Eigen::MatrixXd(a).inverse();
  CHECK((m * m.transpose() - inv).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::VectorXd z = Eigen::VectorXd::Ones(25);
  CHECK((chol.correlate(z) - m * z).norm() < 1e-12);
}

TEST_CASE("selected inverse rejects entries outside the pattern") {
  const SparseMatrix a = random_spd(30, 5);
  const auto sel = SparseCholesky(a).selected_inverse();
  bool found = false;
  for (int i = 0; i < 30 && !found; ++i)
    for (int j = 0; j < 30 && !found; ++j)
      if (!sel.contains(i, j)) {
        CHECK_THROWS_AS(sel(i, j), std::out_of_range);
        found = true;
      }
  CHECK(found);
}

TEST_CASE("indefinite matrices raise a numeric error") {
  Eigen::MatrixXd d(2, 2);
  d << 1, 2, 2, 1;
  const SparseMatrix a = d.sparseView();
  CHECK_THROWS_AS(SparseCholesky{a}, NumericError);
}
