#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "sbglm/error.hpp"
#include "sbglm/simulate.hpp"
#include "sbglm/sparse_cholesky.hpp"
#include "sbglm/spde.hpp"

using namespace sbglm;

namespace {

// K_1(x) = int_0^inf exp(-x cosh t) cosh t dt, by the trapezoid rule.
double bessel_k1_quadrature(double x) {
  const double h = 1e-3;
  double sum = 0.5 * std::exp(-x);
  for (int i = 1; i < 20000; ++i) {
    const double t = i * h;
    sum += std::exp(-x * std::cosh(t)) * std::cosh(t);
  }
  return sum * h;
}

SpdeOperator grid_operator(int rows, int cols, double spacing) {
  MeshSpec spec;
  spec.rows = rows;
  spec.cols = cols;
  spec.spacing = spacing;
  return SpdeOperator(assemble_fem(make_mesh(spec)));
}

}  // namespace

TEST_CASE("precision is exactly symmetric and scales with tau squared") {
  const SpdeOperator spde = grid_operator(6, 7, 1.5);
  const SpdeHyper h{0.7, 1.0};
  const SparseMatrix q = spde.precision(h);
  const SparseMatrix qt = q.transpose();
  CHECK((q - qt).norm() == 0.0);
  const SparseMatrix q2 = spde.precision({0.7, 2.0});
  CHECK((q2 - 4.0 * q).norm() == 0.0);
  const SparseMatrix q3 = spde.precision({0.7, 3.0});
  CHECK((q3 - 9.0 * q).norm() <= 1e-14 * q.norm());
  CHECK_NOTHROW(SparseCholesky{q});
}

TEST_CASE("precision equals the finite-element formula") {
  const SpdeOperator spde = grid_operator(4, 5, 1.0);
  const auto& fem = spde.fem();
  const Eigen::MatrixXd c = fem.mass.asDiagonal();
  const Eigen::MatrixXd g(fem.stiffness);
  const double kappa = 0.9, tau = 1.3;
  const Eigen::MatrixXd expected =
      tau * tau * (std::pow(kappa, 4) * c + 2 * kappa * kappa * g + g * c.inverse() * g);
  const Eigen::MatrixXd q(spde.precision({kappa, tau}));
  CHECK((q - expected).cwiseAbs().maxCoeff() < 1e-12 * expected.cwiseAbs().maxCoeff());
}

TEST_CASE("invalid hyperparameters") {
  CHECK_THROWS_AS(SpdeHyper({-1.0, 1.0}).validate(), ConfigError);
  CHECK_THROWS_AS(SpdeHyper({1.0, 0.0}).validate(), ConfigError);
  CHECK_THROWS_AS(SpdeHyper({std::nan(""), 1.0}).validate(), ConfigError);
}

TEST_CASE("near-singular detection for tiny kappa") {
  const SpdeOperator spde = grid_operator(5, 5, 1.0);
  CHECK(spde.near_singular({1e-6, 1.0}));
  CHECK_FALSE(spde.near_singular({0.5, 1.0}));
}

TEST_CASE("Matern covariance") {
  CHECK(matern_cov(0.0, 2.5, 0.3) == 2.5);
  CHECK(bessel_k1_quadrature(1.0) == doctest::Approx(0.6019).epsilon(1e-4));
  for (double d : {0.5, 1.0, 3.0, 8.0}) {
    const double kappa = 0.4;
    const double expected = 1.7 * kappa * d * bessel_k1_quadrature(kappa * d);
    CHECK(matern_cov(d, 1.7, kappa) == doctest::Approx(expected).epsilon(1e-8));
  }
  // correlation near 0.14 at the practical range sqrt(8)/kappa
  const double kappa = 0.5;
  const double at_range = matern_cov(std::sqrt(8.0) / kappa, 1.0, kappa);
  CHECK(at_range > 0.12);
  CHECK(at_range < 0.16);
  CHECK(matern_cov(1e6, 1.0, 1.0) == 0.0);
}

TEST_CASE("interior marginal variance approaches the continuum value") {
  const SpdeOperator spde = grid_operator(41, 41, 0.5);
  const SpdeHyper h{0.6, 1.0};
  const SparseCholesky chol(spde.precision(h));
  const auto sel = chol.selected_inverse();
  const int centre = 20 * 41 + 20;
  CHECK(sel(centre, centre) == doctest::Approx(spde_marginal_variance(h)).epsilon(0.1));
  CHECK(spde_marginal_variance({1.0, 1.0}) == doctest::Approx(1.0 / (4.0 * M_PI)));
}

TEST_CASE("GMRF sampling is reproducible and independent of jobs") {
  const SpdeOperator spde = grid_operator(5, 6, 1.0);
  const SparseMatrix q = spde.precision({0.8, 1.0});
  const Eigen::MatrixXd a = sample_gmrf(q, 3000, 42, 1);
  const Eigen::MatrixXd b = sample_gmrf(q, 3000, 42, 3);
  CHECK(a.rows() == 3000);
  CHECK(a.cols() == 30);
  CHECK(a == b);
  CHECK(sample_gmrf(q, 10, 43, 1) != a.topRows(10));
  CHECK(sample_gmrf(q, 10, 42, 1) == a.topRows(10));
}
