#include "sbglm/spde.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "sbglm/error.hpp"
#include "sbglm/io.hpp"
#include "sbglm/parallel.hpp"
#include "sbglm/rng.hpp"
#include "sbglm/sparse_cholesky.hpp"

namespace sbglm {

SpdeHyper SpdeHyper::from_log(double log_kappa, double log_tau) {
  return {std::exp(log_kappa), std::exp(log_tau)};
}

void SpdeHyper::validate() const {
  if (!(kappa > 0.0) || !(tau > 0.0) || !std::isfinite(kappa) || !std::isfinite(tau)) {
    throw ConfigError("SPDE hyperparameters must be finite and positive (kappa=" +
                      std::to_string(kappa) + ", tau=" + std::to_string(tau) + ")");
  }
}

SpdeOperator::SpdeOperator(FemMatrices fem) : fem_(std::move(fem)) {
  c_ = fem_.mass_matrix();
  g_ = fem_.stiffness;
  const Eigen::VectorXd c_inv = fem_.mass.cwiseInverse();
  gcg_ = SparseMatrix(g_ * c_inv.asDiagonal() * g_);
  // exact symmetry: G C^{-1} G is symmetric in exact arithmetic only
  gcg_ = SparseMatrix(0.5 * (gcg_ + SparseMatrix(gcg_.transpose())));
  gcg_.makeCompressed();
}

SparseMatrix SpdeOperator::precision(const SpdeHyper& h) const {
  h.validate();
  const double k2 = h.kappa * h.kappa;
  const double t2 = h.tau * h.tau;
  SparseMatrix q = (t2 * k2 * k2) * c_ + (t2 * 2.0 * k2) * g_ + t2 * gcg_;
  q.makeCompressed();
  return q;
}

bool SpdeOperator::near_singular(const SpdeHyper& h) const {
  const double k4 = std::pow(h.kappa, 4);
  double gcg_scale = 0.0;
  for (int k = 0; k < gcg_.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(gcg_, k); it; ++it)
      gcg_scale = std::max(gcg_scale, std::abs(it.value()));
  return k4 * fem_.mass.minCoeff() < 1e-10 * gcg_scale;
}

SparseMatrix build_precision(const FemMatrices& fem, const SpdeHyper& h) {
  return SpdeOperator(fem).precision(h);
}

Eigen::MatrixXd sample_gmrf(const SparseMatrix& q, int n_samples, std::uint64_t seed, int jobs) {
  if (n_samples < 0) throw ConfigError("sample_gmrf: negative sample count");
  const SparseCholesky chol(q);
  const int n = chol.size();
  constexpr int kBlock = 1024;
  const int blocks = (n_samples + kBlock - 1) / kBlock;
  Eigen::MatrixXd out(n_samples, n);
  parallel_for(static_cast<std::size_t>(blocks), jobs, [&](std::size_t b) {
    Rng rng = make_rng(seed, b);
    std::normal_distribution<double> normal;
    const int first = static_cast<int>(b) * kBlock;
    const int count = std::min(kBlock, n_samples - first);
    Eigen::MatrixXd z(n, count);
    for (int s = 0; s < count; ++s)
      for (int i = 0; i < n; ++i) z(i, s) = normal(rng);
    out.middleRows(first, count) = chol.correlate(z).transpose();
  });
  return out;
}

double matern_cov(double distance, double sigma2, double kappa) {
  if (!(distance >= 0.0)) throw ConfigError("matern_cov: distance must be non-negative");
  const double x = kappa * distance;
  if (x == 0.0) return sigma2;
  // x K_1(x) underflows harmlessly to 0 for large x
  if (x > 700.0) return 0.0;
  return sigma2 * x * std::cyl_bessel_k(1.0, x);
}

double spde_marginal_variance(const SpdeHyper& h) {
  return 1.0 / (4.0 * std::numbers::pi * h.kappa * h.kappa * h.tau * h.tau);
}

void write_coordinate(const std::filesystem::path& path, const SparseMatrix& m) {
  std::string out;
  for (int k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      out += std::to_string(it.row()) + " " + std::to_string(it.col()) + " " +
             io::format_double(it.value()) + "\n";
    }
  }
  io::write_text(path, out);
}

}  // namespace sbglm
