#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Core>

#include "sbglm/mesh.hpp"

namespace sbglm {

/// Matérn SPDE hyperparameters: kappa is the inverse spatial scale (1/mm),
/// tau scales the precision.
struct SpdeHyper {
  double kappa = 1.0;
  double tau = 1.0;

  static SpdeHyper from_log(double log_kappa, double log_tau);
  void validate() const;
};

/// Precision builder for one latent field:
/// Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^{-1} G), C lumped.
class SpdeOperator {
 public:
  explicit SpdeOperator(FemMatrices fem);

  const FemMatrices& fem() const { return fem_; }
  int size() const { return fem_.size(); }

  SparseMatrix precision(const SpdeHyper& h) const;
  /// True when kappa is small enough that Q is numerically close to the
  /// singular G C^{-1} G.
  bool near_singular(const SpdeHyper& h) const;

 private:
  FemMatrices fem_;
  SparseMatrix c_;
  SparseMatrix g_;
  SparseMatrix gcg_;
};

SparseMatrix build_precision(const FemMatrices& fem, const SpdeHyper& h);

/// n_samples x N draws from Normal(0, Q^{-1}). Samples are generated in
/// fixed-size blocks, each from its own stream derived from `seed`, so the
/// output does not depend on `jobs`.
Eigen::MatrixXd sample_gmrf(const SparseMatrix& q, int n_samples, std::uint64_t seed, int jobs = 1);

/// Matérn covariance with smoothness 1: sigma2 (kappa d) K_1(kappa d).
double matern_cov(double distance, double sigma2, double kappa);

/// Approximate marginal variance of the continuous-domain field in 2D,
/// 1 / (4 pi kappa^2 tau^2).
double spde_marginal_variance(const SpdeHyper& h);

/// Coordinate-format dump: "row col value" per nonzero (0-based).
void write_coordinate(const std::filesystem::path& path, const SparseMatrix& m);

}  // namespace sbglm
