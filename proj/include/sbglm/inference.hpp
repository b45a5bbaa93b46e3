#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sbglm/mesh.hpp"
#include "sbglm/signal.hpp"
#include "sbglm/sparse_cholesky.hpp"
#include "sbglm/spde.hpp"

namespace sbglm {

// ---------------------------------------------------------------------------
// Classical vertex-wise GLM
// ---------------------------------------------------------------------------

struct ClassicalFit {
  Eigen::MatrixXd beta;       // N x K, percent signal change
  Eigen::MatrixXd se;         // N x K
  double dof = 0.0;
  Eigen::MatrixXd residuals;  // T x N; empty for fits built from other fits
  std::vector<bool> defined;  // false where the design was rank deficient

  int num_vertices() const { return static_cast<int>(beta.rows()); }
  int num_tasks() const { return static_cast<int>(beta.cols()); }
};

/// Per-vertex OLS with dof = T - K. Rank-deficient vertices get NaN
/// coefficients and defined = false.
ClassicalFit fit_classical(const SessionData& session);

struct MultiRunClassical {
  std::vector<ClassicalFit> runs;
  ClassicalFit average;  // arithmetic mean; se combined assuming independent runs
};

MultiRunClassical fit_classical_multi(std::span<const SessionData> sessions);

/// Vertex-wise one-sample summary across subjects: mean, se = sd / sqrt(M)
/// with the M - 1 sample sd, dof = M - 1. Vertices with zero spread are
/// marked undefined.
ClassicalFit group_classical(std::span<const ClassicalFit> fits);

// ---------------------------------------------------------------------------
// Bayesian model
// ---------------------------------------------------------------------------

/// Whitened per-vertex sufficient statistics of one run: X_v'X_v, X_v'y_v
/// and y_v'y_v. This is all the Bayesian model needs from the data.
struct RunStatistics {
  int num_volumes = 0;
  int num_tasks = 0;
  std::vector<Eigen::MatrixXd> xtx;  // N of K x K
  Eigen::MatrixXd xty;               // N x K
  Eigen::VectorXd yty;               // N
  std::vector<bool> excluded;

  int num_vertices() const { return static_cast<int>(yty.size()); }
  int num_observed() const;
};

RunStatistics run_statistics(const SessionData& session);
void write_run_statistics(const std::filesystem::path& path, const RunStatistics& stats);
RunStatistics read_run_statistics(const std::filesystem::path& path);

struct Hyperparams {
  std::vector<SpdeHyper> tasks;
  double noise_variance = 1.0;

  int num_tasks() const { return static_cast<int>(tasks.size()); }
  /// (log kappa_1, log tau_1, ..., log kappa_K, log tau_K, log sigma^2)
  Eigen::VectorXd to_log() const;
  static Hyperparams from_log(const Eigen::VectorXd& theta);
  void validate() const;
};

/// log p(y | theta) for the linear-Gaussian model with independent
/// run-specific fields sharing the per-task SPDE priors.
double log_marginal_likelihood(std::span<const RunStatistics> runs, const SpdeOperator& spde,
                               const Hyperparams& theta);

double mesh_diameter(const SurfaceMesh& mesh);

/// Starting point: range diameter / 5, tau matching the prior variance to
/// the spread of classical estimates, sigma^2 from classical residuals.
Hyperparams initial_hyperparams(std::span<const RunStatistics> runs, double diameter);

struct OptimizerOptions {
  int max_evaluations = 500;  // per start
  int starts = 3;             // first start is unjittered
  double tolerance = 1e-6;
  double jitter = 0.5;        // sd of the log-space jitter for extra starts
  double initial_step = 0.5;  // simplex edge in log space
  std::uint64_t seed = 0;
  std::optional<Hyperparams> initial;
};

struct OptimizerTrace {
  int start = 0;
  Eigen::VectorXd initial_log;
  Eigen::VectorXd final_log;
  double log_marginal = 0.0;
  int evaluations = 0;
  bool converged = false;
};

struct OptimizationResult {
  Hyperparams hyper;
  double log_marginal = 0.0;
  bool converged = false;
  int evaluations = 0;
  std::vector<OptimizerTrace> trace;
};

/// Empirical Bayes: Nelder-Mead over log hyperparameters maximizing the
/// marginal likelihood, best of several starts.
OptimizationResult optimize_hyperparams(std::span<const RunStatistics> runs,
                                        const SpdeOperator& spde, double diameter,
                                        const OptimizerOptions& options = {});

/// Exact Gaussian posterior of one run's K latent fields (task-major:
/// index k * N + v).
struct RunPosterior {
  int num_vertices = 0;
  int num_tasks = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::MatrixXd vertex_covariance;  // N x (K*K), row-major K x K block per vertex
  std::shared_ptr<const SparseCholesky> factor;

  double cov_at(int v, int k1, int k2) const {
    return vertex_covariance(v, k1 * num_tasks + k2);
  }
};

class FieldPosterior;

/// Posterior over all runs and tasks of one subject.
class PosteriorField {
 public:
  PosteriorField() = default;
  PosteriorField(std::vector<std::shared_ptr<const RunPosterior>> runs, Hyperparams hyper);

  int num_runs() const { return static_cast<int>(runs_.size()); }
  int num_tasks() const { return hyper_.num_tasks(); }
  int num_vertices() const { return runs_.empty() ? 0 : runs_.front()->num_vertices; }
  const Hyperparams& hyper() const { return hyper_; }
  const RunPosterior& run(int j) const { return *runs_.at(j); }
  std::shared_ptr<const RunPosterior> run_ptr(int j) const { return runs_.at(j); }

  /// N x K posterior means of run j, or of the cross-run average if j < 0.
  Eigen::MatrixXd mean(int run = -1) const;
  /// N x K marginal sds, same convention.
  Eigen::MatrixXd sd(int run = -1) const;

  /// Linear combination sum_{j,k} weights(j, k) beta_{j,k} (weights J x K).
  FieldPosterior combine(const Eigen::MatrixXd& weights) const;
  FieldPosterior task(int run, int k) const;
  FieldPosterior run_average(int k) const;

  /// Dense (KN x KN) covariance of one run; for small problems and tests.
  Eigen::MatrixXd dense_covariance(int run) const;

 private:
  std::vector<std::shared_ptr<const RunPosterior>> runs_;
  Hyperparams hyper_;
};

PosteriorField posterior(std::span<const RunStatistics> runs, const SpdeOperator& spde,
                         const Hyperparams& theta);

/// Gaussian distribution of an N-vector that is a weighted sum of task
/// fields from independent run posteriors.
class FieldPosterior {
 public:
  struct Term {
    std::shared_ptr<const RunPosterior> run;
    Eigen::VectorXd task_weights;  // K
  };

  FieldPosterior() = default;
  explicit FieldPosterior(std::vector<Term> terms);

  int num_vertices() const { return static_cast<int>(mean_.size()); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& sd() const { return sd_; }
  const std::vector<Term>& terms() const { return terms_; }

  /// Draws [first, first + count) of the sample sequence for `seed` as a
  /// count x N matrix. Blocks of the sequence are generated from
  /// independent streams, so any partition into calls gives the same draws.
  Eigen::MatrixXd sample(int first, int count, std::uint64_t seed) const;
  static constexpr int kBlock = 1024;

  Eigen::MatrixXd dense_covariance() const;

 private:
  std::vector<Term> terms_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd sd_;
};

struct GroupContrast {
  Eigen::VectorXd weights;  // length M * J * K, index (m * J + j) * K + k
  std::string label;

  void validate(int subjects, int runs, int tasks) const;
};

/// Equal-weight average of one task over all subjects and runs.
GroupContrast average_task_contrast(int subjects, int runs, int tasks, int task);

FieldPosterior group_posterior(std::span<const PosteriorField> subjects,
                               const GroupContrast& contrast);

}  // namespace sbglm
