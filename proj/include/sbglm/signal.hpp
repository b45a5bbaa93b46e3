#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sbglm/mesh.hpp"

namespace sbglm {

struct TaskEvent {
  double onset;     // seconds
  double duration;  // seconds
};

/// Stimulus timing for one run.
struct TaskParadigm {
  std::vector<std::string> task_names;
  std::vector<std::vector<TaskEvent>> events;  // one list per task
  double tr = 0.72;                            // repetition time, seconds
  int num_volumes = 0;

  int num_tasks() const { return static_cast<int>(task_names.size()); }
  /// Throws ConfigError unless K >= 1 and every event lies in [0, T*TR].
  void validate() const;
};

/// Paradigm file: optional header lines "tr <seconds>" and "tasks <name>...",
/// then one "task onset duration" line per event. Tasks not declared in a
/// header are appended in order of first appearance.
TaskParadigm read_paradigm(const std::filesystem::path& path, int num_volumes, double tr);
void write_paradigm(const std::filesystem::path& path, const TaskParadigm& paradigm);

/// Double-gamma HRF. Gamma densities use shape = delay / dispersion and
/// scale = dispersion.
struct HrfParams {
  double peak_delay = 6.0;
  double undershoot_delay = 16.0;
  double peak_dispersion = 1.0;
  double undershoot_dispersion = 1.0;
  double undershoot_ratio = 1.0 / 6.0;
  double length = 32.0;
};

/// HRF sampled every dt seconds on [0, length], scaled to unit peak.
Eigen::VectorXd canonical_hrf(double dt, const HrfParams& params = {});

struct TaskDesign {
  Eigen::MatrixXd tasks;        // T x K, max-normalized then centered
  Eigen::MatrixXd derivatives;  // T x K temporal derivatives (same scaling), centered
  Eigen::VectorXd offsets;      // per-column mean removed after max normalization
  std::vector<bool> empty_task; // tasks without events; their columns are zero
};

TaskDesign build_design(const TaskParadigm& paradigm, const HrfParams& hrf = {});

struct RunLabels {
  std::string subject;
  std::string visit;
  std::string run;
};

/// One run of vertex timeseries together with its design.
///
/// `bold` is T x N. After prewhitening every vertex carries its own design,
/// stored in `vertex_designs`; before that the shared `design` applies.
struct SessionData {
  Eigen::MatrixXd bold;
  Eigen::MatrixXd design;
  Eigen::MatrixXd nuisance;
  std::vector<Eigen::MatrixXd> vertex_designs;
  std::vector<bool> excluded;  // vertices dropped by conditioning
  RunLabels meta;
  bool percent_signal = false;
  bool whitened = false;

  int num_volumes() const { return static_cast<int>(bold.rows()); }
  int num_vertices() const { return static_cast<int>(bold.cols()); }
  int num_tasks() const { return static_cast<int>(design.cols()); }
  bool is_excluded(int v) const { return !excluded.empty() && excluded[v]; }
  const Eigen::MatrixXd& design_at(int v) const {
    return vertex_designs.empty() ? design : vertex_designs[v];
  }
};

/// Percent-signal-change scaling (skipped if already applied) followed by
/// least-squares removal of an intercept and the nuisance columns from both
/// the BOLD data and the design. Vertices with non-positive mean are
/// excluded and zeroed.
SessionData condition(const SessionData& session);

/// Per-vertex AR(p) noise model.
struct ArModel {
  int order = 0;
  Eigen::MatrixXd coefficients;          // N x p
  Eigen::VectorXd innovation_variance;   // N
  std::vector<bool> flagged;             // ridge-stabilized or order-reduced

  int num_vertices() const { return static_cast<int>(innovation_variance.size()); }
};

/// Biased (1/T) sample autocovariances at lags 0..max_lag after demeaning.
Eigen::VectorXd sample_autocovariance(const Eigen::Ref<const Eigen::VectorXd>& x, int max_lag);

struct LevinsonResult {
  Eigen::VectorXd coefficients;          // order-p predictor
  Eigen::VectorXd reflection;            // partial autocorrelations, 1..p
  Eigen::VectorXd prediction_variance;   // orders 0..p
  bool ridge = false;
};

/// Solves the Yule-Walker system for orders 1..p by Levinson-Durbin. A
/// singular or indefinite Toeplitz system is re-solved with a small ridge
/// on the diagonal and reported via `ridge`.
LevinsonResult levinson_durbin(const Eigen::VectorXd& autocov, int order);

ArModel fit_ar_yule_walker(const Eigen::MatrixXd& residuals, int order,
                           const std::vector<bool>& excluded = {});

/// AR order in [0, max_order] minimizing T ln(sigma^2) + 2p.
int select_ar_order(const Eigen::VectorXd& residuals, int max_order);

/// Averages AR models across runs, then smooths every coefficient map and
/// the innovation-variance map.
ArModel regularize_ar(std::span<const ArModel> runs, const SurfaceSmoother& smoother);
ArModel regularize_ar(std::span<const ArModel> runs, const SurfaceMesh& mesh, double fwhm);

/// Innovations-form whitening for a stationary AR(p) process: the action of
/// the inverse Cholesky factor of the T x T autocovariance, scaled so that
/// whitened innovations have unit variance.
class WhiteningFilter {
 public:
  WhiteningFilter(const Eigen::VectorXd& coefficients, double innovation_variance);

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd apply_columns(const Eigen::MatrixXd& x) const;

  int order() const { return static_cast<int>(predictors_.size()) - 1; }
  /// True if the requested model was not stationary and a lower order was used.
  bool reduced() const { return reduced_; }

 private:
  std::vector<Eigen::VectorXd> predictors_;  // predictors_[m]: order-m predictor
  std::vector<double> inv_sd_;               // 1 / sqrt(prediction variance at order m)
  bool reduced_ = false;
};

struct WhiteningReport {
  std::vector<bool> reduced;  // per vertex: non-stationary model was order-reduced
};

/// Whitens a conditioned session vertex by vertex; the result carries one
/// design per vertex.
SessionData prewhiten(const SessionData& session, const ArModel& ar,
                      WhiteningReport* report = nullptr);

}  // namespace sbglm
