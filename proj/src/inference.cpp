#include "sbglm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "sbglm/error.hpp"
#include "sbglm/io.hpp"
#include "sbglm/rng.hpp"

namespace sbglm {

// ---------------------------------------------------------------------------
// Classical GLM
// ---------------------------------------------------------------------------

ClassicalFit fit_classical(const SessionData& session) {
  const int T = session.num_volumes();
  const int N = session.num_vertices();
  const int K = session.num_tasks();
  if (K < 1) throw ConfigError("fit_classical: design has no columns");
  if (T <= K) throw ConfigError("fit_classical: need more volumes than tasks");
  ClassicalFit fit;
  fit.beta = Eigen::MatrixXd::Constant(N, K, std::nan(""));
  fit.se = Eigen::MatrixXd::Constant(N, K, std::nan(""));
  fit.dof = T - K;
  fit.residuals = Eigen::MatrixXd::Zero(T, N);
  fit.defined.assign(N, false);

  // with a shared design one decomposition serves every vertex
  std::optional<Eigen::ColPivHouseholderQR<Eigen::MatrixXd>> shared;
  if (session.vertex_designs.empty()) shared.emplace(session.design);

  for (int v = 0; v < N; ++v) {
    if (session.is_excluded(v)) continue;
    const Eigen::MatrixXd& x = session.design_at(v);
    if (x.rows() != T || x.cols() != K) throw ConfigError("fit_classical: design shape mismatch");
    std::optional<Eigen::ColPivHouseholderQR<Eigen::MatrixXd>> local;
    if (!shared) local.emplace(x);
    const auto& qr = shared ? *shared : *local;
    if (qr.rank() < K) continue;
    const Eigen::VectorXd y = session.bold.col(v);
    const Eigen::VectorXd b = qr.solve(y);
    const Eigen::VectorXd r = y - x * b;
    const double s2 = r.squaredNorm() / fit.dof;
    const Eigen::MatrixXd xtx_inv = (x.transpose() * x).ldlt().solve(Eigen::MatrixXd::Identity(K, K));
    fit.beta.row(v) = b.transpose();
    fit.se.row(v) = (s2 * xtx_inv.diagonal().array()).sqrt().transpose();
    fit.residuals.col(v) = r;
    fit.defined[v] = true;
  }
  return fit;
}

MultiRunClassical fit_classical_multi(std::span<const SessionData> sessions) {
  if (sessions.empty()) throw ConfigError("fit_classical_multi: no runs");
  MultiRunClassical out;
  for (const auto& s : sessions) out.runs.push_back(fit_classical(s));
  const int N = out.runs.front().num_vertices();
  const int K = out.runs.front().num_tasks();
  for (const auto& r : out.runs) {
    if (r.num_vertices() != N || r.num_tasks() != K) {
      throw ConfigError("fit_classical_multi: runs differ in vertex or task count");
    }
  }
  const double J = static_cast<double>(out.runs.size());
  ClassicalFit& avg = out.average;
  avg.beta = Eigen::MatrixXd::Zero(N, K);
  avg.se = Eigen::MatrixXd::Zero(N, K);
  avg.dof = 0.0;
  avg.defined.assign(N, true);
  for (const auto& r : out.runs) {
    avg.beta += r.beta;
    avg.se += r.se.array().square().matrix();
    avg.dof += r.dof;
    for (int v = 0; v < N; ++v) avg.defined[v] = avg.defined[v] && r.defined[v];
  }
  avg.beta /= J;
  avg.se = avg.se.array().sqrt() / J;
  return out;
}

ClassicalFit group_classical(std::span<const ClassicalFit> fits) {
  const int M = static_cast<int>(fits.size());
  if (M < 2) throw ConfigError("group_classical: need at least two subjects");
  const int N = fits.front().num_vertices();
  const int K = fits.front().num_tasks();
  for (const auto& f : fits) {
    if (f.num_vertices() != N || f.num_tasks() != K) {
      throw ConfigError("group_classical: subjects differ in vertex or task count");
    }
  }
  ClassicalFit g;
  g.beta = Eigen::MatrixXd::Zero(N, K);
  g.se = Eigen::MatrixXd::Zero(N, K);
  g.dof = M - 1;
  g.defined.assign(N, true);
  for (const auto& f : fits) {
    g.beta += f.beta;
    for (int v = 0; v < N; ++v) g.defined[v] = g.defined[v] && f.defined[v];
  }
  g.beta /= M;
  for (const auto& f : fits) g.se += (f.beta - g.beta).array().square().matrix();
  g.se = (g.se / (M - 1.0)).array().sqrt() / std::sqrt(static_cast<double>(M));
  for (int v = 0; v < N; ++v) {
    if (!(g.se.row(v).array() > 0.0).all()) g.defined[v] = false;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Sufficient statistics
// ---------------------------------------------------------------------------

int RunStatistics::num_observed() const {
  int n = 0;
  for (int v = 0; v < num_vertices(); ++v)
    if (excluded.empty() || !excluded[v]) ++n;
  return n;
}

RunStatistics run_statistics(const SessionData& session) {
  const int N = session.num_vertices();
  const int K = session.num_tasks();
  RunStatistics s;
  s.num_volumes = session.num_volumes();
  s.num_tasks = K;
  s.xtx.assign(N, Eigen::MatrixXd::Zero(K, K));
  s.xty = Eigen::MatrixXd::Zero(N, K);
  s.yty = Eigen::VectorXd::Zero(N);
  s.excluded.assign(N, false);
  for (int v = 0; v < N; ++v) {
    if (session.is_excluded(v)) {
      s.excluded[v] = true;
      continue;
    }
    const Eigen::MatrixXd& x = session.design_at(v);
    const auto y = session.bold.col(v);
    s.xtx[v] = x.transpose() * x;
    s.xty.row(v) = (x.transpose() * y).transpose();
    s.yty[v] = y.squaredNorm();
  }
  return s;
}

void write_run_statistics(const std::filesystem::path& path, const RunStatistics& stats) {
  const int K = stats.num_tasks;
  std::string out = "# T " + std::to_string(stats.num_volumes) + " K " + std::to_string(K) +
                    "\n# excluded xtx(" + std::to_string(K * K) + ") xty(" + std::to_string(K) +
                    ") yty\n";
  for (int v = 0; v < stats.num_vertices(); ++v) {
    out += stats.excluded[v] ? "1" : "0";
    for (int a = 0; a < K; ++a)
      for (int b = 0; b < K; ++b) out += "\t" + io::format_double(stats.xtx[v](a, b));
    for (int a = 0; a < K; ++a) out += "\t" + io::format_double(stats.xty(v, a));
    out += "\t" + io::format_double(stats.yty[v]) + "\n";
  }
  io::write_text(path, out);
}

RunStatistics read_run_statistics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open statistics file: " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream header(line);
  std::string hash, t_tag, k_tag;
  RunStatistics s;
  if (!(header >> hash >> t_tag >> s.num_volumes >> k_tag >> s.num_tasks) || t_tag != "T" ||
      k_tag != "K" || s.num_tasks < 1) {
    throw ConfigError(path.string() + ": bad statistics header");
  }
  const int K = s.num_tasks;
  const Eigen::MatrixXd m = io::read_matrix(path);
  if (m.cols() != 1 + K * K + K + 1) throw ConfigError(path.string() + ": wrong column count");
  const int N = static_cast<int>(m.rows());
  s.xtx.assign(N, Eigen::MatrixXd(K, K));
  s.xty.resize(N, K);
  s.yty.resize(N);
  s.excluded.assign(N, false);
  for (int v = 0; v < N; ++v) {
    s.excluded[v] = m(v, 0) != 0.0;
    for (int a = 0; a < K; ++a)
      for (int b = 0; b < K; ++b) s.xtx[v](a, b) = m(v, 1 + a * K + b);
    for (int a = 0; a < K; ++a) s.xty(v, a) = m(v, 1 + K * K + a);
    s.yty[v] = m(v, 1 + K * K + K);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Hyperparameters
// ---------------------------------------------------------------------------

Eigen::VectorXd Hyperparams::to_log() const {
  const int K = num_tasks();
  Eigen::VectorXd theta(2 * K + 1);
  for (int k = 0; k < K; ++k) {
    theta[2 * k] = std::log(tasks[k].kappa);
    theta[2 * k + 1] = std::log(tasks[k].tau);
  }
  theta[2 * K] = std::log(noise_variance);
  return theta;
}

Hyperparams Hyperparams::from_log(const Eigen::VectorXd& theta) {
  if (theta.size() < 3 || theta.size() % 2 == 0) throw ConfigError("hyperparameter vector has wrong length");
  const int K = static_cast<int>(theta.size() - 1) / 2;
  Hyperparams h;
  for (int k = 0; k < K; ++k) h.tasks.push_back(SpdeHyper::from_log(theta[2 * k], theta[2 * k + 1]));
  h.noise_variance = std::exp(theta[2 * K]);
  return h;
}

void Hyperparams::validate() const {
  if (tasks.empty()) throw ConfigError("hyperparameters: no tasks");
  for (const auto& t : tasks) t.validate();
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance)) {
    throw ConfigError("hyperparameters: noise variance must be positive");
  }
}

namespace {

void check_runs(std::span<const RunStatistics> runs, const SpdeOperator& spde, int K) {
  if (runs.empty()) throw ConfigError("no runs supplied");
  for (const auto& r : runs) {
    if (r.num_vertices() != spde.size()) throw ConfigError("run vertex count does not match mesh");
    if (r.num_tasks != K) throw ConfigError("run task count does not match hyperparameters");
  }
}

// Joint precision of one run's K fields: blockdiag(Q_k) + X'X / sigma^2.
SparseMatrix run_precision(const std::vector<SparseMatrix>& qs, const RunStatistics& stats,
                           double noise_variance) {
  const int K = stats.num_tasks;
  const int N = stats.num_vertices();
  std::vector<Eigen::Triplet<double>> triplets;
  std::size_t nnz = 0;
  for (const auto& q : qs) nnz += static_cast<std::size_t>(q.nonZeros());
  triplets.reserve(nnz + static_cast<std::size_t>(N * K * K));
  for (int k = 0; k < K; ++k) {
    const SparseMatrix& q = qs[k];
    for (int c = 0; c < q.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(q, c); it; ++it)
        triplets.emplace_back(k * N + it.row(), k * N + it.col(), it.value());
  }
  // full K x K block at every vertex, explicit zeros included, so the
  // selected inverse always covers within-vertex cross-task entries
  for (int v = 0; v < N; ++v)
    for (int a = 0; a < K; ++a)
      for (int b = 0; b < K; ++b)
        triplets.emplace_back(a * N + v, b * N + v, stats.xtx[v](a, b) / noise_variance);
  SparseMatrix p(K * N, K * N);
  p.setFromTriplets(triplets.begin(), triplets.end());
  p.makeCompressed();
  return p;
}

Eigen::VectorXd run_rhs(const RunStatistics& stats, double noise_variance) {
  const int K = stats.num_tasks;
  const int N = stats.num_vertices();
  Eigen::VectorXd b(K * N);
  for (int k = 0; k < K; ++k) b.segment(k * N, N) = stats.xty.col(k) / noise_variance;
  return b;
}

}  // namespace

double log_marginal_likelihood(std::span<const RunStatistics> runs, const SpdeOperator& spde,
                               const Hyperparams& theta) {
  theta.validate();
  const int K = theta.num_tasks();
  check_runs(runs, spde, K);
  const double s2 = theta.noise_variance;
  std::vector<SparseMatrix> qs;
  double logdet_prior = 0.0;
  for (const auto& t : theta.tasks) {
    qs.push_back(spde.precision(t));
    logdet_prior += SparseCholesky(qs.back()).log_determinant();
  }
  double total = 0.0;
  for (const auto& r : runs) {
    const SparseCholesky chol(run_precision(qs, r, s2));
    const Eigen::VectorXd b = run_rhs(r, s2);
    const Eigen::VectorXd mu = chol.solve(b);
    double yty = 0.0;
    for (int v = 0; v < r.num_vertices(); ++v)
      if (r.excluded.empty() || !r.excluded[v]) yty += r.yty[v];
    const double n = static_cast<double>(r.num_volumes) * r.num_observed();
    total += -0.5 * n * std::log(2.0 * std::numbers::pi * s2) - 0.5 * yty / s2 +
             0.5 * logdet_prior - 0.5 * chol.log_determinant() + 0.5 * b.dot(mu);
  }
  return total;
}

double mesh_diameter(const SurfaceMesh& mesh) {
  const auto& x = mesh.vertices();
  double best = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) best = std::max(best, (x[i] - x[j]).squaredNorm());
  return std::sqrt(best);
}

Hyperparams initial_hyperparams(std::span<const RunStatistics> runs, double diameter) {
  if (runs.empty()) throw ConfigError("initial_hyperparams: no runs");
  if (!(diameter > 0.0)) throw ConfigError("initial_hyperparams: mesh diameter must be positive");
  const int K = runs.front().num_tasks;
  const double kappa = std::sqrt(8.0) / (diameter / 5.0);
  std::vector<std::vector<double>> betas(K);
  double rss = 0.0;
  double dof = 0.0;
  for (const auto& r : runs) {
    for (int v = 0; v < r.num_vertices(); ++v) {
      if (!r.excluded.empty() && r.excluded[v]) continue;
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(r.xtx[v]);
      if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 1e-12).all()) continue;
      const Eigen::VectorXd xty = r.xty.row(v).transpose();
      const Eigen::VectorXd b = ldlt.solve(xty);
      for (int k = 0; k < K; ++k) betas[k].push_back(b[k]);
      rss += std::max(r.yty[v] - b.dot(xty), 0.0);
      dof += r.num_volumes - K;
    }
  }
  Hyperparams h;
  for (int k = 0; k < K; ++k) {
    double var = 0.0;
    if (betas[k].size() > 1) {
      double mean = 0.0;
      for (double b : betas[k]) mean += b;
      mean /= static_cast<double>(betas[k].size());
      for (double b : betas[k]) var += (b - mean) * (b - mean);
      var /= static_cast<double>(betas[k].size() - 1);
    }
    if (!(var > 0.0)) var = 1.0;
    h.tasks.push_back({kappa, 1.0 / (kappa * std::sqrt(4.0 * std::numbers::pi * var))});
  }
  h.noise_variance = dof > 0.0 && rss > 0.0 ? rss / dof : 1.0;
  return h;
}

namespace {

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value;
  int evaluations;
  bool converged;
};

// Minimizes f starting from x0 with an axis-aligned initial simplex.
template <typename F>
NelderMeadResult nelder_mead(F&& f, const Eigen::VectorXd& x0, double step, double tol,
                             int max_evals) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> pts(n + 1, x0);
  std::vector<double> vals(n + 1);
  for (int i = 0; i < n; ++i) pts[i + 1][i] += step;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  for (int i = 0; i <= n; ++i) vals[i] = eval(pts[i]);
  std::vector<int> order(n + 1);
  bool converged = false;
  while (true) {
    for (int i = 0; i <= n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    const int best = order.front();
    const int worst = order.back();
    const int second = order[n - 1];
    double size = 0.0;
    for (int i = 0; i <= n; ++i) size = std::max(size, (pts[i] - pts[best]).cwiseAbs().maxCoeff());
    if (vals[worst] - vals[best] < tol || size < 1e-10) {
      converged = true;
      break;
    }
    if (evals >= max_evals) break;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != worst) centroid += pts[i];
    centroid /= n;
    const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = eval(xr);
    if (fr < vals[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                                       : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (int i = 0; i <= n; ++i) {
      if (i == best) continue;
      pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
      vals[i] = eval(pts[i]);
    }
  }
  const int best = static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  return {pts[best], vals[best], evals, converged};
}

}  // namespace

OptimizationResult optimize_hyperparams(std::span<const RunStatistics> runs,
                                        const SpdeOperator& spde, double diameter,
                                        const OptimizerOptions& options) {
  const Hyperparams start = options.initial ? *options.initial : initial_hyperparams(runs, diameter);
  start.validate();
  check_runs(runs, spde, start.num_tasks());
  auto objective = [&](const Eigen::VectorXd& theta) {
    if (!theta.allFinite() || theta.cwiseAbs().maxCoeff() > 50.0) {
      return std::numeric_limits<double>::infinity();
    }
    try {
      return -log_marginal_likelihood(runs, spde, Hyperparams::from_log(theta));
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  OptimizationResult result;
  result.log_marginal = -std::numeric_limits<double>::infinity();
  Rng rng = make_rng(options.seed, 0x0a11ce);
  std::normal_distribution<double> normal;
  const Eigen::VectorXd x0 = start.to_log();
  for (int s = 0; s < std::max(options.starts, 1); ++s) {
    Eigen::VectorXd init = x0;
    if (s > 0)
      for (Eigen::Index i = 0; i < init.size(); ++i) init[i] += options.jitter * normal(rng);
    const auto nm = nelder_mead(objective, init, options.initial_step, options.tolerance,
                                options.max_evaluations);
    OptimizerTrace t;
    t.start = s;
    t.initial_log = init;
    t.final_log = nm.x;
    t.log_marginal = -nm.value;
    t.evaluations = nm.evaluations;
    t.converged = nm.converged;
    result.trace.push_back(t);
    result.evaluations += nm.evaluations;
    if (-nm.value > result.log_marginal) {
      result.log_marginal = -nm.value;
      result.hyper = Hyperparams::from_log(nm.x);
      result.converged = nm.converged;
    }
  }
  if (!std::isfinite(result.log_marginal)) {
    throw NumericError("optimize_hyperparams: marginal likelihood could not be evaluated");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Posterior
// ---------------------------------------------------------------------------

PosteriorField posterior(std::span<const RunStatistics> runs, const SpdeOperator& spde,
                         const Hyperparams& theta) {
  theta.validate();
  const int K = theta.num_tasks();
  check_runs(runs, spde, K);
  const int N = spde.size();
  std::vector<SparseMatrix> qs;
  for (const auto& t : theta.tasks) qs.push_back(spde.precision(t));

  std::vector<std::shared_ptr<const RunPosterior>> out;
  for (const auto& r : runs) {
    auto rp = std::make_shared<RunPosterior>();
    rp->num_vertices = N;
    rp->num_tasks = K;
    auto chol = std::make_shared<SparseCholesky>(run_precision(qs, r, theta.noise_variance));
    rp->mean = chol->solve(run_rhs(r, theta.noise_variance));
    const SelectedInverse sel = chol->selected_inverse();
    rp->variance = sel.diagonal();
    rp->vertex_covariance.resize(N, K * K);
    for (int v = 0; v < N; ++v)
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) rp->vertex_covariance(v, a * K + b) = sel(a * N + v, b * N + v);
    rp->factor = std::move(chol);
    out.push_back(std::move(rp));
  }
  return PosteriorField(std::move(out), theta);
}

PosteriorField::PosteriorField(std::vector<std::shared_ptr<const RunPosterior>> runs,
                               Hyperparams hyper)
    : runs_(std::move(runs)), hyper_(std::move(hyper)) {}

Eigen::MatrixXd PosteriorField::mean(int run) const {
  const int N = num_vertices();
  const int K = num_tasks();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(N, K);
  if (run >= 0) {
    for (int k = 0; k < K; ++k) m.col(k) = runs_.at(run)->mean.segment(k * N, N);
    return m;
  }
  for (const auto& r : runs_)
    for (int k = 0; k < K; ++k) m.col(k) += r->mean.segment(k * N, N);
  return m / static_cast<double>(num_runs());
}

Eigen::MatrixXd PosteriorField::sd(int run) const {
  const int N = num_vertices();
  const int K = num_tasks();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(N, K);
  if (run >= 0) {
    for (int k = 0; k < K; ++k) s.col(k) = runs_.at(run)->variance.segment(k * N, N).cwiseSqrt();
    return s;
  }
  for (const auto& r : runs_)
    for (int k = 0; k < K; ++k) s.col(k) += r->variance.segment(k * N, N);
  const double J = static_cast<double>(num_runs());
  return (s / (J * J)).cwiseSqrt();
}

FieldPosterior PosteriorField::combine(const Eigen::MatrixXd& weights) const {
  if (weights.rows() != num_runs() || weights.cols() != num_tasks()) {
    throw ConfigError("PosteriorField::combine: weights must be J x K");
  }
  std::vector<FieldPosterior::Term> terms;
  for (int j = 0; j < num_runs(); ++j) {
    if (weights.row(j).isZero(0.0)) continue;
    terms.push_back({runs_[j], weights.row(j).transpose()});
  }
  if (terms.empty()) throw ConfigError("PosteriorField::combine: all weights are zero");
  return FieldPosterior(std::move(terms));
}

FieldPosterior PosteriorField::task(int run, int k) const {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(num_runs(), num_tasks());
  w(run, k) = 1.0;
  return combine(w);
}

FieldPosterior PosteriorField::run_average(int k) const {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(num_runs(), num_tasks());
  w.col(k).setConstant(1.0 / num_runs());
  return combine(w);
}

Eigen::MatrixXd PosteriorField::dense_covariance(int run) const {
  const auto& r = *runs_.at(run);
  const int n = r.num_vertices * r.num_tasks;
  return r.factor->solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(n, n)));
}

FieldPosterior::FieldPosterior(std::vector<Term> terms) : terms_(std::move(terms)) {
  if (terms_.empty()) throw ConfigError("FieldPosterior: no terms");
  const int N = terms_.front().run->num_vertices;
  mean_ = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(N);
  for (const auto& t : terms_) {
    const auto& r = *t.run;
    if (r.num_vertices != N || t.task_weights.size() != r.num_tasks) {
      throw ConfigError("FieldPosterior: inconsistent term dimensions");
    }
    const int K = r.num_tasks;
    for (int a = 0; a < K; ++a) {
      mean_ += t.task_weights[a] * r.mean.segment(a * N, N);
      for (int b = 0; b < K; ++b) {
        const double w = t.task_weights[a] * t.task_weights[b];
        if (w != 0.0) var += w * r.vertex_covariance.col(a * K + b);
      }
    }
  }
  sd_ = var.cwiseMax(0.0).cwiseSqrt();
}

Eigen::MatrixXd FieldPosterior::sample(int first, int count, std::uint64_t seed) const {
  if (first < 0 || count < 0) throw ConfigError("FieldPosterior::sample: negative range");
  const int N = num_vertices();
  Eigen::MatrixXd out(count, N);
  int done = 0;
  while (done < count) {
    const int index = first + done;
    const int block = index / kBlock;
    const int block_start = block * kBlock;
    const int take = std::min(count - done, block_start + kBlock - index);
    // regenerate the whole block so draws do not depend on how callers split ranges
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(block));
    std::normal_distribution<double> normal;
    std::vector<Eigen::MatrixXd> z;
    for (const auto& t : terms_) z.emplace_back(t.run->num_vertices * t.run->num_tasks, kBlock);
    for (int s = 0; s < kBlock; ++s)
      for (auto& zt : z)
        for (Eigen::Index i = 0; i < zt.rows(); ++i) zt(i, s) = normal(rng);
    Eigen::MatrixXd fields = mean_.replicate(1, kBlock);
    for (std::size_t ti = 0; ti < terms_.size(); ++ti) {
      const auto& t = terms_[ti];
      const Eigen::MatrixXd x = t.run->factor->correlate(z[ti]);
      for (int a = 0; a < t.run->num_tasks; ++a) {
        if (t.task_weights[a] != 0.0) fields += t.task_weights[a] * x.middleRows(a * N, N);
      }
    }
    out.middleRows(done, take) = fields.middleCols(index - block_start, take).transpose();
    done += take;
  }
  return out;
}

Eigen::MatrixXd FieldPosterior::dense_covariance() const {
  const int N = num_vertices();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(N, N);
  for (const auto& t : terms_) {
    const int K = t.run->num_tasks;
    const Eigen::MatrixXd full =
        t.run->factor->solve(Eigen::MatrixXd(Eigen::MatrixXd::Identity(K * N, K * N)));
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(N, K * N);
    for (int a = 0; a < K; ++a) w.middleCols(a * N, N).diagonal().setConstant(t.task_weights[a]);
    cov += w * full * w.transpose();
  }
  return cov;
}

void GroupContrast::validate(int subjects, int runs, int tasks) const {
  if (weights.size() != static_cast<Eigen::Index>(subjects) * runs * tasks) {
    throw ConfigError("group contrast has length " + std::to_string(weights.size()) +
                      ", expected M*J*K = " + std::to_string(subjects * runs * tasks));
  }
  if (!weights.allFinite()) throw ConfigError("group contrast has non-finite weights");
  if (weights.isZero(0.0)) throw ConfigError("group contrast has no nonzero weight");
}

GroupContrast average_task_contrast(int subjects, int runs, int tasks, int task) {
  if (subjects < 1 || runs < 1 || tasks < 1 || task < 0 || task >= tasks) {
    throw ConfigError("average_task_contrast: invalid dimensions");
  }
  GroupContrast c;
  c.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(subjects) * runs * tasks);
  const double w = 1.0 / (static_cast<double>(runs) * subjects);
  for (int m = 0; m < subjects; ++m)
    for (int j = 0; j < runs; ++j) c.weights[(m * runs + j) * tasks + task] = w;
  c.label = "average task " + std::to_string(task + 1);
  return c;
}

FieldPosterior group_posterior(std::span<const PosteriorField> subjects,
                               const GroupContrast& contrast) {
  if (subjects.empty()) throw ConfigError("group_posterior: no subjects");
  const int M = static_cast<int>(subjects.size());
  const int J = subjects.front().num_runs();
  const int K = subjects.front().num_tasks();
  const int N = subjects.front().num_vertices();
  for (const auto& s : subjects) {
    if (s.num_runs() != J || s.num_tasks() != K || s.num_vertices() != N) {
      throw ConfigError("group_posterior: subjects differ in runs, tasks or vertices");
    }
  }
  contrast.validate(M, J, K);
  std::vector<FieldPosterior::Term> terms;
  for (int m = 0; m < M; ++m) {
    for (int j = 0; j < J; ++j) {
      const Eigen::VectorXd w = contrast.weights.segment((m * J + j) * K, K);
      if (w.isZero(0.0)) continue;
      terms.push_back({subjects[m].run_ptr(j), w});
    }
  }
  return FieldPosterior(std::move(terms));
}

}  // namespace sbglm
