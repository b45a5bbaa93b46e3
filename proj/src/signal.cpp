#include "sbglm/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/QR>

#include "sbglm/error.hpp"
#include "sbglm/io.hpp"

namespace sbglm {

void TaskParadigm::validate() const {
  if (task_names.empty()) throw ConfigError("paradigm has no tasks");
  if (events.size() != task_names.size()) throw ConfigError("paradigm event lists do not match tasks");
  if (!(tr > 0.0)) throw ConfigError("paradigm TR must be positive");
  if (num_volumes <= 0) throw ConfigError("paradigm volume count must be positive");
  const double span = tr * num_volumes;
  for (std::size_t k = 0; k < events.size(); ++k) {
    for (const auto& e : events[k]) {
      if (!(e.onset >= 0.0) || !(e.duration >= 0.0) || e.onset + e.duration > span + 1e-9) {
        throw ConfigError("event of task '" + task_names[k] + "' outside [0, T*TR]");
      }
    }
  }
}

TaskParadigm read_paradigm(const std::filesystem::path& path, int num_volumes, double tr) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open paradigm file: " + path.string());
  TaskParadigm p;
  p.tr = tr;
  p.num_volumes = num_volumes;
  auto task_index = [&](const std::string& name) {
    auto it = std::find(p.task_names.begin(), p.task_names.end(), name);
    if (it != p.task_names.end()) return static_cast<int>(it - p.task_names.begin());
    p.task_names.push_back(name);
    p.events.emplace_back();
    return static_cast<int>(p.task_names.size()) - 1;
  };
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string head;
    if (!(ss >> head) || head[0] == '#') continue;
    if (head == "tr") {
      if (!(ss >> p.tr)) throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": bad tr");
      continue;
    }
    if (head == "tasks") {
      std::string name;
      while (ss >> name) task_index(name);
      continue;
    }
    TaskEvent e{};
    std::string extra;
    if (!(ss >> e.onset >> e.duration) || (ss >> extra)) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 'task onset duration'");
    }
    p.events[task_index(head)].push_back(e);
  }
  p.validate();
  return p;
}

void write_paradigm(const std::filesystem::path& path, const TaskParadigm& paradigm) {
  std::string out = "tr " + io::format_double(paradigm.tr) + "\ntasks";
  for (const auto& name : paradigm.task_names) out += " " + name;
  out += "\n";
  for (std::size_t k = 0; k < paradigm.events.size(); ++k) {
    for (const auto& e : paradigm.events[k]) {
      out += paradigm.task_names[k] + " " + io::format_double(e.onset) + " " +
             io::format_double(e.duration) + "\n";
    }
  }
  io::write_text(path, out);
}

namespace {

double gamma_density(double t, double shape, double scale) {
  if (t <= 0.0) return 0.0;
  return std::exp((shape - 1.0) * std::log(t) - t / scale - std::lgamma(shape) -
                  shape * std::log(scale));
}

}  // namespace

Eigen::VectorXd canonical_hrf(double dt, const HrfParams& params) {
  if (!(dt > 0.0)) throw ConfigError("canonical_hrf: dt must be positive");
  const int n = static_cast<int>(std::floor(params.length / dt)) + 1;
  Eigen::VectorXd h(n);
  const double a1 = params.peak_delay / params.peak_dispersion;
  const double a2 = params.undershoot_delay / params.undershoot_dispersion;
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    h[i] = gamma_density(t, a1, params.peak_dispersion) -
           params.undershoot_ratio * gamma_density(t, a2, params.undershoot_dispersion);
  }
  return h / h.maxCoeff();
}

TaskDesign build_design(const TaskParadigm& paradigm, const HrfParams& hrf_params) {
  paradigm.validate();
  constexpr int kOversample = 16;
  const int T = paradigm.num_volumes;
  const int K = paradigm.num_tasks();
  const double dt = paradigm.tr / kOversample;
  const int n_fine = T * kOversample;
  const Eigen::VectorXd hrf = canonical_hrf(dt, hrf_params);

  TaskDesign d;
  d.tasks = Eigen::MatrixXd::Zero(T, K);
  d.derivatives = Eigen::MatrixXd::Zero(T, K);
  d.offsets = Eigen::VectorXd::Zero(K);
  d.empty_task.assign(K, false);

  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd boxcar = Eigen::VectorXd::Zero(n_fine);
    for (const auto& e : paradigm.events[k]) {
      for (int i = 0; i < n_fine; ++i) {
        const double t = i * dt;
        if (t >= e.onset && t < e.onset + e.duration) boxcar[i] = 1.0;
      }
    }
    if (boxcar.isZero() ) {
      d.empty_task[k] = true;
      continue;
    }
    Eigen::VectorXd fine = Eigen::VectorXd::Zero(n_fine);
    for (int i = 0; i < n_fine; ++i) {
      if (boxcar[i] == 0.0) continue;
      const int len = std::min<int>(static_cast<int>(hrf.size()), n_fine - i);
      fine.segment(i, len) += hrf.head(len);
    }
    fine *= dt;
    Eigen::VectorXd col(T), deriv(T);
    for (int t = 0; t < T; ++t) {
      const int i = t * kOversample;
      col[t] = fine[i];
      const int lo = std::max(i - 1, 0);
      const int hi = std::min(i + 1, n_fine - 1);
      deriv[t] = (fine[hi] - fine[lo]) / ((hi - lo) * dt);
    }
    const double peak = col.maxCoeff();
    if (!(peak > 0.0)) {
      d.empty_task[k] = true;
      continue;
    }
    col /= peak;
    deriv /= peak;
    d.offsets[k] = col.mean();
    d.tasks.col(k) = col.array() - d.offsets[k];
    d.derivatives.col(k) = deriv.array() - deriv.mean();
  }
  return d;
}

SessionData condition(const SessionData& session) {
  SessionData out = session;
  const int T = session.num_volumes();
  const int N = session.num_vertices();
  if (session.design.rows() != T) throw ConfigError("condition: design has wrong row count");
  if (session.nuisance.size() > 0 && session.nuisance.rows() != T) {
    throw ConfigError("condition: nuisance has wrong row count");
  }
  if (!session.bold.allFinite() || !session.design.allFinite() || !session.nuisance.allFinite()) {
    throw ConfigError("condition: non-finite input");
  }
  if (out.excluded.empty()) out.excluded.assign(N, false);

  if (!session.percent_signal) {
    for (int v = 0; v < N; ++v) {
      const double mean = out.bold.col(v).mean();
      if (!(mean > 0.0) || out.excluded[v]) {
        out.excluded[v] = true;
        out.bold.col(v).setZero();
        continue;
      }
      out.bold.col(v) = 100.0 * (out.bold.col(v).array() - mean) / mean;
    }
    out.percent_signal = true;
  }

  const Eigen::Index P = session.nuisance.cols();
  Eigen::MatrixXd z(T, P + 1);
  z.col(0).setOnes();
  if (P > 0) z.rightCols(P) = session.nuisance;
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
  out.bold -= z * qr.solve(out.bold);
  if (out.design.cols() > 0) out.design -= z * qr.solve(out.design);

  out.bold.rowwise() -= out.bold.colwise().mean();
  if (out.design.cols() > 0) out.design.rowwise() -= out.design.colwise().mean();
  for (int v = 0; v < N; ++v)
    if (out.excluded[v]) out.bold.col(v).setZero();
  return out;
}

Eigen::VectorXd sample_autocovariance(const Eigen::Ref<const Eigen::VectorXd>& x, int max_lag) {
  const Eigen::Index T = x.size();
  const Eigen::VectorXd c = x.array() - x.mean();
  Eigen::VectorXd g(max_lag + 1);
  for (int h = 0; h <= max_lag; ++h) {
    g[h] = h < T ? c.head(T - h).dot(c.tail(T - h)) / static_cast<double>(T) : 0.0;
  }
  return g;
}

namespace {

bool levinson_attempt(const Eigen::VectorXd& g, int p, LevinsonResult& r) {
  r.coefficients = Eigen::VectorXd::Zero(p);
  r.reflection = Eigen::VectorXd::Zero(p);
  r.prediction_variance = Eigen::VectorXd::Zero(p + 1);
  r.prediction_variance[0] = g[0];
  if (!(g[0] > 0.0)) return false;
  Eigen::VectorXd a = Eigen::VectorXd::Zero(p);
  for (int m = 1; m <= p; ++m) {
    double acc = g[m];
    for (int i = 1; i < m; ++i) acc -= a[i - 1] * g[m - i];
    const double k = acc / r.prediction_variance[m - 1];
    if (!(std::abs(k) < 1.0)) return false;
    Eigen::VectorXd next = a;
    for (int i = 1; i < m; ++i) next[i - 1] = a[i - 1] - k * a[m - i - 1];
    next[m - 1] = k;
    a = next;
    r.reflection[m - 1] = k;
    r.prediction_variance[m] = r.prediction_variance[m - 1] * (1.0 - k * k);
    if (!(r.prediction_variance[m] > 0.0)) return false;
  }
  r.coefficients = a;
  return true;
}

}  // namespace

LevinsonResult levinson_durbin(const Eigen::VectorXd& autocov, int order) {
  if (order < 0 || autocov.size() < order + 1) {
    throw ConfigError("levinson_durbin: need autocovariances at lags 0..order");
  }
  LevinsonResult r;
  if (levinson_attempt(autocov, order, r)) return r;
  r.ridge = true;
  if (!(autocov[0] > 0.0)) {
    // constant series: no temporal structure to model
    r.coefficients = Eigen::VectorXd::Zero(order);
    r.reflection = Eigen::VectorXd::Zero(order);
    r.prediction_variance = Eigen::VectorXd::Constant(order + 1, 1e-12);
    return r;
  }
  for (double lambda = 1e-8; lambda <= 1.0; lambda *= 10.0) {
    Eigen::VectorXd g = autocov;
    g[0] *= 1.0 + lambda;
    if (levinson_attempt(g, order, r)) {
      r.ridge = true;
      return r;
    }
  }
  throw NumericError("levinson_durbin: autocovariance could not be stabilized");
}

ArModel fit_ar_yule_walker(const Eigen::MatrixXd& residuals, int order,
                           const std::vector<bool>& excluded) {
  const int T = static_cast<int>(residuals.rows());
  const int N = static_cast<int>(residuals.cols());
  if (order < 0) throw ConfigError("AR order must be non-negative");
  if (T <= 3 * order) throw ConfigError("fit_ar_yule_walker: need T > 3p");
  ArModel m;
  m.order = order;
  m.coefficients = Eigen::MatrixXd::Zero(N, order);
  m.innovation_variance = Eigen::VectorXd::Ones(N);
  m.flagged.assign(N, false);
  for (int v = 0; v < N; ++v) {
    if (!excluded.empty() && excluded[v]) continue;
    const auto r = levinson_durbin(sample_autocovariance(residuals.col(v), order), order);
    if (order > 0) m.coefficients.row(v) = r.coefficients.transpose();
    m.innovation_variance[v] = r.prediction_variance[order];
    m.flagged[v] = r.ridge;
  }
  return m;
}

int select_ar_order(const Eigen::VectorXd& residuals, int max_order) {
  const auto T = static_cast<double>(residuals.size());
  if (max_order < 0) throw ConfigError("select_ar_order: max order must be non-negative");
  if (residuals.size() <= 3 * max_order) throw ConfigError("select_ar_order: need T > 3 pmax");
  if (max_order == 0) return 0;
  const auto r = levinson_durbin(sample_autocovariance(residuals, max_order), max_order);
  int best = 0;
  double best_aic = T * std::log(r.prediction_variance[0]);
  for (int p = 1; p <= max_order; ++p) {
    const double aic = T * std::log(r.prediction_variance[p]) + 2.0 * p;
    if (aic < best_aic) {
      best_aic = aic;
      best = p;
    }
  }
  return best;
}

ArModel regularize_ar(std::span<const ArModel> runs, const SurfaceSmoother& smoother) {
  if (runs.empty()) throw ConfigError("regularize_ar: no runs");
  const int p = runs.front().order;
  const int N = runs.front().num_vertices();
  ArModel out;
  out.order = p;
  out.coefficients = Eigen::MatrixXd::Zero(N, p);
  out.innovation_variance = Eigen::VectorXd::Zero(N);
  out.flagged.assign(N, false);
  for (const auto& run : runs) {
    if (run.order != p || run.num_vertices() != N) {
      throw ConfigError("regularize_ar: runs differ in AR order or vertex count");
    }
    out.coefficients += run.coefficients;
    out.innovation_variance += run.innovation_variance;
    for (int v = 0; v < N; ++v) out.flagged[v] = out.flagged[v] || run.flagged[v];
  }
  const double J = static_cast<double>(runs.size());
  out.coefficients /= J;
  out.innovation_variance /= J;
  for (int i = 0; i < p; ++i) out.coefficients.col(i) = smoother.apply(out.coefficients.col(i));
  out.innovation_variance = smoother.apply(out.innovation_variance);
  return out;
}

ArModel regularize_ar(std::span<const ArModel> runs, const SurfaceMesh& mesh, double fwhm) {
  return regularize_ar(runs, SurfaceSmoother(mesh, fwhm));
}

namespace {

// Step-down recursion from an order-p predictor. Returns false if the model
// is not stationary (some reflection coefficient has magnitude >= 1).
bool step_down(const Eigen::VectorXd& coefficients, double innovation_variance,
               std::vector<Eigen::VectorXd>& predictors, std::vector<double>& variance) {
  const int p = static_cast<int>(coefficients.size());
  predictors.assign(p + 1, Eigen::VectorXd());
  variance.assign(p + 1, 0.0);
  predictors[p] = coefficients;
  variance[p] = innovation_variance;
  for (int m = p; m >= 1; --m) {
    const Eigen::VectorXd& a = predictors[m];
    const double k = a[m - 1];
    if (!(std::abs(k) < 1.0)) return false;
    const double denom = 1.0 - k * k;
    Eigen::VectorXd lower(m - 1);
    for (int i = 1; i < m; ++i) lower[i - 1] = (a[i - 1] + k * a[m - i - 1]) / denom;
    predictors[m - 1] = lower;
    variance[m - 1] = variance[m] / denom;
  }
  return true;
}

}  // namespace

WhiteningFilter::WhiteningFilter(const Eigen::VectorXd& coefficients, double innovation_variance) {
  if (!(innovation_variance > 0.0)) throw ConfigError("whitening: innovation variance must be positive");
  Eigen::VectorXd a = coefficients;
  std::vector<double> variance;
  while (!step_down(a, innovation_variance, predictors_, variance)) {
    reduced_ = true;
    a = a.head(a.size() - 1).eval();
  }
  inv_sd_.resize(variance.size());
  for (std::size_t m = 0; m < variance.size(); ++m) inv_sd_[m] = 1.0 / std::sqrt(variance[m]);
}

Eigen::VectorXd WhiteningFilter::apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const int T = static_cast<int>(x.size());
  const int p = order();
  Eigen::VectorXd e(T);
  for (int t = 0; t < T; ++t) {
    const int m = std::min(t, p);
    const Eigen::VectorXd& a = predictors_[m];
    double pred = 0.0;
    for (int i = 1; i <= m; ++i) pred += a[i - 1] * x[t - i];
    e[t] = (x[t] - pred) * inv_sd_[m];
  }
  return e;
}

Eigen::MatrixXd WhiteningFilter::apply_columns(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) out.col(c) = apply(x.col(c));
  return out;
}

SessionData prewhiten(const SessionData& session, const ArModel& ar, WhiteningReport* report) {
  const int N = session.num_vertices();
  if (ar.num_vertices() != N) throw ConfigError("prewhiten: AR model vertex count mismatch");
  if (session.whitened) throw ConfigError("prewhiten: session is already whitened");
  SessionData out = session;
  out.vertex_designs.assign(N, Eigen::MatrixXd());
  if (report) report->reduced.assign(N, false);
  for (int v = 0; v < N; ++v) {
    if (session.is_excluded(v)) {
      out.vertex_designs[v] = Eigen::MatrixXd::Zero(session.num_volumes(), session.num_tasks());
      continue;
    }
    const Eigen::VectorXd coefs = ar.order > 0 ? Eigen::VectorXd(ar.coefficients.row(v).transpose())
                                               : Eigen::VectorXd();
    const WhiteningFilter filter(coefs, ar.innovation_variance[v]);
    out.bold.col(v) = filter.apply(session.bold.col(v));
    out.vertex_designs[v] = filter.apply_columns(session.design);
    if (report) report->reduced[v] = filter.reduced();
  }
  out.whitened = true;
  return out;
}

}  // namespace sbglm
