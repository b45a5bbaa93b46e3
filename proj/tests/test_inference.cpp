#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include <Eigen/Dense>

#include "sbglm/error.hpp"
#include "sbglm/inference.hpp"
#include "sbglm/rng.hpp"
#include "sbglm/simulate.hpp"

using namespace sbglm;

namespace {

SurfaceMesh small_grid(int rows, int cols) {
  MeshSpec spec;
  spec.rows = rows;
  spec.cols = cols;
  spec.spacing = 1.5;
  return make_mesh(spec);
}

// Whitened-style session with its own random design at each vertex.
SessionData random_session(int T, int N, int K, std::uint64_t seed, std::vector<int> excluded = {}) {
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> normal;
  SessionData s;
  s.design = Eigen::MatrixXd::Zero(T, K);
  s.bold.resize(T, N);
  for (int v = 0; v < N; ++v) {
    Eigen::MatrixXd x(T, K);
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < K; ++k) x(t, k) = normal(rng);
    s.vertex_designs.push_back(x);
    for (int t = 0; t < T; ++t) s.bold(t, v) = 0.4 * x(t, 0) + normal(rng);
  }
  s.excluded.assign(N, false);
  for (int v : excluded) s.excluded[v] = true;
  s.percent_signal = true;
  s.whitened = true;
  return s;
}

struct DenseModel {
  Eigen::MatrixXd x;  // (observed N * T) x (K N)
  Eigen::VectorXd y;
};

DenseModel dense_model(const SessionData& s) {
  const int T = s.num_volumes(), N = s.num_vertices(), K = s.num_tasks();
  int observed = 0;
  for (int v = 0; v < N; ++v) observed += !s.is_excluded(v);
  DenseModel m{Eigen::MatrixXd::Zero(observed * T, K * N), Eigen::VectorXd(observed * T)};
  int row = 0;
  for (int v = 0; v < N; ++v) {
    if (s.is_excluded(v)) continue;
    for (int t = 0; t < T; ++t, ++row) {
      for (int k = 0; k < K; ++k) m.x(row, k * N + v) = s.design_at(v)(t, k);
      m.y[row] = s.bold(t, v);
    }
  }
  return m;
}

Eigen::MatrixXd dense_prior_precision(const SpdeOperator& spde, const Hyperparams& h) {
  const int N = spde.size(), K = h.num_tasks();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(K * N, K * N);
  for (int k = 0; k < K; ++k) q.block(k * N, k * N, N, N) = Eigen::MatrixXd(spde.precision(h.tasks[k]));
  return q;
}

double dense_log_marginal(const DenseModel& m, const Eigen::MatrixXd& prior_precision, double s2) {
  const Eigen::MatrixXd cov = m.x * prior_precision.inverse() * m.x.transpose() +
                              s2 * Eigen::MatrixXd::Identity(m.y.size(), m.y.size());
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd l = llt.matrixL();
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * (m.y.size() * std::log(2.0 * M_PI) + logdet + m.y.dot(llt.solve(m.y)));
}

Hyperparams test_hyper() {
  Hyperparams h;
  h.tasks = {{0.8, 0.9}, {0.5, 1.4}};
  h.noise_variance = 1.3;
  return h;
}

}  // namespace

TEST_CASE("classical GLM recovers noiseless amplitudes") {
  SimSpec spec;
  spec.mesh.rows = 4;
  spec.mesh.cols = 5;
  spec.num_tasks = 2;
  spec.truth = {{0.5, 0.5}, {0.5, 0.5}};
  spec.noise_sd = 0.0;
  spec.baseline = 0.0;
  spec.paradigm.num_volumes = 120;
  const auto sim = simulate_session(spec);
  const ClassicalFit fit = fit_classical(sim.runs[0].session);
  CHECK((fit.beta - sim.runs[0].beta).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(fit.dof == 118);
}

TEST_CASE("classical GLM marks rank-deficient vertices") {
  SessionData s = random_session(20, 3, 2, 4);
  s.vertex_designs[1].col(1) = s.vertex_designs[1].col(0);
  const ClassicalFit fit = fit_classical(s);
  CHECK(fit.defined == std::vector<bool>{true, false, true});
  CHECK(std::isnan(fit.beta(1, 0)));
}

TEST_CASE("multi-run and group classical summaries") {
  std::vector<SessionData> runs{random_session(30, 4, 2, 1), random_session(30, 4, 2, 2)};
  const auto multi = fit_classical_multi(runs);
  CHECK((multi.average.beta - 0.5 * (multi.runs[0].beta + multi.runs[1].beta)).norm() < 1e-12);
  CHECK(multi.average.dof == 56);
  const double se = std::sqrt(multi.runs[0].se(2, 1) * multi.runs[0].se(2, 1) +
                              multi.runs[1].se(2, 1) * multi.runs[1].se(2, 1)) / 2.0;
  CHECK(multi.average.se(2, 1) == doctest::Approx(se));

  std::vector<ClassicalFit> subjects{multi.runs[0], multi.runs[1], multi.average};
  const ClassicalFit g = group_classical(subjects);
  CHECK(g.dof == 2);
  CHECK_THROWS_AS(group_classical(std::span<const ClassicalFit>(subjects.data(), 1)), ConfigError);
}

TEST_CASE("posterior and marginal likelihood match the dense linear-Gaussian model") {
  const auto mesh = small_grid(3, 4);
  const SpdeOperator spde(assemble_fem(mesh));
  const int N = mesh.num_vertices(), K = 2, T = 15;
  const std::vector<SessionData> sessions{random_session(T, N, K, 10, {3}), random_session(T, N, K, 11)};
  std::vector<RunStatistics> stats;
  for (const auto& s : sessions) stats.push_back(run_statistics(s));
  const Hyperparams h = test_hyper();
  const Eigen::MatrixXd prior = dense_prior_precision(spde, h);

  const PosteriorField post = posterior(stats, spde, h);
  double expected_lml = 0.0;
  for (int j = 0; j < 2; ++j) {
    const DenseModel m = dense_model(sessions[j]);
    const Eigen::MatrixXd precision = prior + m.x.transpose() * m.x / h.noise_variance;
    const Eigen::MatrixXd cov = precision.inverse();
    const Eigen::VectorXd mean = cov * m.x.transpose() * m.y / h.noise_variance;
    CHECK((post.run(j).mean - mean).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((post.dense_covariance(j) - cov).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((post.run(j).variance - cov.diagonal()).cwiseAbs().maxCoeff() < 1e-8);
    for (int v = 0; v < N; ++v)
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) CHECK(std::abs(post.run(j).cov_at(v, a, b) - cov(a * N + v, b * N + v)) < 1e-8);
    for (int k = 0; k < K; ++k)
      CHECK((post.mean(j).col(k) - mean.segment(k * N, N)).cwiseAbs().maxCoeff() < 1e-8);
    expected_lml += dense_log_marginal(m, prior, h.noise_variance);
  }
  CHECK(log_marginal_likelihood(stats, spde, h) == doctest::Approx(expected_lml).epsilon(1e-10));

  // linear combinations across runs and tasks
  Eigen::MatrixXd w(2, 2);
  w << 0.3, -1.0, 0.5, 2.0;
  const FieldPosterior combo = post.combine(w);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(N, N);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(N);
  for (int j = 0; j < 2; ++j) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(N, K * N);
    for (int k = 0; k < K; ++k) a.middleCols(k * N, N).diagonal().setConstant(w(j, k));
    cov += a * post.dense_covariance(j) * a.transpose();
    mean += a * post.run(j).mean;
  }
  CHECK((combo.mean() - mean).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((combo.sd() - cov.diagonal().cwiseSqrt()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((combo.dense_covariance() - cov).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("posterior samples have the posterior moments") {
  const auto mesh = small_grid(3, 3);
  const SpdeOperator spde(assemble_fem(mesh));
  const std::vector<RunStatistics> stats{run_statistics(random_session(12, 9, 2, 3))};
  const PosteriorField post = posterior(stats, spde, test_hyper());
  const FieldPosterior f = post.task(0, 1);
  const int n = 20000;
  const Eigen::MatrixXd draws = f.sample(0, n, 77);
  const Eigen::VectorXd mean = draws.colwise().mean();
  const Eigen::MatrixXd centered = draws.rowwise() - mean.transpose();
  const Eigen::VectorXd var = centered.colwise().squaredNorm() / (n - 1.0);
  for (int v = 0; v < 9; ++v) {
    const double sd = f.sd()[v];
    CHECK(std::abs(mean[v] - f.mean()[v]) < 5.0 * sd / std::sqrt(n));
    CHECK(std::abs(var[v] - sd * sd) < 5.0 * sd * sd * std::sqrt(2.0 / n));
  }
  // any split into calls yields the same sequence
  const Eigen::MatrixXd part = f.sample(1000, 100, 77);
  CHECK(part == draws.middleRows(1000, 100));
}

TEST_CASE("identical runs average to the single-run mean with covariance over J") {
  const auto mesh = small_grid(3, 3);
  const SpdeOperator spde(assemble_fem(mesh));
  const RunStatistics one = run_statistics(random_session(12, 9, 2, 8));
  const std::vector<RunStatistics> single{one};
  const std::vector<RunStatistics> triple{one, one, one};
  const PosteriorField a = posterior(single, spde, test_hyper());
  const PosteriorField b = posterior(triple, spde, test_hyper());
  CHECK((b.mean() - a.mean()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((b.sd().array().square() - a.sd().array().square() / 3.0).abs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd cov_a = a.run_average(1).dense_covariance();
  const Eigen::MatrixXd cov_b = b.run_average(1).dense_covariance();
  CHECK((cov_b - cov_a / 3.0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("group average over identical subjects") {
  const auto mesh = small_grid(3, 3);
  const SpdeOperator spde(assemble_fem(mesh));
  const std::vector<RunStatistics> stats{run_statistics(random_session(12, 9, 2, 5)),
                                         run_statistics(random_session(12, 9, 2, 6))};
  const PosteriorField subject = posterior(stats, spde, test_hyper());
  const int M = 4;
  const std::vector<PosteriorField> subjects(M, subject);
  const FieldPosterior g = group_posterior(subjects, average_task_contrast(M, 2, 2, 1));
  const FieldPosterior s = subject.run_average(1);
  CHECK((g.mean() - s.mean()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g.dense_covariance() - s.dense_covariance() / M).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("average-task contrast weights") {
  const GroupContrast c = average_task_contrast(45, 2, 4, 3);
  CHECK(c.weights.size() == 360);
  const Eigen::VectorXd block = c.weights.head(8);
  Eigen::VectorXd expected(8);
  expected << 0, 0, 0, 1.0 / 90, 0, 0, 0, 1.0 / 90;
  CHECK(block == expected);
  CHECK(c.weights.sum() == doctest::Approx(1.0));
  CHECK(c.weights.tail(8) == expected);
  CHECK_THROWS_AS(c.validate(44, 2, 4), ConfigError);
  CHECK_THROWS_AS(average_task_contrast(45, 2, 4, 4), ConfigError);
  GroupContrast zero{Eigen::VectorXd::Zero(8), ""};
  CHECK_THROWS_AS(zero.validate(1, 2, 4), ConfigError);
}

TEST_CASE("run statistics file round trip") {
  const RunStatistics s = run_statistics(random_session(10, 5, 2, 12, {2}));
  const auto path = std::filesystem::temp_directory_path() / "sbglm_stats.tsv";
  write_run_statistics(path, s);
  const RunStatistics back = read_run_statistics(path);
  CHECK(back.num_volumes == 10);
  CHECK(back.num_tasks == 2);
  CHECK(back.excluded == s.excluded);
  CHECK(back.xty == s.xty);
  CHECK(back.yty == s.yty);
  for (int v = 0; v < 5; ++v) CHECK(back.xtx[v] == s.xtx[v]);
  std::filesystem::remove(path);
}

TEST_CASE("hyperparameter log transform and validation") {
  const Hyperparams h = test_hyper();
  const Hyperparams back = Hyperparams::from_log(h.to_log());
  CHECK(back.tasks[1].tau == doctest::Approx(1.4));
  CHECK(back.noise_variance == doctest::Approx(1.3));
  Hyperparams bad = h;
  bad.noise_variance = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("empirical Bayes moves toward the truth and improves the likelihood") {
  SimSpec spec;
  spec.mesh.rows = 8;
  spec.mesh.cols = 8;
  spec.num_tasks = 1;
  spec.num_runs = 2;
  spec.truth = {{0.35, 0.6}};
  spec.baseline = 0.0;
  spec.paradigm.num_volumes = 200;
  spec.seed = 3;
  const auto sim = simulate_session(spec);
  std::vector<RunStatistics> stats;
  for (const auto& r : sim.runs) stats.push_back(run_statistics(r.session));
  const SpdeOperator spde(assemble_fem(sim.mesh));
  const double diameter = mesh_diameter(sim.mesh);
  CHECK(diameter == doctest::Approx(std::sqrt(2.0) * 14.0));
  const Hyperparams start = initial_hyperparams(stats, diameter);
  OptimizerOptions opt;
  opt.starts = 2;
  const auto est = optimize_hyperparams(stats, spde, diameter, opt);
  CHECK(est.log_marginal >= log_marginal_likelihood(stats, spde, start));
  CHECK(est.trace.size() == 2);
  CHECK(est.hyper.noise_variance == doctest::Approx(1.0).epsilon(0.1));
  const auto again = optimize_hyperparams(stats, spde, diameter, opt);
  CHECK(again.hyper.to_log() == est.hyper.to_log());
}
