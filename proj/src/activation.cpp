#include "sbglm/activation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "sbglm/error.hpp"
#include "sbglm/io.hpp"
#include "sbglm/parallel.hpp"
#include "sbglm/rng.hpp"

namespace sbglm {

std::string to_string(ActivationMethod m) {
  switch (m) {
    case ActivationMethod::excursion: return "excursion";
    case ActivationMethod::bonferroni: return "bonferroni";
    case ActivationMethod::fdr: return "fdr";
    case ActivationMethod::permutation: return "permutation";
  }
  return "unknown";
}

ActivationMethod parse_method(const std::string& name) {
  if (name == "excursion") return ActivationMethod::excursion;
  if (name == "bonferroni") return ActivationMethod::bonferroni;
  if (name == "fdr") return ActivationMethod::fdr;
  if (name == "permutation") return ActivationMethod::permutation;
  throw ConfigError("unknown activation method '" + name + "'");
}

int ActivationMap::count() const {
  return static_cast<int>(std::count(active.begin(), active.end(), true));
}

namespace {

void check_alpha(double alpha, double upper) {
  if (!(alpha > 0.0) || !(alpha < upper)) {
    throw ConfigError("alpha must lie in (0, " + std::to_string(upper) + ")");
  }
}

bool is_tested(const std::vector<bool>& tested, int v) { return tested.empty() || tested[v]; }

}  // namespace

ActivationMap excursion_set(const FieldPosterior& post, double gamma, double alpha,
                            const ExcursionOptions& options) {
  check_alpha(alpha, 0.5);
  if (options.n_mc < 10000) throw ConfigError("excursion_set: need at least 10^4 Monte Carlo draws");
  const int N = post.num_vertices();
  ActivationMap map;
  map.active.assign(N, false);
  map.gamma = gamma;
  map.alpha = alpha;
  map.method = ActivationMethod::excursion;
  map.seed = options.seed;
  map.tie_breaking = "equal marginal probabilities ordered by vertex index";

  const boost::math::normal_distribution<double> std_normal;
  std::vector<double> marginal(N);
  for (int v = 0; v < N; ++v) {
    const double mu = post.mean()[v];
    const double sd = post.sd()[v];
    marginal[v] = sd > 0.0 ? boost::math::cdf(boost::math::complement(std_normal, (gamma - mu) / sd))
                           : (mu > gamma ? 1.0 : 0.0);
  }
  std::vector<int> candidates;
  for (int v = 0; v < N; ++v)
    if (marginal[v] >= 1.0 - alpha) candidates.push_back(v);
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](int a, int b) { return marginal[a] > marginal[b]; });
  if (candidates.empty()) {
    map.notes.push_back("no vertex with marginal exceedance probability >= 1 - alpha");
    return map;
  }

  // leading[s]: how many of the ordered candidates exceed gamma before the first failure
  const int n = options.n_mc;
  const int block = FieldPosterior::kBlock;
  const int blocks = (n + block - 1) / block;
  std::vector<int> leading(n);
  parallel_for(static_cast<std::size_t>(blocks), options.jobs, [&](std::size_t b) {
    const int first = static_cast<int>(b) * block;
    const int count = std::min(block, n - first);
    const Eigen::MatrixXd draws = post.sample(first, count, options.seed);
    for (int s = 0; s < count; ++s) {
      int m = 0;
      while (m < static_cast<int>(candidates.size()) && draws(s, candidates[m]) > gamma) ++m;
      leading[first + s] = m;
    }
  });
  std::vector<int> tally(candidates.size() + 2, 0);
  for (int m : leading) ++tally[m];
  // at_least[m] = #{s : leading[s] >= m}
  std::vector<long long> at_least(candidates.size() + 2, 0);
  for (int m = static_cast<int>(candidates.size()); m >= 0; --m) at_least[m] = at_least[m + 1] + tally[m];

  const double target = (1.0 - alpha) * n;
  int lo = 0;  // joint(lo) >= 1 - alpha always holds for the empty prefix
  int hi = static_cast<int>(candidates.size());
  while (lo < hi) {
    const int mid = lo + (hi - lo + 1) / 2;
    if (static_cast<double>(at_least[mid]) >= target) lo = mid;
    else hi = mid - 1;
  }
  for (int i = 0; i < lo; ++i) map.active[candidates[i]] = true;
  map.threshold = lo > 0 ? static_cast<double>(at_least[lo]) / n : 1.0;
  return map;
}

std::vector<ActivationMap> excursion_sets(const FieldPosterior& post, std::span<const double> gammas,
                                          double alpha, const ExcursionOptions& options) {
  std::vector<ActivationMap> maps;
  for (std::size_t i = 0; i < gammas.size(); ++i) {
    if (i > 0 && !(gammas[i] > gammas[i - 1])) throw ConfigError("excursion_sets: gammas must be ascending");
    ActivationMap map = excursion_set(post, gammas[i], alpha, options);
    if (i > 0) {
      int dropped = 0;
      for (int v = 0; v < map.num_vertices(); ++v) {
        if (map.active[v] && !maps.back().active[v]) {
          map.active[v] = false;
          ++dropped;
        }
      }
      if (dropped > 0) {
        map.notes.push_back(std::to_string(dropped) + " vertices removed to keep the map inside the map at gamma " +
                            io::format_double(gammas[i - 1]));
      }
    }
    maps.push_back(std::move(map));
  }
  return maps;
}

double t_upper_tail(double t, double dof) {
  if (!(dof > 0.0)) throw ConfigError("t-test needs positive degrees of freedom");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const boost::math::students_t_distribution<double> dist(dof);
  return boost::math::cdf(boost::math::complement(dist, t));
}

TTestResult classical_ttest(const ClassicalFit& fit, int task, double gamma) {
  if (task < 0 || task >= fit.num_tasks()) throw ConfigError("classical_ttest: task out of range");
  if (!(fit.dof > 0.0)) throw ConfigError("classical_ttest: fit has no degrees of freedom");
  const int N = fit.num_vertices();
  TTestResult r;
  r.t = Eigen::VectorXd::Zero(N);
  r.p = Eigen::VectorXd::Ones(N);
  r.defined.assign(N, false);
  r.dof = fit.dof;
  for (int v = 0; v < N; ++v) {
    const double se = fit.se(v, task);
    const double b = fit.beta(v, task);
    if (!fit.defined.empty() && !fit.defined[v]) continue;
    if (!(se > 0.0) || !std::isfinite(se) || !std::isfinite(b)) continue;
    r.t[v] = (b - gamma) / se;
    r.p[v] = t_upper_tail(r.t[v], fit.dof);
    r.defined[v] = true;
  }
  return r;
}

ActivationMap correct_bonferroni(const Eigen::VectorXd& pvals, double alpha,
                                 const std::vector<bool>& tested) {
  check_alpha(alpha, 1.0);
  const int N = static_cast<int>(pvals.size());
  ActivationMap map;
  map.active.assign(N, false);
  map.alpha = alpha;
  map.method = ActivationMethod::bonferroni;
  int V = 0;
  for (int v = 0; v < N; ++v) V += is_tested(tested, v);
  for (int v = 0; v < N; ++v) {
    if (is_tested(tested, v) && pvals[v] * V < alpha) map.active[v] = true;
  }
  map.threshold = V > 0 ? alpha / V : 0.0;
  return map;
}

ActivationMap correct_fdr(const Eigen::VectorXd& pvals, double alpha,
                          const std::vector<bool>& tested) {
  check_alpha(alpha, 1.0);
  const int N = static_cast<int>(pvals.size());
  ActivationMap map;
  map.active.assign(N, false);
  map.alpha = alpha;
  map.method = ActivationMethod::fdr;
  std::vector<int> order;
  for (int v = 0; v < N; ++v)
    if (is_tested(tested, v)) order.push_back(v);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return pvals[a] < pvals[b]; });
  const double V = static_cast<double>(order.size());
  int cutoff = 0;
  for (std::size_t l = 1; l <= order.size(); ++l) {
    if (pvals[order[l - 1]] <= static_cast<double>(l) * alpha / V) cutoff = static_cast<int>(l);
  }
  for (int i = 0; i < cutoff; ++i) map.active[order[i]] = true;
  map.threshold = cutoff > 0 ? pvals[order[cutoff - 1]] : 0.0;
  return map;
}

PermutationResult correct_permutation(const SessionData& whitened, int task, double gamma,
                                      double alpha, const PermutationOptions& options) {
  check_alpha(alpha, 1.0);
  if (options.permutations < 1000) throw ConfigError("permutation test needs at least 1000 permutations");
  const int T = whitened.num_volumes();
  const int N = whitened.num_vertices();
  const int K = whitened.num_tasks();
  if (task < 0 || task >= K) throw ConfigError("correct_permutation: task out of range");
  const double dof = T - K;

  std::vector<Eigen::MatrixXd> xt(N);       // K x T
  std::vector<Eigen::MatrixXd> xtx_inv(N);  // K x K
  std::vector<bool> usable(N, false);
  for (int v = 0; v < N; ++v) {
    if (whitened.is_excluded(v)) continue;
    const Eigen::MatrixXd& x = whitened.design_at(v);
    if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(x).rank() < K) continue;
    xt[v] = x.transpose();
    xtx_inv[v] = (xt[v] * x).ldlt().solve(Eigen::MatrixXd::Identity(K, K));
    usable[v] = true;
  }
  const Eigen::VectorXd yty = whitened.bold.colwise().squaredNorm().transpose();

  auto statistics = [&](const Eigen::MatrixXd& y) {
    Eigen::VectorXd t = Eigen::VectorXd::Constant(N, -std::numeric_limits<double>::infinity());
    for (int v = 0; v < N; ++v) {
      if (!usable[v]) continue;
      const Eigen::VectorXd xty = xt[v] * y.col(v);
      const Eigen::VectorXd b = xtx_inv[v] * xty;
      const double s2 = std::max(yty[v] - b.dot(xty), 0.0) / dof;
      const double se = std::sqrt(s2 * xtx_inv[v](task, task));
      if (se > 0.0) t[v] = (b[task] - gamma) / se;
    }
    return t;
  };

  const Eigen::VectorXd observed = statistics(whitened.bold);
  PermutationResult result;
  result.max_null.resize(options.permutations);
  parallel_for(static_cast<std::size_t>(options.permutations), options.jobs, [&](std::size_t m) {
    std::vector<int> order(T);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(options.seed, m);
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::MatrixXd y(T, N);
    for (int t = 0; t < T; ++t) y.row(t) = whitened.bold.row(order[t]);
    result.max_null[static_cast<Eigen::Index>(m)] = statistics(y).maxCoeff();
  });

  std::vector<double> sorted(result.max_null.data(), result.max_null.data() + result.max_null.size());
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha) * sorted.size()));
  const double threshold = sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];

  ActivationMap& map = result.map;
  map.active.assign(N, false);
  map.gamma = gamma;
  map.alpha = alpha;
  map.method = ActivationMethod::permutation;
  map.seed = options.seed;
  map.threshold = threshold;
  for (int v = 0; v < N; ++v) map.active[v] = usable[v] && observed[v] > threshold;
  return result;
}

double whole_domain_level(double alpha) {
  if (!(alpha >= 0.0) || !(alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  return 1.0 - (1.0 - alpha) * (1.0 - alpha);
}

CombinedMap combine_hemispheres(const ActivationMap& left, const ActivationMap& right,
                                double alpha) {
  CombinedMap out;
  out.active = left.active;
  out.active.insert(out.active.end(), right.active.begin(), right.active.end());
  out.level = whole_domain_level(alpha);
  return out;
}

void write_activation_map(const std::filesystem::path& dir, const ActivationMap& map) {
  std::string active;
  active.reserve(map.active.size() * 2);
  for (bool a : map.active) active += a ? "1\n" : "0\n";
  io::write_text(dir / "active.tsv", active);
  nlohmann::ordered_json meta;
  meta["method"] = to_string(map.method);
  meta["gamma"] = map.gamma;
  meta["alpha"] = map.alpha;
  meta["seed"] = map.seed;
  meta["threshold"] = map.threshold;
  meta["num_active"] = map.count();
  meta["num_vertices"] = map.num_vertices();
  if (!map.tie_breaking.empty()) meta["tie_breaking"] = map.tie_breaking;
  if (!map.notes.empty()) meta["notes"] = map.notes;
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

ActivationMap read_activation_map(const std::filesystem::path& dir) {
  io::require_exists(dir / "active.tsv", "activation map");
  io::require_exists(dir / "meta.json", "activation metadata");
  const Eigen::MatrixXd a = io::read_matrix(dir / "active.tsv");
  if (a.cols() > 1) throw ConfigError("active.tsv must have one column");
  ActivationMap map;
  for (Eigen::Index i = 0; i < a.rows(); ++i) map.active.push_back(a(i, 0) != 0.0);
  try {
    const auto meta = nlohmann::json::parse(io::read_text(dir / "meta.json"));
    map.method = parse_method(meta.at("method").get<std::string>());
    map.gamma = meta.at("gamma").get<double>();
    map.alpha = meta.at("alpha").get<double>();
    map.seed = meta.value("seed", std::uint64_t{0});
    map.threshold = meta.value("threshold", 0.0);
    map.tie_breaking = meta.value("tie_breaking", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError((dir / "meta.json").string() + ": " + e.what());
  }
  return map;
}

}  // namespace sbglm
