#include "sbglm/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <random>
#include <utility>

#include <json.hpp>

#include "sbglm/error.hpp"
#include "sbglm/io.hpp"
#include "sbglm/parallel.hpp"
#include "sbglm/sparse_cholesky.hpp"

namespace sbglm {

namespace {

bool ar_stationary(const Eigen::VectorXd& phi) {
  // step-down recursion: stationary iff every reflection coefficient is inside (-1, 1)
  Eigen::VectorXd a = phi;
  for (int m = static_cast<int>(a.size()); m >= 1; --m) {
    const double k = a[m - 1];
    if (!(std::abs(k) < 1.0)) return false;
    Eigen::VectorXd next(m - 1);
    for (int i = 0; i < m - 1; ++i) next[i] = (a[i] + k * a[m - 2 - i]) / (1.0 - k * k);
    a = next;
  }
  return true;
}

SpdeHyper default_truth() {
  const double kappa = std::sqrt(8.0) / 10.0;
  return {kappa, 1.0 / (std::sqrt(4.0 * M_PI) * kappa)};
}

class FieldSampler {
 public:
  FieldSampler(const SpdeOperator& spde, const std::vector<SpdeHyper>& hyper) {
    for (const auto& h : hyper) factors_.push_back(std::make_unique<SparseCholesky>(spde.precision(h)));
  }
  // N x K, one independent prior draw per task
  Eigen::MatrixXd draw(std::uint64_t seed, std::uint64_t stream_base) const {
    const int n = factors_.front()->size();
    Eigen::MatrixXd out(n, static_cast<Eigen::Index>(factors_.size()));
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      Rng rng = make_rng(seed, stream_base + k);
      std::normal_distribution<double> normal;
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z[i] = normal(rng);
      out.col(static_cast<Eigen::Index>(k)) = factors_[k]->correlate(z);
    }
    return out;
  }

 private:
  std::vector<std::unique_ptr<SparseCholesky>> factors_;
};

struct RunGenerator {
  const SimSpec& spec;
  TaskDesign design;
  Eigen::MatrixXd nuisance;

  RunGenerator(const SimSpec& s, const TaskParadigm& paradigm) : spec(s), design(build_design(paradigm)) {
    const int T = paradigm.num_volumes;
    if (spec.drift != 0.0) {
      nuisance.resize(T, 1);
      for (int t = 0; t < T; ++t) nuisance(t, 0) = (t - 0.5 * (T - 1)) / T;
    }
  }

  SimulatedRun make(const Eigen::MatrixXd& beta, std::uint64_t noise_seed) const {
    const int T = static_cast<int>(design.tasks.rows());
    const int N = static_cast<int>(beta.rows());
    Eigen::MatrixXd pct = design.tasks * beta.transpose();
    for (int v = 0; v < N; ++v) {
      Rng rng = make_rng(noise_seed, static_cast<std::uint64_t>(v));
      pct.col(v) += simulate_ar(spec.ar, spec.noise_sd, T, rng);
    }
    if (spec.drift != 0.0) pct.colwise() += spec.drift * nuisance.col(0);
    SimulatedRun run;
    run.beta = beta;
    run.session.design = design.tasks;
    run.session.nuisance = nuisance;
    if (spec.baseline > 0.0) {
      run.session.bold = (spec.baseline * (1.0 + pct.array() / 100.0)).matrix();
    } else {
      run.session.bold = std::move(pct);
      run.session.percent_signal = true;
    }
    return run;
  }
};

std::string numbered(const char* prefix, int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%0*d", prefix, width, i);
  return buf;
}

}  // namespace

void SimSpec::validate() const {
  if (num_tasks < 1 || num_runs < 1 || num_subjects < 1 || num_visits < 1) {
    throw ConfigError("simulation needs at least one task, run, subject and visit");
  }
  if (static_cast<int>(truth.size()) != num_tasks) {
    throw ConfigError("simulation needs one (kappa, tau) pair per task");
  }
  for (const auto& h : truth) h.validate();
  if (!(noise_sd >= 0.0) || !(baseline >= 0.0) || !std::isfinite(drift)) {
    throw ConfigError("noise_sd and baseline must be non-negative");
  }
  if (!(deviation_scale >= 0.0) || !(visit_noise_ratio >= 0.0)) {
    throw ConfigError("deviation_scale and visit_noise_ratio must be non-negative");
  }
  if (!ar_stationary(ar)) throw ConfigError("simulated AR noise model is not stationary");
  if (paradigm.num_volumes < 2 || !(paradigm.tr > 0.0) || !(paradigm.block_duration > 0.0) ||
      !(paradigm.rest_duration >= 0.0)) {
    throw ConfigError("invalid paradigm settings");
  }
  if (mesh.kind == "grid") {
    if (mesh.rows < 2 || mesh.cols < 2 || !(mesh.spacing > 0.0)) throw ConfigError("grid needs rows, cols >= 2");
  } else if (mesh.kind == "icosphere") {
    if (mesh.level < 0 || mesh.level > 7 || !(mesh.radius > 0.0)) throw ConfigError("icosphere level must be in [0, 7]");
  } else {
    throw ConfigError("unknown mesh kind '" + mesh.kind + "'");
  }
}

SimSpec parse_sim_spec(const std::string& json_text) {
  SimSpec s;
  try {
    const auto j = nlohmann::json::parse(json_text);
    if (j.contains("mesh")) {
      const auto& m = j["mesh"];
      s.mesh.kind = m.value("kind", s.mesh.kind);
      s.mesh.rows = m.value("rows", s.mesh.rows);
      s.mesh.cols = m.value("cols", s.mesh.cols);
      s.mesh.spacing = m.value("spacing", s.mesh.spacing);
      s.mesh.level = m.value("level", s.mesh.level);
      s.mesh.radius = m.value("radius", s.mesh.radius);
    }
    if (j.contains("paradigm")) {
      const auto& p = j["paradigm"];
      s.paradigm.tr = p.value("tr", s.paradigm.tr);
      s.paradigm.num_volumes = p.value("volumes", s.paradigm.num_volumes);
      s.paradigm.block_duration = p.value("block", s.paradigm.block_duration);
      s.paradigm.rest_duration = p.value("rest", s.paradigm.rest_duration);
    }
    s.num_tasks = j.value("tasks", s.num_tasks);
    s.num_runs = j.value("runs", s.num_runs);
    s.num_subjects = j.value("subjects", s.num_subjects);
    s.num_visits = j.value("visits", s.num_visits);
    if (j.contains("truth")) {
      for (const auto& t : j["truth"]) s.truth.push_back({t.at("kappa").get<double>(), t.at("tau").get<double>()});
    } else {
      s.truth.assign(static_cast<std::size_t>(std::max(s.num_tasks, 0)), default_truth());
    }
    if (j.contains("ar")) {
      const auto coefs = j["ar"].get<std::vector<double>>();
      s.ar = Eigen::Map<const Eigen::VectorXd>(coefs.data(), static_cast<Eigen::Index>(coefs.size()));
    }
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.baseline = j.value("baseline", s.baseline);
    s.drift = j.value("drift", s.drift);
    s.independent_runs = j.value("independent_runs", s.independent_runs);
    s.deviation_scale = j.value("deviation_scale", s.deviation_scale);
    s.visit_noise_ratio = j.value("visit_noise_ratio", s.visit_noise_ratio);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("simulation config: ") + e.what());
  }
  s.validate();
  return s;
}

std::string sim_spec_to_json(const SimSpec& s) {
  nlohmann::ordered_json j;
  j["mesh"] = {{"kind", s.mesh.kind}, {"rows", s.mesh.rows}, {"cols", s.mesh.cols},
               {"spacing", s.mesh.spacing}, {"level", s.mesh.level}, {"radius", s.mesh.radius}};
  j["paradigm"] = {{"tr", s.paradigm.tr}, {"volumes", s.paradigm.num_volumes},
                   {"block", s.paradigm.block_duration}, {"rest", s.paradigm.rest_duration}};
  j["tasks"] = s.num_tasks;
  j["runs"] = s.num_runs;
  j["subjects"] = s.num_subjects;
  j["visits"] = s.num_visits;
  j["truth"] = nlohmann::ordered_json::array();
  for (const auto& h : s.truth) j["truth"].push_back({{"kappa", h.kappa}, {"tau", h.tau}});
  j["ar"] = std::vector<double>(s.ar.data(), s.ar.data() + s.ar.size());
  j["noise_sd"] = s.noise_sd;
  j["baseline"] = s.baseline;
  j["drift"] = s.drift;
  j["independent_runs"] = s.independent_runs;
  j["deviation_scale"] = s.deviation_scale;
  j["visit_noise_ratio"] = s.visit_noise_ratio;
  j["seed"] = s.seed;
  return j.dump(2) + "\n";
}

SurfaceMesh make_mesh(const MeshSpec& spec) {
  std::vector<Eigen::Vector3d> verts;
  std::vector<Triangle> tris;
  if (spec.kind == "grid") {
    if (spec.rows < 2 || spec.cols < 2) throw ConfigError("grid needs rows, cols >= 2");
    for (int i = 0; i < spec.rows; ++i)
      for (int j = 0; j < spec.cols; ++j) verts.emplace_back(j * spec.spacing, i * spec.spacing, 0.0);
    for (int i = 0; i + 1 < spec.rows; ++i) {
      for (int j = 0; j + 1 < spec.cols; ++j) {
        const int a = i * spec.cols + j, b = a + 1, c = a + spec.cols, d = c + 1;
        tris.push_back({a, b, d});
        tris.push_back({a, d, c});
      }
    }
    return SurfaceMesh(std::move(verts), std::move(tris));
  }
  if (spec.kind != "icosphere") throw ConfigError("unknown mesh kind '" + spec.kind + "'");
  if (spec.level < 0) throw ConfigError("icosphere level must be non-negative");
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  verts = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
           {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  tris = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
          {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
          {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (auto& v : verts) v.normalize();
  for (int l = 0; l < spec.level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<Triangle> next;
    next.reserve(tris.size() * 4);
    for (const auto& t : tris) {
      const int ab = mid(t[0], t[1]), bc = mid(t[1], t[2]), ca = mid(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    tris = std::move(next);
  }
  for (auto& v : verts) v *= spec.radius;
  return SurfaceMesh(std::move(verts), std::move(tris));
}

TaskParadigm block_paradigm(const BlockParadigmSpec& spec, int num_tasks) {
  TaskParadigm p;
  p.tr = spec.tr;
  p.num_volumes = spec.num_volumes;
  p.events.resize(static_cast<std::size_t>(num_tasks));
  for (int k = 0; k < num_tasks; ++k) p.task_names.push_back("task" + std::to_string(k + 1));
  const double end = spec.tr * spec.num_volumes;
  const double slot = spec.block_duration + spec.rest_duration;
  double onset = spec.rest_duration;
  for (int i = 0; onset < end; ++i, onset += slot) {
    p.events[static_cast<std::size_t>(i % num_tasks)].push_back({onset, std::min(spec.block_duration, end - onset)});
  }
  p.validate();
  return p;
}

Eigen::VectorXd simulate_ar(const Eigen::VectorXd& coefficients, double innovation_sd, int length,
                            Rng& rng) {
  const int p = static_cast<int>(coefficients.size());
  const int burn = p == 0 ? 0 : 500 + 10 * p;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd x(burn + length);
  for (int t = 0; t < x.size(); ++t) {
    double v = innovation_sd * normal(rng);
    for (int i = 1; i <= p && i <= t; ++i) v += coefficients[i - 1] * x[t - i];
    x[t] = v;
  }
  return x.tail(length);
}

SimulatedSession simulate_session(const SimSpec& spec, int jobs) {
  spec.validate();
  SimulatedSession out;
  out.mesh = make_mesh(spec.mesh);
  out.paradigm = block_paradigm(spec.paradigm, spec.num_tasks);
  const SpdeOperator spde(assemble_fem(out.mesh));
  const FieldSampler sampler(spde, spec.truth);
  const RunGenerator gen(spec, out.paradigm);
  const std::uint64_t field_seed = derive_seed(spec.seed, 3);
  const std::uint64_t noise_seed = derive_seed(spec.seed, 4);
  const auto K = static_cast<std::uint64_t>(spec.num_tasks);
  out.runs.resize(static_cast<std::size_t>(spec.num_runs));
  parallel_for(out.runs.size(), jobs, [&](std::size_t j) {
    const std::uint64_t field_run = spec.independent_runs ? j : 0;
    const Eigen::MatrixXd beta = sampler.draw(field_seed, field_run * K);
    out.runs[j] = gen.make(beta, derive_seed(noise_seed, j));
    out.runs[j].session.meta = {"1", "1", std::to_string(j + 1)};
  });
  return out;
}

SimulatedPopulation simulate_population(const SimSpec& spec, int jobs) {
  spec.validate();
  SimulatedPopulation pop;
  pop.mesh = make_mesh(spec.mesh);
  pop.paradigm = block_paradigm(spec.paradigm, spec.num_tasks);
  const SpdeOperator spde(assemble_fem(pop.mesh));
  const FieldSampler sampler(spde, spec.truth);
  const RunGenerator gen(spec, pop.paradigm);
  pop.group_mean = sampler.draw(derive_seed(spec.seed, 1), 0);
  const std::uint64_t subject_root = derive_seed(spec.seed, 2);
  const auto K = static_cast<std::uint64_t>(spec.num_tasks);
  const double visit_scale = spec.deviation_scale * std::sqrt(spec.visit_noise_ratio);
  pop.subjects.resize(static_cast<std::size_t>(spec.num_subjects));
  parallel_for(pop.subjects.size(), jobs, [&](std::size_t m) {
    const std::uint64_t seed = derive_seed(subject_root, m);
    SimulatedSubject& subj = pop.subjects[m];
    subj.beta = pop.group_mean + spec.deviation_scale * sampler.draw(seed, 0);
    subj.visits.resize(static_cast<std::size_t>(spec.num_visits));
    for (int v = 0; v < spec.num_visits; ++v) {
      const Eigen::MatrixXd visit_beta = subj.beta + visit_scale * sampler.draw(seed, 1000 + v * K);
      for (int j = 0; j < spec.num_runs; ++j) {
        const std::uint64_t noise_seed =
            derive_seed(seed, 100000 + static_cast<std::uint64_t>(v * spec.num_runs + j));
        SimulatedRun run = gen.make(visit_beta, noise_seed);
        run.session.meta = {std::to_string(m + 1), std::to_string(v + 1), std::to_string(j + 1)};
        subj.visits[static_cast<std::size_t>(v)].push_back(std::move(run));
      }
    }
  });
  return pop;
}

SimulatedPopulation simulate_dataset(const SimSpec& spec, int jobs) {
  if (spec.num_subjects > 1 || spec.num_visits > 1) return simulate_population(spec, jobs);
  SimulatedSession s = simulate_session(spec, jobs);
  SimulatedPopulation pop;
  pop.mesh = std::move(s.mesh);
  pop.paradigm = std::move(s.paradigm);
  pop.group_mean = s.runs.front().beta;
  SimulatedSubject subj;
  subj.beta = pop.group_mean;
  subj.visits.push_back(std::move(s.runs));
  pop.subjects.push_back(std::move(subj));
  return pop;
}

void write_population(const std::filesystem::path& dir, const SimulatedPopulation& pop,
                      const SimSpec& spec) {
  write_mesh(dir / "mesh.txt", pop.mesh);
  io::write_text(dir / "config.json", sim_spec_to_json(spec));
  io::write_matrix(dir / "group_mean.txt", pop.group_mean);
  for (std::size_t m = 0; m < pop.subjects.size(); ++m) {
    const auto& subj = pop.subjects[m];
    const auto sub_dir = dir / numbered("sub", static_cast<int>(m + 1), 3);
    io::write_matrix(sub_dir / "beta_subject.txt", subj.beta);
    for (std::size_t v = 0; v < subj.visits.size(); ++v) {
      for (std::size_t j = 0; j < subj.visits[v].size(); ++j) {
        const auto& run = subj.visits[v][j];
        const auto run_dir = sub_dir / numbered("visit", static_cast<int>(v + 1), 1) /
                             numbered("run", static_cast<int>(j + 1), 1);
        io::write_matrix(run_dir / "bold.txt", run.session.bold);
        io::write_matrix(run_dir / "beta_true.txt", run.beta);
        write_paradigm(run_dir / "paradigm.txt", pop.paradigm);
        if (run.session.nuisance.size() > 0) io::write_matrix(run_dir / "nuisance.txt", run.session.nuisance);
      }
    }
  }
}

}  // namespace sbglm
