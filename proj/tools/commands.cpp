#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>

#include <json.hpp>

#include "sbglm/activation.hpp"
#include "sbglm/error.hpp"
#include "sbglm/inference.hpp"
#include "sbglm/io.hpp"
#include "sbglm/mesh.hpp"
#include "sbglm/reliability.hpp"
#include "sbglm/signal.hpp"
#include "sbglm/simulate.hpp"
#include "sbglm/spde.hpp"

namespace sbglm::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path, const std::string& what) {
  io::require_exists(path, what);
  try {
    return json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_manifest(const fs::path& dir, const std::string& command, const json& arguments,
                    const std::vector<std::string>& inputs) {
  json m;
  m["tool"] = "sbglm";
  m["version"] = kVersion;
  m["command"] = command;
  m["arguments"] = arguments;
  m["inputs"] = inputs;
  write_json(dir / "manifest.json", m);
}

std::string run_tag(const char* prefix, int j) { return std::string(prefix) + "-run" + std::to_string(j + 1) + ".tsv"; }

// ---------------------------------------------------------------------------
// Loading and preprocessing
// ---------------------------------------------------------------------------

struct Prepared {
  SurfaceMesh mesh;
  std::vector<SessionData> whitened;
  std::vector<std::string> task_names;
  int excluded = 0;
  int ar_flagged = 0;
  int ar_reduced = 0;
};

Prepared prepare(const FitOptions& o, double smooth_fwhm) {
  if (o.runs.empty()) throw ConfigError("fit: at least one --run directory is required");
  io::require_exists(o.mesh, "mesh");
  Prepared p;
  p.mesh = read_mesh(o.mesh);
  const int N = p.mesh.num_vertices();
  std::vector<SessionData> conditioned;
  for (const auto& dir_name : o.runs) {
    const fs::path dir(dir_name);
    io::require_exists(dir / "bold.txt", "BOLD data");
    io::require_exists(dir / "paradigm.txt", "paradigm");
    SessionData s;
    s.bold = io::read_matrix(dir / "bold.txt");
    if (s.bold.cols() != N) {
      throw ConfigError((dir / "bold.txt").string() + " has " + std::to_string(s.bold.cols()) +
                        " columns, mesh has " + std::to_string(N) + " vertices");
    }
    const int T = static_cast<int>(s.bold.rows());
    const TaskParadigm paradigm = read_paradigm(dir / "paradigm.txt", T, o.tr);
    if (p.task_names.empty()) p.task_names = paradigm.task_names;
    else if (p.task_names != paradigm.task_names) throw ConfigError("runs declare different tasks");
    const TaskDesign design = build_design(paradigm);
    s.design = design.tasks;
    Eigen::MatrixXd extra;
    if (fs::exists(dir / "nuisance.txt")) {
      extra = io::read_matrix(dir / "nuisance.txt");
      if (extra.rows() != T) throw ConfigError((dir / "nuisance.txt").string() + " has the wrong number of rows");
    }
    s.nuisance.resize(T, extra.cols() + design.derivatives.cols());
    if (extra.cols() > 0) s.nuisance.leftCols(extra.cols()) = extra;
    s.nuisance.rightCols(design.derivatives.cols()) = design.derivatives;
    s.percent_signal = o.percent;
    conditioned.push_back(condition(s));
  }
  if (smooth_fwhm > 0.0) {
    const SurfaceSmoother smoother(p.mesh, smooth_fwhm);
    for (auto& s : conditioned) s.bold = smoother.apply_rows(s.bold);
  }
  std::vector<ArModel> models;
  for (const auto& s : conditioned) {
    const ClassicalFit ols = fit_classical(s);
    models.push_back(fit_ar_yule_walker(ols.residuals, o.ar_order, s.excluded));
  }
  const ArModel ar = regularize_ar(models, p.mesh, o.ar_fwhm);
  std::vector<bool> excluded(N, false);
  for (const auto& s : conditioned) {
    WhiteningReport report;
    p.whitened.push_back(prewhiten(s, ar, &report));
    for (int v = 0; v < N; ++v) {
      p.ar_reduced += report.reduced[v];
      excluded[v] = excluded[v] || s.is_excluded(v);
    }
  }
  p.excluded = static_cast<int>(std::count(excluded.begin(), excluded.end(), true));
  p.ar_flagged = static_cast<int>(std::count(ar.flagged.begin(), ar.flagged.end(), true));
  return p;
}

FitOptions fit_options_from(const json& f) {
  FitOptions o;
  o.mesh = f.at("mesh").get<std::string>();
  o.runs = f.at("runs").get<std::vector<std::string>>();
  o.model = f.at("model").get<std::string>();
  o.ar_order = f.at("ar_order").get<int>();
  o.ar_fwhm = f.at("ar_fwhm").get<double>();
  o.smooth_fwhm = f.at("smooth_fwhm").get<double>();
  o.tr = f.at("tr").get<double>();
  o.percent = f.at("percent").get<bool>();
  return o;
}

json hyper_to_json(const Hyperparams& h) {
  json j;
  j["tasks"] = json::array();
  for (const auto& t : h.tasks) j["tasks"].push_back({{"kappa", t.kappa}, {"tau", t.tau}});
  j["noise_variance"] = h.noise_variance;
  return j;
}

Hyperparams hyper_from_json(const json& j) {
  Hyperparams h;
  for (const auto& t : j.at("tasks")) h.tasks.push_back({t.at("kappa").get<double>(), t.at("tau").get<double>()});
  h.noise_variance = j.at("noise_variance").get<double>();
  h.validate();
  return h;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

// A fitted subject as stored on disk.
struct SubjectFit {
  fs::path dir;
  json info;
  SurfaceMesh mesh;
  int num_runs = 0;
  int num_tasks = 0;
  bool bayes = false;
};

SubjectFit open_fit(const fs::path& dir) {
  SubjectFit f;
  f.dir = dir;
  f.info = read_json(dir / "fit.json", "fit directory");
  const auto type = f.info.value("type", std::string());
  if (type != "subject") throw ConfigError(dir.string() + " is not a subject fit directory");
  f.bayes = f.info.at("model").get<std::string>() == "bayes";
  f.num_runs = static_cast<int>(f.info.at("runs").size());
  f.num_tasks = static_cast<int>(f.info.at("tasks").size());
  io::require_exists(dir / "mesh.txt", "fit mesh");
  f.mesh = read_mesh(dir / "mesh.txt");
  return f;
}

PosteriorField load_posterior(const SubjectFit& f) {
  if (!f.bayes) throw ConfigError(f.dir.string() + " holds a classical fit");
  std::vector<RunStatistics> stats;
  for (int j = 0; j < f.num_runs; ++j) {
    io::require_exists(f.dir / run_tag("stats", j), "run statistics");
    stats.push_back(read_run_statistics(f.dir / run_tag("stats", j)));
  }
  const Hyperparams theta = hyper_from_json(read_json(f.dir / "theta.json", "hyperparameters").at("hyper"));
  const SpdeOperator spde(assemble_fem(f.mesh));
  return posterior(stats, spde, theta);
}

ClassicalFit load_classical(const SubjectFit& f, int run) {
  ClassicalFit c;
  const auto beta = run < 0 ? f.dir / "beta.tsv" : f.dir / run_tag("beta", run);
  const auto se = run < 0 ? f.dir / "se.tsv" : f.dir / run_tag("se", run);
  io::require_exists(beta, "classical estimates");
  io::require_exists(se, "classical standard errors");
  c.beta = io::read_matrix(beta);
  c.se = io::read_matrix(se);
  c.dof = f.info.at("dof").get<double>();
  c.defined.resize(static_cast<std::size_t>(c.beta.rows()));
  for (Eigen::Index v = 0; v < c.beta.rows(); ++v)
    c.defined[v] = c.beta.row(v).allFinite() && c.se.row(v).allFinite();
  return c;
}

Eigen::MatrixXd column(const Eigen::MatrixXd& m, int k) { return m.col(k); }

}  // namespace

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const SimulateOptions& o) {
  io::require_exists(o.config, "simulation config");
  SimSpec spec = parse_sim_spec(io::read_text(o.config));
  if (o.seed >= 0) spec.seed = static_cast<std::uint64_t>(o.seed);
  const SimulatedPopulation pop = simulate_dataset(spec, o.jobs);
  write_population(o.out, pop, spec);
  json args;
  args["config"] = o.config;
  args["seed"] = spec.seed;
  write_manifest(o.out, "simulate", args, {o.config});
  return kOk;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

int cmd_fit(const FitOptions& o) {
  if (o.model != "bayes" && o.model != "classical") throw ConfigError("--model must be bayes or classical");
  if (o.ar_order < 0) throw ConfigError("--ar-order must be non-negative");
  const bool bayes = o.model == "bayes";
  const double smooth = o.smooth_fwhm >= 0.0 ? o.smooth_fwhm : (bayes ? 0.0 : 6.0);
  const Prepared data = prepare(o, smooth);
  const fs::path out(o.out);
  const int J = static_cast<int>(data.whitened.size());

  json info;
  info["type"] = "subject";
  info["model"] = o.model;
  info["mesh"] = o.mesh;
  info["runs"] = o.runs;
  info["tasks"] = data.task_names;
  info["tr"] = o.tr;
  info["percent"] = o.percent;
  info["ar_order"] = o.ar_order;
  info["ar_fwhm"] = o.ar_fwhm;
  info["smooth_fwhm"] = smooth;
  info["num_vertices"] = data.mesh.num_vertices();
  info["excluded_vertices"] = data.excluded;
  info["ar_flagged_vertices"] = data.ar_flagged;
  info["ar_reduced_vertices"] = data.ar_reduced;
  write_mesh(out / "mesh.txt", data.mesh);

  int status = kOk;
  if (!bayes) {
    const MultiRunClassical fit = fit_classical_multi(data.whitened);
    for (int j = 0; j < J; ++j) {
      io::write_matrix(out / run_tag("beta", j), fit.runs[j].beta);
      io::write_matrix(out / run_tag("se", j), fit.runs[j].se);
    }
    io::write_matrix(out / "beta.tsv", fit.average.beta);
    io::write_matrix(out / "se.tsv", fit.average.se);
    info["dof"] = fit.runs.front().dof;
    info["dof_combined"] = fit.average.dof;
  } else {
    std::vector<RunStatistics> stats;
    for (int j = 0; j < J; ++j) {
      stats.push_back(run_statistics(data.whitened[j]));
      write_run_statistics(out / run_tag("stats", j), stats.back());
    }
    const SpdeOperator spde(assemble_fem(data.mesh));
    OptimizerOptions opt;
    opt.seed = o.seed;
    opt.max_evaluations = o.max_evaluations;
    opt.starts = o.starts;
    const OptimizationResult est = optimize_hyperparams(stats, spde, mesh_diameter(data.mesh), opt);
    const PosteriorField post = posterior(stats, spde, est.hyper);
    for (int j = 0; j < J; ++j) {
      io::write_matrix(out / run_tag("beta", j), post.mean(j));
      io::write_matrix(out / run_tag("sd", j), post.sd(j));
    }
    io::write_matrix(out / "beta.tsv", post.mean());
    io::write_matrix(out / "sd.tsv", post.sd());
    json theta;
    theta["hyper"] = hyper_to_json(est.hyper);
    theta["log_theta"] = to_std(est.hyper.to_log());
    theta["log_marginal"] = est.log_marginal;
    theta["converged"] = est.converged;
    write_json(out / "theta.json", theta);
    json log;
    log["evaluations"] = est.evaluations;
    log["starts"] = json::array();
    for (const auto& t : est.trace) {
      log["starts"].push_back({{"start", t.start},
                               {"initial_log", to_std(t.initial_log)},
                               {"final_log", to_std(t.final_log)},
                               {"log_marginal", t.log_marginal},
                               {"evaluations", t.evaluations},
                               {"converged", t.converged}});
    }
    write_json(out / "log.json", log);
    info["converged"] = est.converged;
    if (!est.converged) {
      std::cerr << "warning: hyperparameter optimization did not converge; results written\n";
      status = kNotConverged;
    }
  }
  write_json(out / "fit.json", info);

  json args = info;
  args.erase("type");
  args["seed"] = o.seed;
  args["max_evaluations"] = o.max_evaluations;
  args["starts"] = o.starts;
  std::vector<std::string> inputs{o.mesh};
  for (const auto& r : o.runs) inputs.push_back(r);
  write_manifest(out, "fit", args, inputs);
  return status;
}

// ---------------------------------------------------------------------------
// activate
// ---------------------------------------------------------------------------

namespace {

// One field to threshold: either a posterior or classical p-values.
struct Target {
  std::string label;  // directory name
  std::shared_ptr<FieldPosterior> posterior;
  std::shared_ptr<ClassicalFit> classical;  // single column
  int task = 0;
};

std::shared_ptr<SessionData> stacked_whitened(const SubjectFit& f) {
  FitOptions opt = fit_options_from(f.info);
  const Prepared data = prepare(opt, opt.smooth_fwhm);
  auto out = std::make_shared<SessionData>(data.whitened.front());
  for (std::size_t j = 1; j < data.whitened.size(); ++j) {
    const SessionData& s = data.whitened[j];
    const Eigen::Index T0 = out->bold.rows();
    out->bold.conservativeResize(T0 + s.bold.rows(), Eigen::NoChange);
    out->bold.bottomRows(s.bold.rows()) = s.bold;
    out->design.conservativeResize(T0 + s.design.rows(), Eigen::NoChange);
    out->design.bottomRows(s.design.rows()) = s.design;
    for (int v = 0; v < out->num_vertices(); ++v) {
      Eigen::MatrixXd& x = out->vertex_designs[v];
      x.conservativeResize(T0 + s.bold.rows(), Eigen::NoChange);
      x.bottomRows(s.bold.rows()) = s.design_at(v);
      if (s.is_excluded(v)) out->excluded[v] = true;
    }
  }
  return out;
}

ActivationMap threshold_classical(const ClassicalFit& fit, ActivationMethod method, double gamma,
                                  double alpha) {
  const TTestResult t = classical_ttest(fit, 0, gamma);
  ActivationMap map = method == ActivationMethod::fdr ? correct_fdr(t.p, alpha, t.defined)
                                                      : correct_bonferroni(t.p, alpha, t.defined);
  map.gamma = gamma;
  return map;
}

}  // namespace

int cmd_activate(const ActivateOptions& o) {
  if (o.gammas.empty()) throw ConfigError("--gamma needs at least one value");
  for (std::size_t i = 0; i < o.gammas.size(); ++i) {
    if (o.gammas[i] < 0.0 || (i > 0 && o.gammas[i] <= o.gammas[i - 1])) {
      throw ConfigError("--gamma values must be non-negative and ascending");
    }
  }
  const fs::path fit_dir(o.fit);
  const json info = read_json(fit_dir / "fit.json", "fit directory");
  const std::string type = info.value("type", std::string());
  const bool bayes = info.at("model").get<std::string>() == "bayes";
  const ActivationMethod method =
      o.method.empty() ? (bayes ? ActivationMethod::excursion : ActivationMethod::bonferroni) : parse_method(o.method);
  if (bayes != (method == ActivationMethod::excursion)) {
    throw ConfigError("method " + to_string(method) + " does not apply to a " +
                      info.at("model").get<std::string>() + " fit");
  }

  std::vector<Target> targets;
  std::shared_ptr<SessionData> whitened;
  if (type == "subject") {
    const SubjectFit f = open_fit(fit_dir);
    std::vector<int> tasks = o.tasks;
    if (tasks.empty())
      for (int k = 1; k <= f.num_tasks; ++k) tasks.push_back(k);
    std::shared_ptr<PosteriorField> post;
    std::shared_ptr<ClassicalFit> fit;
    if (bayes) post = std::make_shared<PosteriorField>(load_posterior(f));
    else fit = std::make_shared<ClassicalFit>(load_classical(f, -1));
    if (method == ActivationMethod::permutation) whitened = stacked_whitened(f);
    for (int k : tasks) {
      if (k < 1 || k > f.num_tasks) throw ConfigError("--task " + std::to_string(k) + " out of range");
      Target t;
      t.label = "task-" + std::to_string(k);
      t.task = k - 1;
      if (bayes) {
        t.posterior = std::make_shared<FieldPosterior>(post->run_average(k - 1));
      } else {
        t.classical = std::make_shared<ClassicalFit>(*fit);
        t.classical->beta = column(fit->beta, k - 1);
        t.classical->se = column(fit->se, k - 1);
      }
      targets.push_back(std::move(t));
    }
  } else if (type == "group") {
    std::vector<SubjectFit> subjects;
    for (const auto& d : info.at("subjects")) subjects.push_back(open_fit(d.get<std::string>()));
    const auto w = info.at("weights").get<std::vector<double>>();
    GroupContrast contrast;
    contrast.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    Target t;
    t.label = "contrast";
    if (bayes) {
      std::vector<PosteriorField> posts;
      for (const auto& s : subjects) posts.push_back(load_posterior(s));
      t.posterior = std::make_shared<FieldPosterior>(group_posterior(posts, contrast));
    } else {
      if (method == ActivationMethod::permutation) throw ConfigError("permutation applies to subject fits only");
      io::require_exists(fit_dir / "beta.tsv", "group estimates");
      t.classical = std::make_shared<ClassicalFit>();
      t.classical->beta = io::read_matrix(fit_dir / "beta.tsv");
      t.classical->se = io::read_matrix(fit_dir / "se.tsv");
      t.classical->dof = info.at("dof").get<double>();
      for (Eigen::Index v = 0; v < t.classical->beta.rows(); ++v)
        t.classical->defined.push_back(std::isfinite(t.classical->beta(v, 0)) && std::isfinite(t.classical->se(v, 0)));
    }
    targets.push_back(std::move(t));
  } else {
    throw ConfigError(o.fit + " is not a fit directory");
  }

  const fs::path out(o.out);
  std::string summary = "target\tgamma\tmethod\tnum_active\tthreshold\n";
  for (const auto& t : targets) {
    std::vector<bool> previous;
    std::vector<ActivationMap> excursions;
    if (method == ActivationMethod::excursion)
      excursions = excursion_sets(*t.posterior, o.gammas, o.alpha, {o.n_mc, o.seed, o.jobs});
    for (std::size_t gi = 0; gi < o.gammas.size(); ++gi) {
      const double gamma = o.gammas[gi];
      ActivationMap map;
      if (method == ActivationMethod::excursion) {
        map = excursions[gi];
      } else if (method == ActivationMethod::permutation) {
        map = correct_permutation(*whitened, t.task, gamma, o.alpha, {o.permutations, o.seed, o.jobs}).map;
      } else {
        map = threshold_classical(*t.classical, method, gamma, o.alpha);
      }
      if (!previous.empty()) {
        bool nested = true;
        for (std::size_t v = 0; v < previous.size(); ++v) nested = nested && (!map.active[v] || previous[v]);
        if (!nested) map.notes.push_back("map is not contained in the map at the next lower gamma");
      }
      previous = map.active;
      const std::string g = io::format_double(gamma);
      write_activation_map(out / t.label / ("gamma-" + g), map);
      summary += t.label + "\t" + g + "\t" + to_string(method) + "\t" + std::to_string(map.count()) + "\t" +
                 io::format_double(map.threshold) + "\n";
    }
  }
  io::write_text(out / "summary.tsv", summary);

  json args;
  args["fit"] = o.fit;
  args["method"] = to_string(method);
  args["gamma"] = o.gammas;
  args["alpha"] = o.alpha;
  args["tasks"] = o.tasks;
  args["seed"] = o.seed;
  args["n_mc"] = o.n_mc;
  args["permutations"] = o.permutations;
  args["whole_domain_level"] = whole_domain_level(o.alpha);
  write_manifest(out, "activate", args, {o.fit});
  return kOk;
}

// ---------------------------------------------------------------------------
// group
// ---------------------------------------------------------------------------

int cmd_group(const GroupOptions& o) {
  if (o.fits.size() < 2) throw ConfigError("group: need at least two subject fits");
  std::vector<SubjectFit> subjects;
  for (const auto& d : o.fits) subjects.push_back(open_fit(d));
  const int M = static_cast<int>(subjects.size());
  const int J = subjects.front().num_runs;
  const int K = subjects.front().num_tasks;
  const bool bayes = subjects.front().bayes;
  for (const auto& s : subjects) {
    if (s.num_runs != J || s.num_tasks != K || s.bayes != bayes ||
        s.mesh.num_vertices() != subjects.front().mesh.num_vertices()) {
      throw ConfigError("group: subject fits differ in model, runs, tasks or vertices");
    }
  }
  GroupContrast contrast;
  if (!o.contrast.empty()) {
    io::require_exists(o.contrast, "contrast file");
    const Eigen::MatrixXd w = io::read_matrix(o.contrast);
    contrast.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
    contrast.label = fs::path(o.contrast).filename().string();
  } else if (o.average_task >= 1) {
    contrast = average_task_contrast(M, J, K, o.average_task - 1);
  } else {
    throw ConfigError("group: give --contrast or --average-task");
  }
  contrast.validate(M, J, K);

  const fs::path out(o.out);
  json info;
  info["type"] = "group";
  info["model"] = bayes ? "bayes" : "classical";
  info["subjects"] = o.fits;
  info["label"] = contrast.label;
  info["weights"] = to_std(contrast.weights);
  if (bayes) {
    std::vector<PosteriorField> posts;
    for (const auto& s : subjects) posts.push_back(load_posterior(s));
    const FieldPosterior g = group_posterior(posts, contrast);
    io::write_vector(out / "beta.tsv", g.mean());
    io::write_vector(out / "sd.tsv", g.sd());
  } else {
    // per-subject contrast estimates, then a one-sample summary across subjects
    std::vector<ClassicalFit> fits;
    for (int m = 0; m < M; ++m) {
      ClassicalFit c;
      for (int j = 0; j < J; ++j) {
        const ClassicalFit run = load_classical(subjects[m], j);
        const Eigen::VectorXd w = M * contrast.weights.segment((m * J + j) * K, K);
        const Eigen::VectorXd part = run.beta * w;
        c.beta = c.beta.size() == 0 ? Eigen::MatrixXd(part) : Eigen::MatrixXd(c.beta + part);
      }
      c.se = Eigen::MatrixXd::Zero(c.beta.rows(), 1);
      c.defined.assign(static_cast<std::size_t>(c.beta.rows()), true);
      for (Eigen::Index v = 0; v < c.beta.rows(); ++v) c.defined[v] = std::isfinite(c.beta(v, 0));
      fits.push_back(std::move(c));
    }
    const ClassicalFit g = group_classical(fits);
    io::write_matrix(out / "beta.tsv", g.beta);
    io::write_matrix(out / "se.tsv", g.se);
    info["dof"] = g.dof;
  }
  write_json(out / "fit.json", info);
  json args;
  args["fits"] = o.fits;
  args["contrast"] = o.contrast;
  args["average_task"] = o.average_task;
  std::vector<std::string> inputs = o.fits;
  if (!o.contrast.empty()) inputs.push_back(o.contrast);
  write_manifest(out, "group", args, inputs);
  return kOk;
}

// ---------------------------------------------------------------------------
// reliability
// ---------------------------------------------------------------------------

int cmd_reliability(const ReliabilityOptions& o) {
  const std::size_t M = o.visit1.size();
  if (M < 2 || o.visit2.size() != M) throw ConfigError("reliability: need the same M >= 2 fits for both visits");
  if (!o.proxy.empty() && o.proxy.size() != M) throw ConfigError("reliability: one proxy fit per subject");
  if (o.maps1.size() != o.maps2.size()) throw ConfigError("reliability: map lists differ in length");
  std::vector<Eigen::MatrixXd> b1, b2;
  for (std::size_t m = 0; m < M; ++m) {
    io::require_exists(fs::path(o.visit1[m]) / "beta.tsv", "visit-1 estimates");
    io::require_exists(fs::path(o.visit2[m]) / "beta.tsv", "visit-2 estimates");
    b1.push_back(io::read_matrix(fs::path(o.visit1[m]) / "beta.tsv"));
    b2.push_back(io::read_matrix(fs::path(o.visit2[m]) / "beta.tsv"));
    if (b1.back().rows() != b1.front().rows() || b1.back().cols() != b1.front().cols() ||
        b2.back().rows() != b1.front().rows() || b2.back().cols() != b1.front().cols()) {
      throw ConfigError("reliability: estimate tables differ in shape");
    }
  }
  const auto N = b1.front().rows();
  const auto K = b1.front().cols();
  std::vector<bool> mask;
  if (!o.mask.empty()) {
    io::require_exists(o.mask, "mask");
    const Eigen::MatrixXd mk = io::read_matrix(o.mask);
    if (mk.rows() != N) throw ConfigError("reliability: mask length does not match the vertex count");
    for (Eigen::Index v = 0; v < N; ++v) mask.push_back(mk(v, 0) != 0.0);
  }

  const fs::path out(o.out);
  Eigen::MatrixXd icc_values(N, K);
  json summary;
  summary["tasks"] = json::array();
  for (Eigen::Index k = 0; k < K; ++k) {
    Eigen::MatrixXd v1(N, static_cast<Eigen::Index>(M)), v2(N, static_cast<Eigen::Index>(M));
    for (std::size_t m = 0; m < M; ++m) {
      v1.col(static_cast<Eigen::Index>(m)) = b1[m].col(k);
      v2.col(static_cast<Eigen::Index>(m)) = b2[m].col(k);
    }
    for (Eigen::Index v = 0; v < N; ++v) {
      const bool finite = v1.row(v).allFinite() && v2.row(v).allFinite();
      icc_values(v, k) = finite ? icc_map(v1.row(v), v2.row(v))[0] : std::nan("");
    }
    std::vector<bool> usable = mask;
    if (usable.empty()) usable.assign(static_cast<std::size_t>(N), true);
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index v = 0; v < N; ++v) {
      if (!std::isfinite(icc_values(v, k))) usable[v] = false;
      if (usable[v]) {
        sum += icc_values(v, k);
        ++count;
      }
    }
    const IccBins bins = icc_quality_bins(icc_values.col(k), usable);
    summary["tasks"].push_back({{"task", k + 1},
                                {"mean_icc", count > 0 ? sum / count : 0.0},
                                {"fair", bins.fair},
                                {"good", bins.good},
                                {"excellent", bins.excellent}});
  }
  io::write_matrix(out / "icc.tsv", icc_values);

  std::string metrics = "subject\ttask\tmetric\tvalue\n";
  for (std::size_t m = 0; m < o.proxy.size(); ++m) {
    io::require_exists(fs::path(o.proxy[m]) / "beta.tsv", "proxy estimates");
    const Eigen::MatrixXd proxy = io::read_matrix(fs::path(o.proxy[m]) / "beta.tsv");
    if (proxy.rows() != N || proxy.cols() != K) throw ConfigError("reliability: proxy table differs in shape");
    for (Eigen::Index k = 0; k < K; ++k) {
      std::vector<bool> use = mask;
      if (use.empty()) use.assign(static_cast<std::size_t>(N), true);
      for (Eigen::Index v = 0; v < N; ++v)
        if (!std::isfinite(b1[m](v, k)) || !std::isfinite(proxy(v, k))) use[v] = false;
      const ProxyAccuracy acc = proxy_accuracy(b1[m].col(k), proxy.col(k), use);
      const std::string prefix = std::to_string(m + 1) + "\t" + std::to_string(k + 1) + "\t";
      metrics += prefix + "mse\t" + io::format_double(acc.mse) + "\n";
      metrics += prefix + "pearson\t" + io::format_double(acc.pearson) + "\n";
    }
  }
  for (std::size_t m = 0; m < o.maps1.size(); ++m) {
    const fs::path a(o.maps1[m]), b(o.maps2[m]);
    io::require_exists(a, "activation directory");
    io::require_exists(b, "activation directory");
    std::vector<fs::path> maps;
    for (const auto& target : fs::directory_iterator(a)) {
      if (!target.is_directory()) continue;
      for (const auto& g : fs::directory_iterator(target.path()))
        if (g.is_directory()) maps.push_back(fs::relative(g.path(), a));
    }
    std::sort(maps.begin(), maps.end());
    for (const auto& rel : maps) {
      const DiceResult d = dice(read_activation_map(a / rel).active, read_activation_map(b / rel).active);
      metrics += std::to_string(m + 1) + "\t" + rel.generic_string() + "\tdice\t" + io::format_double(d.value) + "\n";
      if (d.both_empty)
        metrics += std::to_string(m + 1) + "\t" + rel.generic_string() + "\tdice_both_empty\t1\n";
    }
  }
  io::write_text(out / "metrics.tsv", metrics);
  write_json(out / "summary.json", summary);

  json args;
  args["visit1"] = o.visit1;
  args["visit2"] = o.visit2;
  args["maps1"] = o.maps1;
  args["maps2"] = o.maps2;
  args["proxy"] = o.proxy;
  args["mask"] = o.mask;
  std::vector<std::string> inputs = o.visit1;
  for (const auto* list : {&o.visit2, &o.maps1, &o.maps2, &o.proxy}) inputs.insert(inputs.end(), list->begin(), list->end());
  write_manifest(out, "reliability", args, inputs);
  return kOk;
}

// ---------------------------------------------------------------------------
// distort
// ---------------------------------------------------------------------------

int cmd_distort(const DistortOptions& o) {
  io::require_exists(o.surface_a, "surface");
  io::require_exists(o.surface_b, "surface");
  const auto ratios = edge_distance_distortion(read_mesh(o.surface_a), read_mesh(o.surface_b));
  std::string edges = "a\tb\tratio\n";
  for (const auto& r : ratios)
    edges += std::to_string(r.a) + "\t" + std::to_string(r.b) + "\t" + io::format_double(r.ratio) + "\n";
  const fs::path out(o.out);
  io::write_text(out / "edges.tsv", edges);
  const DistortionSummary s = summarize_distortion(ratios);
  json j;
  j["edges"] = ratios.size();
  j["min"] = s.min;
  j["q05"] = s.q05;
  j["q25"] = s.q25;
  j["median"] = s.median;
  j["q75"] = s.q75;
  j["q95"] = s.q95;
  j["max"] = s.max;
  write_json(out / "summary.json", j);
  write_manifest(out, "distort", {{"surface_a", o.surface_a}, {"surface_b", o.surface_b}}, {o.surface_a, o.surface_b});
  return kOk;
}

}  // namespace sbglm::cli
