#include <iostream>
#include <filesystem>

#include <CLI11.hpp>

#include "commands.hpp"
#include "sbglm/error.hpp"

namespace sbglm::cli {

int run(int argc, char** argv) {
  CLI::App app{"Surface-based spatial Bayesian GLM for task activation on triangulated meshes"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "Generate a synthetic dataset with known truth");
  s->add_option("--config", sim.config, "JSON simulation config")->required();
  s->add_option("--out", sim.out, "Output directory")->required();
  s->add_option("--seed", sim.seed, "Master seed (overrides the config)");
  s->add_option("--jobs", sim.jobs, "Worker threads")->check(CLI::PositiveNumber);

  FitOptions fit;
  auto* f = app.add_subcommand("fit", "Fit the classical or Bayesian GLM to one subject");
  f->add_option("--mesh", fit.mesh, "Mesh file")->required();
  f->add_option("--run", fit.runs, "Run directory (repeat for multi-run fits)")->required();
  f->add_option("--out", fit.out, "Output directory")->required();
  f->add_option("--model", fit.model, "bayes or classical")->check(CLI::IsMember({"bayes", "classical"}));
  f->add_option("--ar-order", fit.ar_order, "AR order of the noise model");
  f->add_option("--ar-fwhm", fit.ar_fwhm, "FWHM (mm) for smoothing AR coefficient maps");
  f->add_option("--smooth-fwhm", fit.smooth_fwhm, "FWHM (mm) for smoothing the data; default 6 classical, 0 bayes");
  f->add_option("--tr", fit.tr, "Repetition time (s) when the paradigm file has none");
  f->add_flag("--percent", fit.percent, "BOLD is already in percent signal change");
  f->add_option("--seed", fit.seed, "Seed for optimizer restarts");
  f->add_option("--max-evals", fit.max_evaluations, "Objective evaluations per optimizer start");
  f->add_option("--starts", fit.starts, "Optimizer starts");
  f->add_option("--jobs", fit.jobs, "Worker threads")->check(CLI::PositiveNumber);

  ActivateOptions act;
  auto* a = app.add_subcommand("activate", "Threshold a subject or group fit");
  a->add_option("--fit", act.fit, "Fit or group directory")->required();
  a->add_option("--out", act.out, "Output directory")->required();
  a->add_option("--method", act.method, "excursion, bonferroni, fdr or permutation");
  a->add_option("--gamma", act.gammas, "Activation thresholds in percent signal change");
  a->add_option("--alpha", act.alpha, "Significance level");
  a->add_option("--task", act.tasks, "Tasks to threshold (1-based)");
  a->add_option("--seed", act.seed, "Monte Carlo / permutation seed");
  a->add_option("--n-mc", act.n_mc, "Posterior draws for excursion sets");
  a->add_option("--permutations", act.permutations, "Permutations for the max-statistic test");
  a->add_option("--jobs", act.jobs, "Worker threads")->check(CLI::PositiveNumber);

  GroupOptions grp;
  auto* g = app.add_subcommand("group", "Combine subject fits with a group contrast");
  g->add_option("--fit", grp.fits, "Subject fit directories")->required();
  g->add_option("--out", grp.out, "Output directory")->required();
  g->add_option("--contrast", grp.contrast, "Contrast weights, index (subject * runs + run) * tasks + task");
  g->add_option("--average-task", grp.average_task, "Average one task (1-based) over subjects and runs");

  ReliabilityOptions rel;
  auto* r = app.add_subcommand("reliability", "Test-retest metrics between two visits");
  r->add_option("--visit1", rel.visit1, "Visit-1 fit directories")->required();
  r->add_option("--visit2", rel.visit2, "Visit-2 fit directories, same subject order")->required();
  r->add_option("--maps1", rel.maps1, "Visit-1 activation directories");
  r->add_option("--maps2", rel.maps2, "Visit-2 activation directories");
  r->add_option("--proxy", rel.proxy, "Fit directories used as reference for visit-1 estimates");
  r->add_option("--mask", rel.mask, "0/1 vertex mask");
  r->add_option("--out", rel.out, "Output directory")->required();

  DistortOptions dis;
  auto* d = app.add_subcommand("distort", "Edge-length distortion between two embeddings of one mesh");
  d->add_option("--a", dis.surface_a, "First surface")->required();
  d->add_option("--b", dis.surface_b, "Second surface")->required();
  d->add_option("--out", dis.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*s) return cmd_simulate(sim);
    if (*f) return cmd_fit(fit);
    if (*a) return cmd_activate(act);
    if (*g) return cmd_group(grp);
    if (*r) return cmd_reliability(rel);
    if (*d) return cmd_distort(dis);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace sbglm::cli
