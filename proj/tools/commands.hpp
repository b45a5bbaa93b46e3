#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sbglm::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kNumericError = 3, kNotConverged = 4 };

struct SimulateOptions {
  std::string config;
  std::string out;
  std::int64_t seed = -1;  // overrides the config seed when >= 0
  int jobs = 1;
};

struct FitOptions {
  std::string mesh;
  std::vector<std::string> runs;  // directories with bold.txt, paradigm.txt[, nuisance.txt]
  std::string out;
  std::string model = "bayes";
  int ar_order = 6;
  double ar_fwhm = 6.0;
  double smooth_fwhm = -1.0;      // < 0: 6 mm for classical, 0 for bayes
  double tr = 0.72;
  bool percent = false;           // BOLD already in percent signal change
  std::uint64_t seed = 0;
  int max_evaluations = 500;
  int starts = 3;
  int jobs = 1;
};

struct ActivateOptions {
  std::string fit;
  std::string out;
  std::string method;             // empty: excursion for Bayesian fits, bonferroni otherwise
  std::vector<double> gammas{0.0, 0.5, 1.0};
  double alpha = 0.01;
  std::vector<int> tasks;         // 1-based; empty means all
  std::uint64_t seed = 0;
  int n_mc = 50000;
  int permutations = 1000;
  int jobs = 1;
};

struct GroupOptions {
  std::vector<std::string> fits;
  std::string out;
  std::string contrast;           // file with M*J*K weights
  int average_task = 0;           // 1-based; used when no contrast file is given
};

struct ReliabilityOptions {
  std::vector<std::string> visit1;
  std::vector<std::string> visit2;
  std::vector<std::string> maps1;
  std::vector<std::string> maps2;
  std::vector<std::string> proxy;
  std::string mask;
  std::string out;
};

struct DistortOptions {
  std::string surface_a;
  std::string surface_b;
  std::string out;
};

int cmd_simulate(const SimulateOptions& o);
int cmd_fit(const FitOptions& o);
int cmd_activate(const ActivateOptions& o);
int cmd_group(const GroupOptions& o);
int cmd_reliability(const ReliabilityOptions& o);
int cmd_distort(const DistortOptions& o);

/// Parses argv, dispatches and maps exceptions to exit codes.
int run(int argc, char** argv);

}  // namespace sbglm::cli
