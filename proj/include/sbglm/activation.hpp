#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sbglm/inference.hpp"
#include "sbglm/signal.hpp"

namespace sbglm {

enum class ActivationMethod { excursion, bonferroni, fdr, permutation };

std::string to_string(ActivationMethod m);
ActivationMethod parse_method(const std::string& name);

struct ActivationMap {
  std::vector<bool> active;
  double gamma = 0.0;
  double alpha = 0.05;
  ActivationMethod method = ActivationMethod::excursion;
  std::uint64_t seed = 0;
  double threshold = 0.0;     // statistic threshold, where the method has one
  std::string tie_breaking;   // how equal marginal probabilities were ordered
  std::vector<std::string> notes;

  int num_vertices() const { return static_cast<int>(active.size()); }
  int count() const;
};

struct ExcursionOptions {
  int n_mc = 50000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

/// Largest set, among prefixes of the vertices ordered by decreasing
/// marginal exceedance probability, whose joint posterior probability of
/// exceeding gamma is at least 1 - alpha. Joint probabilities are Monte
/// Carlo estimates over the posterior.
ActivationMap excursion_set(const FieldPosterior& post, double gamma, double alpha,
                            const ExcursionOptions& options = {});

/// Excursion sets for ascending thresholds. Each set is intersected with the
/// set at the previous threshold, so the maps are nested; a subset of a set
/// meeting the joint-probability bound still meets it.
std::vector<ActivationMap> excursion_sets(const FieldPosterior& post, std::span<const double> gammas,
                                          double alpha, const ExcursionOptions& options = {});

struct TTestResult {
  Eigen::VectorXd t;
  Eigen::VectorXd p;
  std::vector<bool> defined;  // false where se was unusable; p = 1 there
  double dof = 0.0;
};

/// One-sided test of beta > gamma for task k, t = (beta - gamma) / se.
TTestResult classical_ttest(const ClassicalFit& fit, int task, double gamma);

/// Upper-tail Student-t p-value.
double t_upper_tail(double t, double dof);

ActivationMap correct_bonferroni(const Eigen::VectorXd& pvals, double alpha,
                                 const std::vector<bool>& tested = {});
ActivationMap correct_fdr(const Eigen::VectorXd& pvals, double alpha,
                          const std::vector<bool>& tested = {});

struct PermutationOptions {
  int permutations = 1000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct PermutationResult {
  ActivationMap map;
  Eigen::VectorXd max_null;  // max-over-vertices null statistic per permutation
};

/// Max-statistic permutation test on a prewhitened session: the whitened
/// BOLD series are reordered in time (same order at every vertex).
PermutationResult correct_permutation(const SessionData& whitened, int task, double gamma,
                                      double alpha, const PermutationOptions& options = {});

struct CombinedMap {
  std::vector<bool> active;
  double level = 0.0;  // 1 - (1 - alpha)^2
};

CombinedMap combine_hemispheres(const ActivationMap& left, const ActivationMap& right,
                                double alpha);

double whole_domain_level(double alpha);

void write_activation_map(const std::filesystem::path& dir, const ActivationMap& map);
ActivationMap read_activation_map(const std::filesystem::path& dir);

}  // namespace sbglm
