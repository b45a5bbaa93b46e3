#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sbglm/mesh.hpp"
#include "sbglm/rng.hpp"
#include "sbglm/signal.hpp"
#include "sbglm/spde.hpp"

namespace sbglm {

struct MeshSpec {
  std::string kind = "grid";  // "grid" or "icosphere"
  int rows = 10;
  int cols = 10;
  double spacing = 2.0;       // mm between grid nodes
  int level = 2;              // icosphere subdivisions
  double radius = 50.0;       // icosphere radius, mm
};

struct BlockParadigmSpec {
  double tr = 0.72;
  int num_volumes = 200;
  double block_duration = 12.0;  // seconds
  double rest_duration = 12.0;   // seconds after each block
};

/// Simulation configuration. Amplitudes are in percent signal change.
struct SimSpec {
  MeshSpec mesh;
  BlockParadigmSpec paradigm;
  int num_tasks = 2;
  int num_runs = 1;
  int num_subjects = 1;
  int num_visits = 1;
  std::vector<SpdeHyper> truth;      // one per task; group mean field prior
  Eigen::VectorXd ar;                // AR coefficients of the noise, same at every vertex
  double noise_sd = 1.0;             // innovation sd
  double baseline = 1000.0;          // raw signal level; 0 writes percent-signal data
  double drift = 0.0;                // amplitude of a linear drift, percent units
  bool independent_runs = true;      // single-subject runs draw separate fields
  double deviation_scale = 1.0;      // subject deviation = scale * draw from the task prior
  double visit_noise_ratio = 1.0;    // visit noise variance / deviation variance
  std::uint64_t seed = 1;

  void validate() const;
};

SimSpec parse_sim_spec(const std::string& json_text);
std::string sim_spec_to_json(const SimSpec& spec);

SurfaceMesh make_mesh(const MeshSpec& spec);

/// Blocks cycle through the tasks in order, each followed by rest.
TaskParadigm block_paradigm(const BlockParadigmSpec& spec, int num_tasks);

struct SimulatedRun {
  SessionData session;   // raw BOLD (or percent if baseline == 0), shared design
  Eigen::MatrixXd beta;  // N x K true amplitudes
};

struct SimulatedSession {
  SurfaceMesh mesh;
  TaskParadigm paradigm;
  std::vector<SimulatedRun> runs;
};

/// One subject: beta_k drawn from the SPDE prior with the true
/// hyperparameters, BOLD = X beta + AR noise at every vertex.
SimulatedSession simulate_session(const SimSpec& spec, int jobs = 1);

struct SimulatedSubject {
  Eigen::MatrixXd beta;                          // subject-level N x K
  std::vector<std::vector<SimulatedRun>> visits; // [visit][run]
};

struct SimulatedPopulation {
  SurfaceMesh mesh;
  TaskParadigm paradigm;
  Eigen::MatrixXd group_mean;  // N x K
  std::vector<SimulatedSubject> subjects;
};

/// Group mean + subject deviation + visit noise, all SPDE draws; runs of a
/// visit share its field and differ only in timeseries noise.
SimulatedPopulation simulate_population(const SimSpec& spec, int jobs = 1);

/// simulate_population, except that a single subject with a single visit
/// goes through simulate_session so its runs follow `independent_runs`.
SimulatedPopulation simulate_dataset(const SimSpec& spec, int jobs = 1);

/// AR(p) series with a burn-in so that it starts near stationarity.
Eigen::VectorXd simulate_ar(const Eigen::VectorXd& coefficients, double innovation_sd, int length,
                            Rng& rng);

/// Writes mesh.txt, config.json and sub-XXX/visit-V/run-R/{bold,paradigm,
/// nuisance,beta_true}.txt below `dir`.
void write_population(const std::filesystem::path& dir, const SimulatedPopulation& pop,
                      const SimSpec& spec);

}  // namespace sbglm
