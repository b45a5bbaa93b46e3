#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace sbglm {

struct IccResult {
  double icc = 0.0;
  double total_var = 0.0;
  double within_var = 0.0;
  double between_var = 0.0;
  bool truncated = false;     // negative between-subject variance set to 0
  bool zero_variance = false; // total variance was 0; icc defined as 0
};

/// ICC from an M x 2 matrix of repeated measurements, variances with the
/// 1/n convention.
IccResult icc(const Eigen::MatrixXd& b);

/// Per-vertex ICC from two N x M maps (vertex x subject) of repeated estimates.
Eigen::VectorXd icc_map(const Eigen::MatrixXd& visit1, const Eigen::MatrixXd& visit2);

struct IccBins {
  double fair = 0.0;       // [0.4, 0.6)
  double good = 0.0;       // [0.6, 0.75)
  double excellent = 0.0;  // [0.75, 1]
};

IccBins icc_quality_bins(const Eigen::VectorXd& icc_values, const std::vector<bool>& mask = {});

struct DiceResult {
  double value = 0.0;
  bool both_empty = false;
};

DiceResult dice(const std::vector<bool>& a, const std::vector<bool>& b);

struct ProxyAccuracy {
  double mse = 0.0;
  double pearson = 0.0;
};

ProxyAccuracy proxy_accuracy(const Eigen::VectorXd& estimate, const Eigen::VectorXd& proxy,
                             const std::vector<bool>& mask = {});

struct PairedDifference {
  double mean_difference = 0.0;
  double t = 0.0;
  double p_value = 1.0;
  bool zero_variance = false;
};

/// Two-sided paired t-test of first - second.
PairedDifference paired_dice_difference(std::span<const double> first,
                                        std::span<const double> second);

struct BootstrapInterval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Percentile bootstrap interval for the mean.
BootstrapInterval bootstrap_mean_interval(std::span<const double> values, double level,
                                          int resamples, unsigned long long seed);

}  // namespace sbglm
