#include "sbglm/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "sbglm/error.hpp"
#include "sbglm/rng.hpp"

namespace sbglm {

namespace {

double population_variance(const Eigen::VectorXd& x) {
  return (x.array() - x.mean()).square().mean();
}

bool in_mask(const std::vector<bool>& mask, int v) { return mask.empty() || mask[v]; }

}  // namespace

IccResult icc(const Eigen::MatrixXd& b) {
  if (b.cols() != 2 || b.rows() < 2) throw ConfigError("icc: need an M x 2 matrix with M >= 2");
  if (!b.allFinite()) throw ConfigError("icc: non-finite input");
  IccResult r;
  r.total_var = 0.5 * (population_variance(b.col(0)) + population_variance(b.col(1)));
  r.within_var = 0.5 * population_variance(b.col(0) - b.col(1));
  r.between_var = r.total_var - r.within_var;
  if (!(r.total_var > 0.0)) {
    r.zero_variance = true;
    return r;
  }
  if (r.between_var < 0.0) {
    r.truncated = true;
    return r;
  }
  r.icc = std::min(r.between_var / r.total_var, 1.0);
  return r;
}

Eigen::VectorXd icc_map(const Eigen::MatrixXd& visit1, const Eigen::MatrixXd& visit2) {
  if (visit1.rows() != visit2.rows() || visit1.cols() != visit2.cols()) {
    throw ConfigError("icc_map: visit matrices differ in shape");
  }
  Eigen::VectorXd out(visit1.rows());
  Eigen::MatrixXd b(visit1.cols(), 2);
  for (Eigen::Index v = 0; v < visit1.rows(); ++v) {
    b.col(0) = visit1.row(v).transpose();
    b.col(1) = visit2.row(v).transpose();
    out[v] = icc(b).icc;
  }
  return out;
}

IccBins icc_quality_bins(const Eigen::VectorXd& icc_values, const std::vector<bool>& mask) {
  IccBins bins;
  int n = 0;
  for (int v = 0; v < icc_values.size(); ++v) {
    if (!in_mask(mask, v)) continue;
    ++n;
    const double x = icc_values[v];
    if (x >= 0.75) bins.excellent += 1.0;
    else if (x >= 0.6) bins.good += 1.0;
    else if (x >= 0.4) bins.fair += 1.0;
  }
  if (n > 0) {
    bins.fair /= n;
    bins.good /= n;
    bins.excellent /= n;
  }
  return bins;
}

DiceResult dice(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw ConfigError("dice: maps differ in length");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
    both += a[i] && b[i];
  }
  if (na + nb == 0) return {1.0, true};
  return {2.0 * static_cast<double>(both) / static_cast<double>(na + nb), false};
}

ProxyAccuracy proxy_accuracy(const Eigen::VectorXd& estimate, const Eigen::VectorXd& proxy,
                             const std::vector<bool>& mask) {
  if (estimate.size() != proxy.size()) throw ConfigError("proxy_accuracy: length mismatch");
  std::vector<double> e, p;
  for (int v = 0; v < estimate.size(); ++v) {
    if (!in_mask(mask, v)) continue;
    e.push_back(estimate[v]);
    p.push_back(proxy[v]);
  }
  if (e.size() < 2) throw ConfigError("proxy_accuracy: need at least two vertices");
  const Eigen::Map<const Eigen::VectorXd> ev(e.data(), static_cast<Eigen::Index>(e.size()));
  const Eigen::Map<const Eigen::VectorXd> pv(p.data(), static_cast<Eigen::Index>(p.size()));
  ProxyAccuracy r;
  r.mse = (ev - pv).squaredNorm() / static_cast<double>(e.size());
  const Eigen::VectorXd ec = ev.array() - ev.mean();
  const Eigen::VectorXd pc = pv.array() - pv.mean();
  const double denom = std::sqrt(ec.squaredNorm() * pc.squaredNorm());
  r.pearson = denom > 0.0 ? ec.dot(pc) / denom : std::nan("");
  return r;
}

PairedDifference paired_dice_difference(std::span<const double> first,
                                        std::span<const double> second) {
  if (first.size() != second.size() || first.size() < 2) {
    throw ConfigError("paired_dice_difference: need two equal-length samples of size >= 2");
  }
  const auto n = static_cast<double>(first.size());
  std::vector<double> d(first.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = first[i] - second[i];
  double mean = 0.0;
  for (double x : d) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  PairedDifference r;
  r.mean_difference = mean;
  if (!(sd > 0.0)) {
    r.zero_variance = true;
    r.p_value = 1.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(n));
  const boost::math::students_t_distribution<double> dist(n - 1.0);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

BootstrapInterval bootstrap_mean_interval(std::span<const double> values, double level,
                                          int resamples, unsigned long long seed) {
  if (values.empty() || resamples < 1 || !(level > 0.0 && level < 1.0)) {
    throw ConfigError("bootstrap_mean_interval: invalid arguments");
  }
  Rng rng = make_rng(seed, 0);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += values[pick(rng)];
    m = acc / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const double tail = 0.5 * (1.0 - level);
  auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(means.size() - 1)));
    return means[idx];
  };
  return {at(tail), at(1.0 - tail)};
}

}  // namespace sbglm
