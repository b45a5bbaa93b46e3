#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "sbglm/error.hpp"
#include "sbglm/reliability.hpp"

using namespace sbglm;

TEST_CASE("ICC hand examples") {
  Eigen::MatrixXd b(2, 2);
  b << 1, 2, 2, 1;
  const IccResult r = icc(b);
  CHECK(r.icc == 0.0);
  CHECK(r.truncated);
  CHECK(r.between_var < 0.0);

  Eigen::MatrixXd same(4, 2);
  same << 1, 1, 2, 2, 5, 5, -1, -1;
  CHECK(icc(same).icc == doctest::Approx(1.0));

  // total = (var(x1) + var(x2)) / 2, within = var(x1 - x2) / 2 with 1/n variances
  Eigen::MatrixXd c(3, 2);
  c << 1, 2, 3, 3, 5, 7;
  const double total = 0.5 * (8.0 / 3.0 + 42.0 / 9.0);
  const double within = 0.5 * (2.0 / 3.0);
  CHECK(icc(c).icc == doctest::Approx((total - within) / total));

  Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(3, 2, 4.0);
  CHECK(icc(flat).zero_variance);
  CHECK(icc(flat).icc == 0.0);
  CHECK_THROWS_AS(icc(Eigen::MatrixXd::Zero(3, 3)), ConfigError);
}

TEST_CASE("ICC map and quality bins") {
  Eigen::MatrixXd v1(2, 3), v2(2, 3);
  v1 << 1, 2, 3, 1, 2, 3;
  v2 << 1, 2, 3, 3, 2, 1;
  const Eigen::VectorXd m = icc_map(v1, v2);
  CHECK(m[0] == doctest::Approx(1.0));
  CHECK(m[1] == 0.0);
  Eigen::VectorXd values(6);
  values << 0.1, 0.4, 0.59, 0.6, 0.75, 1.0;
  const IccBins bins = icc_quality_bins(values);
  CHECK(bins.fair == doctest::Approx(2.0 / 6));
  CHECK(bins.good == doctest::Approx(1.0 / 6));
  CHECK(bins.excellent == doctest::Approx(2.0 / 6));
  const IccBins masked = icc_quality_bins(values, {false, false, false, false, true, true});
  CHECK(masked.excellent == doctest::Approx(1.0));
}

TEST_CASE("Dice coefficient") {
  const DiceResult same = dice({true, true, false}, {true, true, false});
  CHECK(same.value == 1.0);
  CHECK(dice({true, false}, {false, true}).value == 0.0);
  // |A| = 4, |B| = 6, |A and B| = 3
  const std::vector<bool> a{true, true, true, true, false, false, false};
  const std::vector<bool> b{true, true, true, false, true, true, true};
  CHECK(dice(a, b).value == doctest::Approx(0.6));
  const DiceResult empty = dice({false, false}, {false, false});
  CHECK(empty.value == 1.0);
  CHECK(empty.both_empty);
  CHECK_THROWS_AS(dice({true}, {true, false}), ConfigError);
}

TEST_CASE("proxy accuracy") {
  Eigen::VectorXd est(4), proxy(4);
  est << 1, 2, 3, 4;
  proxy << 2, 4, 6, 8;
  const ProxyAccuracy acc = proxy_accuracy(est, proxy);
  CHECK(acc.mse == doctest::Approx(7.5));
  CHECK(acc.pearson == doctest::Approx(1.0));
  const ProxyAccuracy masked = proxy_accuracy(est, proxy, {true, true, false, false});
  CHECK(masked.mse == doctest::Approx(2.5));
}

TEST_CASE("paired Dice difference and bootstrap interval") {
  const std::vector<double> a{0.8, 0.7, 0.9, 0.85, 0.75};
  const std::vector<double> b{0.6, 0.65, 0.7, 0.6, 0.7};
  const PairedDifference d = paired_dice_difference(a, b);
  CHECK(d.mean_difference == doctest::Approx(0.15));
  CHECK(d.t > 0.0);
  CHECK(d.p_value < 0.05);
  CHECK(paired_dice_difference(a, a).zero_variance);
  const BootstrapInterval ci = bootstrap_mean_interval(a, 0.95, 2000, 1);
  CHECK(ci.lower <= 0.8);
  CHECK(ci.upper >= 0.8);
  CHECK(ci.lower >= 0.7);
  const BootstrapInterval again = bootstrap_mean_interval(a, 0.95, 2000, 1);
  CHECK(again.lower == ci.lower);
}
