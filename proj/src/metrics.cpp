#include "modn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "modn/errors.hpp"

namespace modn {

Eigen::MatrixXi PredictionSet::decisions() const {
  return (probabilities.array() >= threshold).cast<int>().matrix();
}

std::size_t PredictionSet::target_index(const std::string& target_id) const {
  auto it = std::find(targets.begin(), targets.end(), target_id);
  if (it == targets.end()) throw ContractError("unknown target '" + target_id + "'");
  return static_cast<std::size_t>(it - targets.begin());
}

double class_f1(std::span<const int> decisions, std::span<const int> labels, int positive) {
  if (decisions.size() != labels.size()) throw ContractError("class_f1: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const bool pred = decisions[i] == positive;
    const bool truth = labels[i] == positive;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double macro_f1(std::span<const int> decisions, std::span<const int> labels) {
  if (decisions.empty()) throw ContractError("macro_f1 needs at least one record");
  return 0.5 * (class_f1(decisions, labels, 1) + class_f1(decisions, labels, 0));
}

double macro_f1(const PredictionSet& predictions, const std::string& target_id) {
  const std::size_t d = predictions.target_index(target_id);
  const Eigen::MatrixXi decided = predictions.decisions();
  const Eigen::VectorXi dec = decided.col(d);
  const Eigen::VectorXi lab = predictions.labels.col(d);
  return macro_f1(std::span<const int>(dec.data(), dec.size()), std::span<const int>(lab.data(), lab.size()));
}

std::vector<double> per_target_macro_f1(const PredictionSet& predictions) {
  std::vector<double> out;
  for (const auto& t : predictions.targets) out.push_back(macro_f1(predictions, t));
  return out;
}

double overall_f1(std::span<const double> per_target) {
  if (per_target.empty()) throw ContractError("overall_f1 needs at least one target");
  return std::accumulate(per_target.begin(), per_target.end(), 0.0) / static_cast<double>(per_target.size());
}

namespace {

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x, double mean) {
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size() - 1);
}

// Spread within a few ulps of the magnitude: rounding noise, not variance.
bool numerically_constant(std::span<const double> x) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double scale = std::max(std::abs(*lo), std::abs(*hi));
  return *hi - *lo <= 4.0 * std::numeric_limits<double>::epsilon() * scale;
}

double two_sided_p(double t, double df) {
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace

MeanCi mean_ci(std::span<const double> scores, double level) {
  if (scores.size() < 2) throw ContractError("mean_ci needs at least 2 scores");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  const double n = static_cast<double>(scores.size());
  const double mean = mean_of(scores);
  if (numerically_constant(scores)) return {mean, mean, mean};
  const double sd = std::sqrt(sample_variance(scores, mean));
  boost::math::students_t dist(n - 1.0);
  const double q = boost::math::quantile(dist, 0.5 + level / 2.0);
  const double half = q * sd / std::sqrt(n);
  return {mean, mean - half, mean + half};
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("paired_t_test: length mismatch");
  if (a.size() < 2) throw ContractError("paired_t_test needs at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double mean = mean_of(d);
  const double var = sample_variance(d, mean);
  TTestResult r;
  r.df = n - 1.0;
  if (var == 0.0 || numerically_constant(d)) {
    r.degenerate = true;
    return r;
  }
  r.t = mean / std::sqrt(var / n);
  r.p = two_sided_p(r.t, r.df);
  return r;
}

TTestResult corrected_5x2cv_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != 10 || b.size() != 10) throw ContractError("5x2cv test needs exactly 10 paired scores");
  std::vector<double> d(10);
  for (std::size_t i = 0; i < 10; ++i) d[i] = a[i] - b[i];
  double var_sum = 0.0;
  for (std::size_t rep = 0; rep < 5; ++rep) {
    const double d1 = a[2 * rep] - b[2 * rep];
    const double d2 = a[2 * rep + 1] - b[2 * rep + 1];
    const double m = 0.5 * (d1 + d2);
    var_sum += (d1 - m) * (d1 - m) + (d2 - m) * (d2 - m);
  }
  TTestResult r;
  r.df = 5.0;
  if (var_sum == 0.0 || numerically_constant(d)) {
    r.degenerate = true;
    return r;
  }
  r.t = (a[0] - b[0]) / std::sqrt(var_sum / 5.0);
  r.p = two_sided_p(r.t, r.df);
  return r;
}

}  // namespace modn
