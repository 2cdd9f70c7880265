#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace modn {

/// Per-record, per-target probabilities and true labels for one evaluation.
struct PredictionSet {
  std::vector<std::string> targets;
  std::vector<std::string> record_ids;
  Eigen::MatrixXd probabilities;  // records x targets, in (0, 1)
  Eigen::MatrixXi labels;         // records x targets, {0, 1}
  double threshold = 0.5;

  /// probability >= threshold
  Eigen::MatrixXi decisions() const;
  std::size_t target_index(const std::string& target_id) const;
};

/// F1 of the class `positive` (1 or 0). When the class never occurs in
/// either decisions or labels the score is 1; otherwise an empty
/// denominator scores 0.
double class_f1(std::span<const int> decisions, std::span<const int> labels, int positive);

/// Unweighted mean of the presence and absence F1 scores.
double macro_f1(std::span<const int> decisions, std::span<const int> labels);
double macro_f1(const PredictionSet& predictions, const std::string& target_id);

/// macro_f1 for every target, in predictions.targets order.
std::vector<double> per_target_macro_f1(const PredictionSet& predictions);

/// Unweighted mean of per-target scores.
double overall_f1(std::span<const double> per_target);

struct MeanCi {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;

  bool operator==(const MeanCi&) const = default;
};

/// Student-t confidence interval over independent scores. Throws
/// ContractError for fewer than 2 scores.
MeanCi mean_ci(std::span<const double> scores, double level = 0.95);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  /// Differences had zero variance: t is reported as 0 and p as 1.
  bool degenerate = false;

  bool operator==(const TTestResult&) const = default;
};

/// Two-sided paired t-test on a[i] - b[i]. Throws ContractError on length
/// mismatch or fewer than 2 pairs.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// Variance-corrected 5x2cv paired t-test: differences ordered as
/// (rep0 fold0, rep0 fold1, rep1 fold0, ...). 5 degrees of freedom.
TTestResult corrected_5x2cv_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace modn
