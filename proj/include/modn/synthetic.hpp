#pragma once

#include <cstdint>

#include <nlohmann/json.hpp>

#include "modn/data.hpp"

namespace modn {

enum class LabelRule {
  logistic,   // y ~ Bernoulli(sigmoid(w.x + b + noise))
  threshold,  // y = [w.x + b + noise > 0]
  xor_pair,   // y = [x_a > 0] xor [x_b > 0] on a pair of continuous features
};

/// Generative description of a synthetic consultation table.
///
/// Continuous features are N(0, 1), binary features Bernoulli(0.5) and
/// categorical features uniform over n_levels levels. Each target draws a
/// sparse weight vector: every feature is active with probability
/// weight_density (at least one always is) and active weights are
/// N(0, weight_scale^2). Binary answers contribute w * (2x - 1) and
/// categorical answers a per-level weight centred to mean zero. Missingness
/// removes each answer independently with probability `missingness`; labels
/// are computed before removal. Features are grouped `group_size` at a time
/// into simultaneity groups.
struct SyntheticSpec {
  int n_records = 2000;
  int n_continuous = 4;
  int n_binary = 3;
  int n_categorical = 3;
  int n_levels = 3;
  int n_targets = 3;
  LabelRule rule = LabelRule::logistic;
  double missingness = 0.0;
  double noise = 0.0;
  double weight_density = 0.5;
  double weight_scale = 2.0;
  int group_size = 3;
  std::uint64_t seed = 1;

  int n_features() const { return n_continuous + n_binary + n_categorical; }
  /// Throws ConfigError when counts are < 1 (per-kind counts may be 0 as
  /// long as the total is >= 1) or rates fall outside [0, 1].
  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

/// Known generative rule, recorded as JSON in DatasetTable::provenance.
struct SyntheticTruth {
  /// weights[target][feature_id] = list of per-encoded-unit weights
  /// (1 entry for continuous/binary, n_levels for categorical).
  std::map<std::string, std::map<std::string, std::vector<double>>> weights;
  std::map<std::string, double> bias;
  std::map<std::string, std::pair<std::string, std::string>> xor_features;

  /// Noise-free logit of target for a fully observed record.
  double logit(const std::string& target, const ConsultationRecord& record,
               const std::vector<FeatureSchema>& schema) const;
};

DatasetTable generate_synthetic(const SyntheticSpec& spec);
SyntheticTruth synthetic_truth(const DatasetTable& table);

}  // namespace modn
