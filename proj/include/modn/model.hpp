#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "modn/autodiff.hpp"
#include "modn/data.hpp"
#include "modn/mlp.hpp"

namespace modn {

using StateVector = Eigen::RowVectorXd;

struct ModelOptions {
  int state_dim = 32;
  /// Width of the single hidden layer of every encoder and decoder;
  /// 0 means 2 * state_dim.
  int hidden_width = 0;
  HiddenActivation hidden = HiddenActivation::tanh;
  std::uint64_t seed = 0;

  int resolved_hidden_width() const { return hidden_width > 0 ? hidden_width : 2 * state_dim; }
};

/// Trainable initial state, one residual encoder per feature and one sigmoid
/// decoder per target, all stored in a single ParamStore:
///
///   state/S0                       1 x state_dim
///   encoder/<feature>/W<i>, b<i>   input = state ++ encoded answer, output = state delta
///   decoder/<target>/W<i>, b<i>    input = state, output = 1 logit
///
/// Immutable once trained; all inference functions below are const and may
/// run concurrently.
struct ModnModel {
  static constexpr std::uint32_t kFormatVersion = 1;

  ModelOptions options;
  std::vector<FeatureSchema> features;
  std::vector<std::string> targets;
  std::map<std::string, MlpSpec> encoders;
  std::map<std::string, MlpSpec> decoders;
  NormalizationStats normalization;
  ParamStore params;
  std::uint64_t schema_fingerprint = 0;
  std::uint32_t version = kFormatVersion;

  int state_dim() const { return options.state_dim; }
  bool has_encoder(const std::string& feature_id) const { return encoders.count(feature_id) != 0; }
  /// Throws MissingModuleError("encoder", id) if the model has no such feature.
  const FeatureSchema& feature(const std::string& feature_id) const;
  std::size_t target_index(const std::string& target_id) const;
  std::set<std::string> feature_ids() const;
  void refresh_fingerprint();
  /// Names of every parameter belonging to the encoder of feature_id.
  std::vector<std::string> encoder_param_names(const std::string& feature_id) const;

  static std::string initial_state_name() { return "state/S0"; }
  static std::string encoder_prefix(const std::string& id) { return "encoder/" + id + "/"; }
  static std::string decoder_prefix(const std::string& id) { return "decoder/" + id + "/"; }
};

/// One encoder per feature and one decoder per target, S0 = 0. Parameter
/// draws depend only on (options.seed, module id).
ModnModel init_model(const std::vector<FeatureSchema>& schema, const std::vector<std::string>& targets,
                     const ModelOptions& options);

/// Adds a freshly initialised encoder for feature (seeded by
/// (options.seed, feature id)). Throws SchemaError if it already exists.
void add_encoder(ModnModel& model, const FeatureSchema& feature);

/// Encodes a raw answer with the model's frozen normalization stats.
Eigen::RowVectorXd encode_answer(const ModnModel& model, const std::string& feature_id, const Value& value);

StateVector initial_state(const ModnModel& model);

/// s + encoder(s ++ answer). Throws MissingModuleError for unknown features.
StateVector encode_step(const ModnModel& model, const StateVector& state, const std::string& feature_id,
                        const Eigen::RowVectorXd& encoded_answer);

double decode(const ModnModel& model, const StateVector& state, const std::string& target_id);
/// Probabilities for every target, in model.targets order.
Eigen::RowVectorXd decode_all(const ModnModel& model, const StateVector& state);

struct TrajectoryStep {
  int step = 0;
  std::string feature_id;  // "initial" for step 0
  std::optional<Value> answer;
  Eigen::RowVectorXd probabilities;
};

/// Diagnosis probabilities after every answer; row 0 decodes S0.
struct Trajectory {
  std::vector<std::string> targets;
  std::vector<TrajectoryStep> steps;

  /// (steps) x (targets) probability matrix.
  Eigen::MatrixXd matrix() const;
};

/// Called with each feature id as its encoder is applied.
using EncoderObserver = std::function<void(const std::string& feature_id)>;

/// Applies the encoders of the answered features in record order; features
/// absent from the record are never touched.
Trajectory run_consultation(const ModnModel& model, const ConsultationRecord& record,
                            const EncoderObserver& observer = {});

/// Answers reduced to (feature_id, value) in order; convenience for callers
/// that don't carry simultaneity groups.
Trajectory run_consultation(const ModnModel& model,
                            const std::vector<std::pair<std::string, Value>>& answers);

/// JSON shape shared by the CLI and the HTTP service:
///   {"targets": [...], "threshold": 0.5,
///    "steps": [{"step", "feature_id", "question", "answer", "probabilities": [...]}]}
nlohmann::json trajectory_to_json(const ModnModel& model, const Trajectory& trajectory,
                                  double threshold = 0.5);

}  // namespace modn
