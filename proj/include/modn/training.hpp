#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modn/autodiff.hpp"
#include "modn/data.hpp"
#include "modn/metrics.hpp"
#include "modn/model.hpp"
#include "modn/optimizer.hpp"

namespace modn {

enum class StepWeights { uniform, final_only };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  OptimizerConfig optimizer;
  int state_dim = 32;
  int hidden_width = 0;  // 0: 2 * state_dim
  StepWeights step_weights = StepWeights::uniform;
  /// Also supervise the decoders on S0 before any answer.
  bool supervise_initial_state = true;
  std::uint64_t shuffle_seed = 0;
  /// Stop after this many epochs without a validation-loss improvement.
  int patience = 20;
  double threshold = 0.5;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Parameters whose values must not change during training.
struct FreezeMask {
  std::set<std::string> frozen;

  static FreezeMask everything(const ModnModel& model);
  /// Throws ConfigError naming the first parameter the model doesn't have.
  void validate(const ModnModel& model) const;
};

struct LossReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<std::map<std::string, double>> val_macro_f1;
  int best_epoch = -1;

  std::size_t epochs_run() const { return train_loss.size(); }
};

struct TrainResult {
  ModnModel model;
  LossReport report;
};

struct LossOptions {
  StepWeights weights = StepWeights::uniform;
  bool include_initial = true;
};

/// Sum over steps and targets of BCE(p_t(d), label_d), recorded on tape so
/// that it differentiates into S0 and every applied encoder and decoder.
/// Targets without a label in the record contribute nothing.
Var stepwise_loss(ModnModel& model, const ConsultationRecord& record, const LossOptions& options, Tape& tape);

/// Permutes answers within each simultaneity group: the positions held by a
/// group keep holding that group, filled in a seeded random order.
ConsultationRecord shuffle_simultaneous(const ConsultationRecord& record, std::uint64_t seed);

/// Normalization stats from train_set and a freshly initialised model over
/// its schema (seeded by config.shuffle_seed unless model_seed is given).
ModnModel prepare_model(const DatasetTable& train_set, const TrainConfig& config, std::uint64_t model_seed);

/// Mini-batch training with per-epoch shuffling of record order and of
/// simultaneous question groups. Returns the parameters of the epoch with
/// the lowest validation loss (training loss when val_set is empty).
TrainResult train(ModnModel model, const DatasetTable& train_set, const DatasetTable& val_set,
                  const TrainConfig& config, const FreezeMask& mask = {});

/// Ports source, adds fresh encoders for new_features (normalized on
/// target_train) and trains every parameter on the target data.
ModnModel fine_tune(const ModnModel& source, const DatasetTable& target_train, const DatasetTable& target_val,
                    const std::vector<FeatureSchema>& new_features, const TrainConfig& config);

/// As fine_tune, but S0, every ported encoder and every decoder stay frozen;
/// only the new encoders learn.
ModnModel modular_update(const ModnModel& source, const DatasetTable& target_train,
                         const DatasetTable& target_val, const std::vector<FeatureSchema>& new_features,
                         const TrainConfig& config);

/// Mean per-record stepwise loss without gradient bookkeeping on params.
double mean_loss(ModnModel& model, const DatasetTable& data, const LossOptions& options);

/// Final-step probabilities of every record. Every record must carry a label
/// for every model target.
PredictionSet predict(const ModnModel& model, const DatasetTable& data, double threshold = 0.5,
                      const EncoderObserver& observer = {});

}  // namespace modn
