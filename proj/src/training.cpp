#include "modn/training.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "modn/errors.hpp"
#include "modn/metrics.hpp"
#include "modn/random.hpp"

namespace modn {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (state_dim < 1) throw ConfigError("state_dim must be >= 1");
  if (hidden_width < 0) throw ConfigError("hidden_width must be >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  optimizer.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"optimizer", c.optimizer},
                     {"state_dim", c.state_dim},
                     {"hidden_width", c.hidden_width},
                     {"step_loss_weights", c.step_weights == StepWeights::uniform ? "uniform" : "final_only"},
                     {"supervise_initial_state", c.supervise_initial_state},
                     {"shuffle_seed", c.shuffle_seed},
                     {"patience", c.patience},
                     {"threshold", c.threshold}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("optimizer")) j.at("optimizer").get_to(c.optimizer);
  c.state_dim = j.value("state_dim", c.state_dim);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  if (j.contains("step_loss_weights")) {
    const auto w = j.at("step_loss_weights").get<std::string>();
    if (w == "uniform") {
      c.step_weights = StepWeights::uniform;
    } else if (w == "final_only") {
      c.step_weights = StepWeights::final_only;
    } else {
      throw ConfigError("unknown step_loss_weights '" + w + "'");
    }
  }
  c.supervise_initial_state = j.value("supervise_initial_state", c.supervise_initial_state);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
  c.patience = j.value("patience", c.patience);
  c.threshold = j.value("threshold", c.threshold);
  c.validate();
}

FreezeMask FreezeMask::everything(const ModnModel& model) {
  FreezeMask mask;
  for (const auto& [name, entry] : model.params.entries()) mask.frozen.insert(name);
  return mask;
}

void FreezeMask::validate(const ModnModel& model) const {
  for (const auto& name : frozen) {
    if (!model.params.contains(name)) throw ConfigError("freeze mask names unknown parameter '" + name + "'");
  }
}

namespace {

/// Parameter bindings of a whole model.
struct BoundModel {
  ParamStore::Entry* initial = nullptr;
  std::map<std::string, MlpBinding> encoders;
  std::vector<MlpBinding> decoders;  // model.targets order
};

BoundModel bind_model(ModnModel& model) {
  BoundModel b;
  b.initial = &model.params.at(ModnModel::initial_state_name());
  for (const auto& [id, spec] : model.encoders) {
    b.encoders.emplace(id, bind_mlp(spec, model.params, ModnModel::encoder_prefix(id)));
  }
  for (const auto& t : model.targets) {
    b.decoders.push_back(bind_mlp(model.decoders.at(t), model.params, ModnModel::decoder_prefix(t)));
  }
  return b;
}

struct EncodedRecord {
  std::vector<const MlpBinding*> encoders;
  std::vector<Tensor> answers;
  std::vector<int> groups;
  std::vector<int> labels;  // -1 when absent; model.targets order
};

EncodedRecord encode_record(const ModnModel& model, const BoundModel& bound, const ConsultationRecord& record) {
  EncodedRecord out;
  for (const Answer& a : record.answers) {
    auto it = bound.encoders.find(a.feature_id);
    if (it == bound.encoders.end()) throw MissingModuleError("encoder", a.feature_id);
    out.encoders.push_back(&it->second);
    out.answers.push_back(encode_answer(model, a.feature_id, a.value));
    out.groups.push_back(a.group);
  }
  for (const auto& t : model.targets) {
    auto it = record.labels.find(t);
    out.labels.push_back(it == record.labels.end() ? -1 : it->second);
  }
  return out;
}

/// Order of answer positions after permuting within simultaneity groups.
std::vector<std::size_t> group_permutation(const std::vector<int>& groups, Rng& rng) {
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::map<int, std::vector<std::size_t>> slots;
  for (std::size_t i = 0; i < groups.size(); ++i) slots[groups[i]].push_back(i);
  for (auto& [group, positions] : slots) {
    if (positions.size() < 2) continue;
    std::vector<std::size_t> members = positions;
    rng.shuffle(members.begin(), members.end());
    for (std::size_t k = 0; k < positions.size(); ++k) order[positions[k]] = members[k];
  }
  return order;
}

Var record_loss(const BoundModel& bound, const EncodedRecord& rec, const std::vector<std::size_t>& order,
                const LossOptions& options, Tape& tape) {
  Var state = tape.param(*bound.initial);
  std::vector<Var> supervised;
  const std::size_t steps = order.size();
  if (options.weights == StepWeights::uniform && options.include_initial) supervised.push_back(state);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t i = order[k];
    Var input = concat_cols(state, tape.constant(rec.answers[i]));
    state = add(state, mlp_forward(*rec.encoders[i], input, tape));
    if (options.weights == StepWeights::uniform) supervised.push_back(state);
  }
  if (options.weights == StepWeights::final_only && (steps > 0 || options.include_initial)) {
    supervised.push_back(state);
  }
  Var total = tape.constant(Tensor::Zero(1, 1));
  if (supervised.empty()) return total;
  Var stacked = supervised.size() == 1 ? supervised.front() : stack_rows(supervised);
  const Eigen::Index n = stacked.rows();
  for (std::size_t d = 0; d < bound.decoders.size(); ++d) {
    if (rec.labels[d] < 0) continue;
    Var logits = mlp_logits(bound.decoders[d], stacked, tape);
    total = add(total, bce_with_logits(logits, Tensor::Constant(n, 1, static_cast<double>(rec.labels[d]))));
  }
  return total;
}

std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return order;
}

double mean_encoded_loss(const BoundModel& bound, const std::vector<EncodedRecord>& data, const LossOptions& options) {
  if (data.empty()) return 0.0;
  Tape tape;
  double total = 0.0;
  for (const auto& rec : data) {
    tape.clear();
    total += record_loss(bound, rec, identity_order(rec.answers.size()), options, tape).value()(0, 0);
  }
  return total / static_cast<double>(data.size());
}

std::vector<EncodedRecord> encode_all(const ModnModel& model, const BoundModel& bound, const DatasetTable& data) {
  std::vector<EncodedRecord> out;
  out.reserve(data.records.size());
  for (const auto& r : data.records) out.push_back(encode_record(model, bound, r));
  return out;
}

}  // namespace

Var stepwise_loss(ModnModel& model, const ConsultationRecord& record, const LossOptions& options, Tape& tape) {
  const BoundModel bound = bind_model(model);
  const EncodedRecord rec = encode_record(model, bound, record);
  return record_loss(bound, rec, identity_order(rec.answers.size()), options, tape);
}

double mean_loss(ModnModel& model, const DatasetTable& data, const LossOptions& options) {
  const BoundModel bound = bind_model(model);
  return mean_encoded_loss(bound, encode_all(model, bound, data), options);
}

ConsultationRecord shuffle_simultaneous(const ConsultationRecord& record, std::uint64_t seed) {
  std::vector<int> groups;
  for (const auto& a : record.answers) groups.push_back(a.group);
  Rng rng(seed);
  const auto order = group_permutation(groups, rng);
  ConsultationRecord out{record.record_id, {}, record.labels};
  for (std::size_t i : order) out.answers.push_back(record.answers[i]);
  return out;
}

ModnModel prepare_model(const DatasetTable& train_set, const TrainConfig& config, std::uint64_t model_seed) {
  config.validate();
  ModelOptions options;
  options.state_dim = config.state_dim;
  options.hidden_width = config.hidden_width;
  options.seed = model_seed;
  ModnModel model = init_model(train_set.schema, train_set.targets, options);
  model.normalization = compute_normalization(train_set);
  return model;
}

PredictionSet predict(const ModnModel& model, const DatasetTable& data, double threshold,
                      const EncoderObserver& observer) {
  PredictionSet out;
  out.targets = model.targets;
  out.threshold = threshold;
  out.probabilities.resize(static_cast<Eigen::Index>(data.records.size()), static_cast<Eigen::Index>(model.targets.size()));
  out.labels.resize(out.probabilities.rows(), out.probabilities.cols());
  for (std::size_t r = 0; r < data.records.size(); ++r) {
    const auto& rec = data.records[r];
    out.record_ids.push_back(rec.record_id);
    StateVector state = initial_state(model);
    for (const Answer& a : rec.answers) {
      if (!model.has_encoder(a.feature_id)) throw MissingModuleError("encoder", a.feature_id);
      if (observer) observer(a.feature_id);
      state = encode_step(model, state, a.feature_id, encode_answer(model, a.feature_id, a.value));
    }
    out.probabilities.row(static_cast<Eigen::Index>(r)) = decode_all(model, state);
    for (std::size_t d = 0; d < model.targets.size(); ++d) {
      auto it = rec.labels.find(model.targets[d]);
      if (it == rec.labels.end()) {
        throw DataError("record '" + rec.record_id + "' has no label for '" + model.targets[d] + "'");
      }
      out.labels(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = it->second;
    }
  }
  return out;
}

TrainResult train(ModnModel model, const DatasetTable& train_set, const DatasetTable& val_set,
                  const TrainConfig& config, const FreezeMask& mask) {
  config.validate();
  if (train_set.records.empty()) throw ConfigError("training set is empty");
  mask.validate(model);

  const BoundModel bound = bind_model(model);
  const std::vector<EncodedRecord> train_data = encode_all(model, bound, train_set);
  const std::vector<EncodedRecord> val_data = encode_all(model, bound, val_set);
  const LossOptions loss_options{config.step_weights, config.supervise_initial_state};

  Optimizer optimizer(config.optimizer);
  model.params.zero_grad();
  LossReport report;
  std::map<std::string, Tensor> best_values;
  double best_loss = std::numeric_limits<double>::infinity();
  Tape tape;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.shuffle_seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> record_order = identity_order(train_data.size());
    rng.shuffle(record_order.begin(), record_order.end());

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < record_order.size(); start += config.batch_size) {
      const std::size_t end = std::min(record_order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double weight = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const EncodedRecord& rec = train_data[record_order[k]];
        const auto order = group_permutation(rec.groups, rng);
        tape.clear();
        Var loss = record_loss(bound, rec, order, loss_options, tape);
        epoch_loss += loss.value()(0, 0);
        tape.backward(scale(loss, weight));
      }
      optimizer.step(model.params, mask.frozen);
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(train_data.size()));

    const double val_loss = val_data.empty() ? report.train_loss.back() : mean_encoded_loss(bound, val_data, loss_options);
    report.val_loss.push_back(val_loss);
    std::map<std::string, double> f1;
    if (!val_set.records.empty()) {
      const PredictionSet preds = predict(model, val_set, config.threshold);
      for (const auto& t : model.targets) f1[t] = macro_f1(preds, t);
    }
    report.val_macro_f1.push_back(std::move(f1));

    if (val_loss < best_loss) {
      best_loss = val_loss;
      report.best_epoch = epoch;
      for (const auto& [name, entry] : model.params.entries()) best_values[name] = entry.value;
    } else if (epoch - report.best_epoch >= config.patience) {
      break;
    }
  }
  for (auto& [name, entry] : model.params.entries()) entry.value = best_values.at(name);
  model.params.zero_grad();
  return {std::move(model), std::move(report)};
}

namespace {

ModnModel extend_with(const ModnModel& source, const DatasetTable& target_train,
                      const std::vector<FeatureSchema>& new_features) {
  ModnModel model = source;
  std::set<std::string> added;
  for (const auto& f : new_features) {
    if (source.has_encoder(f.id)) {
      throw SchemaError("new feature '" + f.id + "' already has an encoder in the source model");
    }
    add_encoder(model, f);
    added.insert(f.id);
  }
  const NormalizationStats fresh = compute_normalization(restrict_features(target_train, added));
  for (const auto& [id, stats] : fresh) model.normalization[id] = stats;
  return model;
}

}  // namespace

ModnModel fine_tune(const ModnModel& source, const DatasetTable& target_train, const DatasetTable& target_val,
                    const std::vector<FeatureSchema>& new_features, const TrainConfig& config) {
  ModnModel model = extend_with(source, target_train, new_features);
  return train(std::move(model), target_train, target_val, config).model;
}

ModnModel modular_update(const ModnModel& source, const DatasetTable& target_train,
                         const DatasetTable& target_val, const std::vector<FeatureSchema>& new_features,
                         const TrainConfig& config) {
  ModnModel model = extend_with(source, target_train, new_features);
  const FreezeMask mask = FreezeMask::everything(source);
  return train(std::move(model), target_train, target_val, config, mask).model;
}

}  // namespace modn
