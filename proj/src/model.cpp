#include "modn/model.hpp"

#include <algorithm>

#include "modn/errors.hpp"
#include "modn/random.hpp"

namespace modn {

const FeatureSchema& ModnModel::feature(const std::string& feature_id) const {
  for (const auto& f : features) {
    if (f.id == feature_id) return f;
  }
  throw MissingModuleError("encoder", feature_id);
}

std::size_t ModnModel::target_index(const std::string& target_id) const {
  auto it = std::find(targets.begin(), targets.end(), target_id);
  if (it == targets.end()) throw MissingModuleError("decoder", target_id);
  return static_cast<std::size_t>(it - targets.begin());
}

std::set<std::string> ModnModel::feature_ids() const {
  std::set<std::string> ids;
  for (const auto& f : features) ids.insert(f.id);
  return ids;
}

void ModnModel::refresh_fingerprint() { schema_fingerprint = modn::schema_fingerprint(features, targets); }

std::vector<std::string> ModnModel::encoder_param_names(const std::string& feature_id) const {
  const std::string prefix = encoder_prefix(feature_id);
  std::vector<std::string> names;
  for (auto it = params.entries().lower_bound(prefix);
       it != params.entries().end() && it->first.starts_with(prefix); ++it) {
    names.push_back(it->first);
  }
  return names;
}

namespace {

void check_id(const std::string& id, const char* what) {
  if (id.empty() || id.find('/') != std::string::npos) {
    throw SchemaError(std::string(what) + " id '" + id + "' must be non-empty and contain no '/'");
  }
}

}  // namespace

void add_encoder(ModnModel& model, const FeatureSchema& feature) {
  feature.validate();
  check_id(feature.id, "feature");
  if (model.has_encoder(feature.id)) throw SchemaError("duplicate feature id '" + feature.id + "'");
  const int s = model.state_dim();
  MlpSpec spec{{s + feature.encoded_width(), model.options.resolved_hidden_width(), s},
               model.options.hidden,
               OutputActivation::identity};
  init_mlp_params(spec, model.params, ModnModel::encoder_prefix(feature.id),
                  derive_seed(model.options.seed, "encoder/" + feature.id));
  model.encoders.emplace(feature.id, spec);
  model.features.push_back(feature);
  model.refresh_fingerprint();
}

ModnModel init_model(const std::vector<FeatureSchema>& schema, const std::vector<std::string>& targets,
                     const ModelOptions& options) {
  if (options.state_dim < 1) throw ConfigError("state_dim must be >= 1");
  if (schema.empty()) throw SchemaError("model needs at least one feature");
  if (targets.empty()) throw SchemaError("model needs at least one target");
  ModnModel model;
  model.options = options;
  model.params.rng_seed = options.seed;
  model.params.add(ModnModel::initial_state_name(), Tensor::Zero(1, options.state_dim));
  std::set<std::string> seen;
  for (const auto& t : targets) {
    check_id(t, "target");
    if (!seen.insert(t).second) throw SchemaError("duplicate target id '" + t + "'");
    MlpSpec spec{{options.state_dim, options.resolved_hidden_width(), 1}, options.hidden,
                 OutputActivation::sigmoid};
    init_mlp_params(spec, model.params, ModnModel::decoder_prefix(t), derive_seed(options.seed, "decoder/" + t));
    model.decoders.emplace(t, spec);
    model.targets.push_back(t);
  }
  for (const auto& f : schema) {
    if (seen.count(f.id) != 0 && std::find(targets.begin(), targets.end(), f.id) != targets.end()) {
      throw SchemaError("'" + f.id + "' is both a feature and a target");
    }
    add_encoder(model, f);
  }
  model.refresh_fingerprint();
  return model;
}

Eigen::RowVectorXd encode_answer(const ModnModel& model, const std::string& feature_id, const Value& value) {
  return encode_answer(model.feature(feature_id), value, model.normalization);
}

StateVector initial_state(const ModnModel& model) {
  return model.params.at(ModnModel::initial_state_name()).value.row(0);
}

StateVector encode_step(const ModnModel& model, const StateVector& state, const std::string& feature_id,
                        const Eigen::RowVectorXd& encoded_answer) {
  auto it = model.encoders.find(feature_id);
  if (it == model.encoders.end()) throw MissingModuleError("encoder", feature_id);
  if (state.size() != model.state_dim()) {
    throw ShapeError("state has length " + std::to_string(state.size()) + ", model state_dim is " +
                     std::to_string(model.state_dim()));
  }
  Eigen::RowVectorXd input(state.size() + encoded_answer.size());
  input << state, encoded_answer;
  const Tensor delta = mlp_eval(it->second, model.params, ModnModel::encoder_prefix(feature_id), input);
  return state + delta.row(0);
}

double decode(const ModnModel& model, const StateVector& state, const std::string& target_id) {
  auto it = model.decoders.find(target_id);
  if (it == model.decoders.end()) throw MissingModuleError("decoder", target_id);
  return mlp_eval(it->second, model.params, ModnModel::decoder_prefix(target_id), state)(0, 0);
}

Eigen::RowVectorXd decode_all(const ModnModel& model, const StateVector& state) {
  Eigen::RowVectorXd out(model.targets.size());
  for (std::size_t d = 0; d < model.targets.size(); ++d) out(d) = decode(model, state, model.targets[d]);
  return out;
}

Eigen::MatrixXd Trajectory::matrix() const {
  Eigen::MatrixXd m(steps.size(), targets.size());
  for (std::size_t t = 0; t < steps.size(); ++t) m.row(t) = steps[t].probabilities;
  return m;
}

Trajectory run_consultation(const ModnModel& model, const ConsultationRecord& record,
                            const EncoderObserver& observer) {
  Trajectory traj;
  traj.targets = model.targets;
  StateVector state = initial_state(model);
  traj.steps.push_back(TrajectoryStep{0, "initial", std::nullopt, decode_all(model, state)});
  int step = 0;
  for (const Answer& a : record.answers) {
    if (!model.has_encoder(a.feature_id)) throw MissingModuleError("encoder", a.feature_id);
    if (observer) observer(a.feature_id);
    state = encode_step(model, state, a.feature_id, encode_answer(model, a.feature_id, a.value));
    traj.steps.push_back(TrajectoryStep{++step, a.feature_id, a.value, decode_all(model, state)});
  }
  return traj;
}

Trajectory run_consultation(const ModnModel& model, const std::vector<std::pair<std::string, Value>>& answers) {
  ConsultationRecord record;
  for (const auto& [id, value] : answers) {
    const int group = model.has_encoder(id) ? model.feature(id).group : 0;
    record.answers.push_back(Answer{id, value, group});
  }
  return run_consultation(model, record);
}

nlohmann::json trajectory_to_json(const ModnModel& model, const Trajectory& trajectory, double threshold) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trajectory.steps) {
    std::vector<double> probs(s.probabilities.data(), s.probabilities.data() + s.probabilities.size());
    std::string question;
    if (s.step > 0 && model.has_encoder(s.feature_id)) question = model.feature(s.feature_id).question;
    steps.push_back({{"step", s.step},
                     {"feature_id", s.feature_id},
                     {"question", question},
                     {"answer", s.answer ? value_to_json(*s.answer) : nlohmann::json(nullptr)},
                     {"probabilities", probs}});
  }
  return {{"targets", trajectory.targets}, {"threshold", threshold}, {"steps", steps}};
}

}  // namespace modn
