#include "modn/synthetic.hpp"

#include <cmath>

#include "modn/activations.hpp"
#include "modn/errors.hpp"
#include "modn/random.hpp"

namespace modn {

void SyntheticSpec::validate() const {
  if (n_records < 1 || n_targets < 1 || n_features() < 1) {
    throw ConfigError("synthetic spec needs >= 1 record, feature and target");
  }
  if (n_continuous < 0 || n_binary < 0 || n_categorical < 0) throw ConfigError("negative feature count");
  if (n_categorical > 0 && n_levels < 2) throw ConfigError("categorical features need >= 2 levels");
  if (group_size < 1) throw ConfigError("group_size must be >= 1");
  auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!rate(missingness) || !rate(weight_density)) throw ConfigError("rates must lie in [0, 1]");
  if (noise < 0.0) throw ConfigError("noise must be >= 0");
  if (rule == LabelRule::xor_pair && n_continuous < 2) {
    throw ConfigError("xor_pair labels need at least 2 continuous features");
  }
}

NLOHMANN_JSON_SERIALIZE_ENUM(LabelRule, {{LabelRule::logistic, "logistic"},
                                         {LabelRule::threshold, "threshold"},
                                         {LabelRule::xor_pair, "xor_pair"}})

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"n_records", s.n_records},
                     {"n_continuous", s.n_continuous},
                     {"n_binary", s.n_binary},
                     {"n_categorical", s.n_categorical},
                     {"n_levels", s.n_levels},
                     {"n_targets", s.n_targets},
                     {"label_rule", s.rule},
                     {"missingness", s.missingness},
                     {"noise", s.noise},
                     {"weight_density", s.weight_density},
                     {"weight_scale", s.weight_scale},
                     {"group_size", s.group_size},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s = SyntheticSpec{};
  s.n_records = j.value("n_records", s.n_records);
  s.n_continuous = j.value("n_continuous", s.n_continuous);
  s.n_binary = j.value("n_binary", s.n_binary);
  s.n_categorical = j.value("n_categorical", s.n_categorical);
  s.n_levels = j.value("n_levels", s.n_levels);
  s.n_targets = j.value("n_targets", s.n_targets);
  if (j.contains("label_rule")) {
    const auto name = j.at("label_rule").get<std::string>();
    if (name != "logistic" && name != "threshold" && name != "xor_pair") {
      throw ConfigError("unknown label_rule '" + name + "'");
    }
    j.at("label_rule").get_to(s.rule);
  }
  s.missingness = j.value("missingness", s.missingness);
  s.noise = j.value("noise", s.noise);
  s.weight_density = j.value("weight_density", s.weight_density);
  s.weight_scale = j.value("weight_scale", s.weight_scale);
  s.group_size = j.value("group_size", s.group_size);
  s.seed = j.value("seed", s.seed);
  s.validate();
}

double SyntheticTruth::logit(const std::string& target, const ConsultationRecord& record,
                             const std::vector<FeatureSchema>& schema) const {
  double z = bias.at(target);
  const auto& w = weights.at(target);
  for (const auto& f : schema) {
    const Answer* a = record.find(f.id);
    auto it = w.find(f.id);
    if (a == nullptr || it == w.end()) continue;
    switch (f.kind) {
      case FeatureKind::continuous: z += it->second[0] * std::get<double>(a->value); break;
      case FeatureKind::binary: z += it->second[0] * (2.0 * std::get<double>(a->value) - 1.0); break;
      case FeatureKind::categorical: {
        const auto& level = std::get<std::string>(a->value);
        for (std::size_t k = 0; k < f.levels.size(); ++k) {
          if (f.levels[k] == level) z += it->second[k];
        }
        break;
      }
    }
  }
  return z;
}

DatasetTable generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  DatasetTable table;
  int index = 0;
  auto add_feature = [&](const std::string& stem, FeatureKind kind, int k) {
    FeatureSchema f;
    f.id = stem + std::to_string(k);
    f.kind = kind;
    f.question = "Synthetic " + to_string(kind) + " question " + std::to_string(k);
    if (kind == FeatureKind::categorical) {
      for (int l = 0; l < spec.n_levels; ++l) f.levels.push_back("L" + std::to_string(l));
    }
    f.group = index / spec.group_size;
    ++index;
    table.schema.push_back(std::move(f));
  };
  for (int k = 0; k < spec.n_continuous; ++k) add_feature("c", FeatureKind::continuous, k);
  for (int k = 0; k < spec.n_binary; ++k) add_feature("b", FeatureKind::binary, k);
  for (int k = 0; k < spec.n_categorical; ++k) add_feature("k", FeatureKind::categorical, k);
  for (int d = 0; d < spec.n_targets; ++d) table.targets.push_back("y" + std::to_string(d));

  SyntheticTruth truth;
  for (int d = 0; d < spec.n_targets; ++d) {
    const std::string& t = table.targets[d];
    truth.bias[t] = 0.0;
    if (spec.rule == LabelRule::xor_pair) {
      const int a = (2 * d) % spec.n_continuous;
      const int b = (2 * d + 1) % spec.n_continuous;
      truth.xor_features[t] = {"c" + std::to_string(a), "c" + std::to_string(b == a ? (a + 1) % spec.n_continuous : b)};
      continue;
    }
    auto& w = truth.weights[t];
    for (const auto& f : table.schema) {
      if (!rng.bernoulli(spec.weight_density)) continue;
      std::vector<double> unit(f.encoded_width());
      for (double& x : unit) x = spec.weight_scale * rng.normal();
      if (f.kind == FeatureKind::categorical) {
        double mean = 0.0;
        for (double x : unit) mean += x;
        mean /= static_cast<double>(unit.size());
        for (double& x : unit) x -= mean;
      }
      w[f.id] = std::move(unit);
    }
    if (w.empty()) {
      const auto& f = table.schema[rng.below(table.schema.size())];
      std::vector<double> unit(f.encoded_width());
      for (double& x : unit) x = spec.weight_scale * rng.normal();
      w[f.id] = std::move(unit);
    }
  }

  for (int r = 0; r < spec.n_records; ++r) {
    ConsultationRecord rec;
    rec.record_id = "s" + std::to_string(r);
    for (const auto& f : table.schema) {
      Value v;
      switch (f.kind) {
        case FeatureKind::continuous: v = rng.normal(); break;
        case FeatureKind::binary: v = rng.bernoulli(0.5) ? 1.0 : 0.0; break;
        case FeatureKind::categorical: v = f.levels[rng.below(f.levels.size())]; break;
      }
      rec.answers.push_back(Answer{f.id, std::move(v), f.group});
    }
    for (const auto& t : table.targets) {
      int y = 0;
      if (spec.rule == LabelRule::xor_pair) {
        const auto& [fa, fb] = truth.xor_features.at(t);
        const bool pa = std::get<double>(rec.find(fa)->value) > 0.0;
        const bool pb = std::get<double>(rec.find(fb)->value) > 0.0;
        y = (pa != pb) ? 1 : 0;
        if (spec.noise > 0.0 && rng.bernoulli(std::min(0.5, spec.noise))) y = 1 - y;
      } else {
        double z = truth.logit(t, rec, table.schema);
        if (spec.noise > 0.0) z += spec.noise * rng.normal();
        y = spec.rule == LabelRule::threshold ? (z > 0.0 ? 1 : 0) : (rng.bernoulli(stable_sigmoid(z)) ? 1 : 0);
      }
      rec.labels[t] = y;
    }
    if (spec.missingness > 0.0) {
      std::vector<Answer> kept;
      for (auto& a : rec.answers) {
        if (!rng.bernoulli(spec.missingness)) kept.push_back(std::move(a));
      }
      rec.answers = std::move(kept);
    }
    table.records.push_back(std::move(rec));
  }

  nlohmann::json prov{{"generator", "synthetic"}, {"spec", spec}, {"weights", truth.weights},
                      {"bias", truth.bias}, {"xor_features", nlohmann::json::object()}};
  for (const auto& [t, pair] : truth.xor_features) prov["xor_features"][t] = {pair.first, pair.second};
  table.provenance = prov.dump();
  return table;
}

SyntheticTruth synthetic_truth(const DatasetTable& table) {
  const auto prov = nlohmann::json::parse(table.provenance);
  SyntheticTruth truth;
  prov.at("weights").get_to(truth.weights);
  prov.at("bias").get_to(truth.bias);
  for (const auto& [t, pair] : prov.at("xor_features").items()) {
    truth.xor_features[t] = {pair.at(0).get<std::string>(), pair.at(1).get<std::string>()};
  }
  return truth;
}

}  // namespace modn
