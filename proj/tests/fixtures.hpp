#pragma once

#include <string>
#include <vector>

#include <cmath>

#include "modn/data.hpp"
#include "modn/mlp.hpp"
#include "modn/model.hpp"
#include "modn/random.hpp"

namespace fixtures {

inline modn::FeatureSchema continuous(const std::string& id, int group = 0) {
  return {id, "question " + id, modn::FeatureKind::continuous, {}, group};
}

inline modn::FeatureSchema binary(const std::string& id, int group = 0) {
  return {id, "question " + id, modn::FeatureKind::binary, {}, group};
}

inline modn::FeatureSchema categorical(const std::string& id, std::vector<std::string> levels, int group = 0) {
  return {id, "question " + id, modn::FeatureKind::categorical, std::move(levels), group};
}

/// Four features of every kind, distinct groups.
inline std::vector<modn::FeatureSchema> mixed_schema() {
  return {continuous("temp", 0), binary("cough", 1), categorical("age", {"infant", "child", "teen"}, 2),
          continuous("weight", 3)};
}

/// A random but valid value for feature f.
inline modn::Value random_value(const modn::FeatureSchema& f, modn::Rng& rng) {
  switch (f.kind) {
    case modn::FeatureKind::continuous:
      return rng.normal() * 3.0 + 1.0;
    case modn::FeatureKind::binary:
      return static_cast<double>(rng.below(2));
    case modn::FeatureKind::categorical:
      return f.levels[rng.below(f.levels.size())];
  }
  return 0.0;
}

/// Random record answering a random subset of schema in schema order.
inline modn::ConsultationRecord random_record(const std::vector<modn::FeatureSchema>& schema,
                                              const std::vector<std::string>& targets, modn::Rng& rng,
                                              const std::string& id = "r") {
  modn::ConsultationRecord r;
  r.record_id = id;
  for (const auto& f : schema) {
    if (rng.bernoulli(0.7)) r.answers.push_back({f.id, random_value(f, rng), f.group});
  }
  for (const auto& t : targets) r.labels[t] = static_cast<int>(rng.below(2));
  return r;
}

/// Straight-line forward pass with explicit loops, no Eigen products.
inline std::vector<double> loop_forward(const modn::MlpSpec& spec, const modn::ParamStore& params,
                                        const std::string& prefix, std::vector<double> x) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const modn::Tensor& w = params.at(modn::weight_name(prefix, l)).value;
    const modn::Tensor& b = params.at(modn::bias_name(prefix, l)).value;
    std::vector<double> y(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index o = 0; o < w.rows(); ++o) {
      double acc = b(0, o);
      for (Eigen::Index i = 0; i < w.cols(); ++i) acc += w(o, i) * x[static_cast<std::size_t>(i)];
      const bool last = l + 1 == spec.num_layers();
      if (!last) acc = spec.hidden == modn::HiddenActivation::tanh ? std::tanh(acc) : std::max(acc, 0.0);
      if (last && spec.output == modn::OutputActivation::sigmoid) acc = 1.0 / (1.0 + std::exp(-acc));
      y[static_cast<std::size_t>(o)] = acc;
    }
    x = std::move(y);
  }
  return x;
}

/// Zeros every parameter whose name starts with prefix.
inline void zero_params(modn::ModnModel& m, const std::string& prefix) {
  for (auto& [name, e] : m.params.entries()) {
    if (name.rfind(prefix, 0) == 0) e.value.setZero();
  }
}

}  // namespace fixtures
