#pragma once

#include <map>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "modn/autodiff.hpp"

namespace modn {

enum class OptimizerMethod { sgd, adam };

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Throws ConfigError for lr <= 0, betas outside [0, 1) or eps <= 0.
  void validate() const;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

/// First-order optimizer over a ParamStore. Adam moments are kept per
/// parameter name; parameters named in `frozen` are neither updated nor do
/// their moments advance.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  /// Applies one update from the accumulated gradients, then zeroes every
  /// accumulator (frozen ones included).
  void step(ParamStore& params, const std::set<std::string>& frozen = {});

  const OptimizerConfig& config() const { return config_; }
  long steps() const { return steps_; }

  struct Moments {
    Tensor m;
    Tensor v;
  };
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  OptimizerConfig config_;
  long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace modn
