#include "modn/optimizer.hpp"

#include <cmath>

#include "modn/errors.hpp"

namespace modn {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer eps must be > 0");
}

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerMethod, {{OptimizerMethod::sgd, "sgd"},
                                               {OptimizerMethod::adam, "adam"}})

void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = nlohmann::json{{"method", c.method}, {"lr", c.lr},   {"beta1", c.beta1},
                     {"beta2", c.beta2},   {"eps", c.eps}};
}

void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  c = OptimizerConfig{};
  if (j.contains("method")) {
    const auto name = j.at("method").get<std::string>();
    if (name != "sgd" && name != "adam") throw ConfigError("unknown optimizer '" + name + "'");
    c.method = name == "sgd" ? OptimizerMethod::sgd : OptimizerMethod::adam;
  }
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.validate();
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::step(ParamStore& params, const std::set<std::string>& frozen) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (auto& [name, entry] : params.entries()) {
    if (frozen.count(name) != 0) {
      entry.grad.setZero();
      continue;
    }
    if (config_.method == OptimizerMethod::sgd) {
      entry.value -= config_.lr * entry.grad;
    } else {
      auto [it, inserted] = moments_.try_emplace(name);
      Moments& mom = it->second;
      if (inserted) {
        mom.m = Tensor::Zero(entry.value.rows(), entry.value.cols());
        mom.v = Tensor::Zero(entry.value.rows(), entry.value.cols());
      }
      mom.m = config_.beta1 * mom.m + (1.0 - config_.beta1) * entry.grad;
      mom.v = config_.beta2 * mom.v + (1.0 - config_.beta2) * entry.grad.cwiseAbs2();
      const Tensor m_hat = mom.m / bc1;
      const Tensor v_hat = mom.v / bc2;
      entry.value.array() -= config_.lr * m_hat.array() / (v_hat.array().sqrt() + config_.eps);
    }
    entry.grad.setZero();
  }
}

}  // namespace modn
