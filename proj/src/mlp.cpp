#include "modn/mlp.hpp"

#include <cmath>

#include "modn/random.hpp"

namespace modn {

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw ConfigError("MlpSpec needs at least 2 layer sizes");
  for (int size : layer_sizes) {
    if (size < 1) throw ConfigError("MlpSpec layer sizes must be >= 1");
  }
}

std::string weight_name(const std::string& prefix, std::size_t layer) {
  return prefix + "W" + std::to_string(layer);
}

std::string bias_name(const std::string& prefix, std::size_t layer) {
  return prefix + "b" + std::to_string(layer);
}

void init_mlp_params(const MlpSpec& spec, ParamStore& params, const std::string& prefix,
                     std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  for (std::size_t layer = 0; layer < spec.num_layers(); ++layer) {
    const int fan_in = spec.layer_sizes[layer];
    const int fan_out = spec.layer_sizes[layer + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor w(fan_out, fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    }
    params.add(weight_name(prefix, layer), std::move(w));
    params.add(bias_name(prefix, layer), Tensor::Zero(1, fan_out));
  }
}

void check_mlp_params(const MlpSpec& spec, const ParamStore& params, const std::string& prefix) {
  spec.validate();
  for (std::size_t layer = 0; layer < spec.num_layers(); ++layer) {
    const std::string wn = weight_name(prefix, layer);
    const std::string bn = bias_name(prefix, layer);
    const auto where = "layer " + std::to_string(layer) + " of '" + prefix + "'";
    if (!params.contains(wn)) throw ShapeError(where + ": missing weight " + wn);
    if (!params.contains(bn)) throw ShapeError(where + ": missing bias " + bn);
    const Tensor& w = params.at(wn).value;
    const Tensor& b = params.at(bn).value;
    if (w.rows() != spec.layer_sizes[layer + 1] || w.cols() != spec.layer_sizes[layer]) {
      throw ShapeError(where + ": weight is " + std::to_string(w.rows()) + "x" +
                       std::to_string(w.cols()) + ", expected " +
                       std::to_string(spec.layer_sizes[layer + 1]) + "x" +
                       std::to_string(spec.layer_sizes[layer]));
    }
    if (b.rows() != 1 || b.cols() != spec.layer_sizes[layer + 1]) {
      throw ShapeError(where + ": bias has wrong shape");
    }
  }
}

MlpBinding bind_mlp(const MlpSpec& spec, ParamStore& params, const std::string& prefix) {
  check_mlp_params(spec, params, prefix);
  MlpBinding net;
  net.spec = &spec;
  for (std::size_t layer = 0; layer < spec.num_layers(); ++layer) {
    net.weights.push_back(&params.at(weight_name(prefix, layer)));
    net.biases.push_back(&params.at(bias_name(prefix, layer)));
  }
  return net;
}

Var mlp_logits(const MlpBinding& net, Var input, Tape& tape) {
  const MlpSpec& spec = *net.spec;
  if (input.cols() != spec.input_dim()) {
    throw ShapeError("layer 0: expected input width " + std::to_string(spec.input_dim()) + ", got " +
                     std::to_string(input.cols()));
  }
  Var h = input;
  for (std::size_t layer = 0; layer < spec.num_layers(); ++layer) {
    h = linear(h, tape.param(*net.weights[layer]), tape.param(*net.biases[layer]));
    if (layer + 1 < spec.num_layers()) {
      h = spec.hidden == HiddenActivation::tanh ? tanh(h) : relu(h);
    }
  }
  return h;
}

Var mlp_forward(const MlpBinding& net, Var input, Tape& tape) {
  Var z = mlp_logits(net, input, tape);
  return net.spec->output == OutputActivation::sigmoid ? sigmoid(z) : z;
}

Var mlp_forward(const MlpSpec& spec, ParamStore& params, const std::string& prefix, Var input,
                Tape& tape) {
  const MlpBinding net = bind_mlp(spec, params, prefix);
  return mlp_forward(net, input, tape);
}

NLOHMANN_JSON_SERIALIZE_ENUM(HiddenActivation, {{HiddenActivation::tanh, "tanh"},
                                                {HiddenActivation::relu, "relu"}})
NLOHMANN_JSON_SERIALIZE_ENUM(OutputActivation, {{OutputActivation::identity, "identity"},
                                                {OutputActivation::sigmoid, "sigmoid"}})

void to_json(nlohmann::json& j, const MlpSpec& spec) {
  j = nlohmann::json{{"layer_sizes", spec.layer_sizes},
                     {"hidden_activation", spec.hidden},
                     {"output_activation", spec.output}};
}

void from_json(const nlohmann::json& j, MlpSpec& spec) {
  j.at("layer_sizes").get_to(spec.layer_sizes);
  j.at("hidden_activation").get_to(spec.hidden);
  j.at("output_activation").get_to(spec.output);
  spec.validate();
}

}  // namespace modn
