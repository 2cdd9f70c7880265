#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "modn/activations.hpp"
#include "modn/autodiff.hpp"
#include "modn/errors.hpp"

namespace modn {

enum class HiddenActivation { tanh, relu };
enum class OutputActivation { identity, sigmoid };

/// Fully connected network shape. layer_sizes holds the input width first and
/// the output width last; parameters for layer i are named <prefix>W<i>
/// (out x in) and <prefix>b<i> (1 x out).
struct MlpSpec {
  std::vector<int> layer_sizes;
  HiddenActivation hidden = HiddenActivation::tanh;
  OutputActivation output = OutputActivation::identity;

  void validate() const;
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return layer_sizes.size() - 1; }

  bool operator==(const MlpSpec&) const = default;
};

std::string weight_name(const std::string& prefix, std::size_t layer);
std::string bias_name(const std::string& prefix, std::size_t layer);

/// Adds weights drawn uniformly from +-sqrt(6 / (fan_in + fan_out)) and zero
/// biases.
void init_mlp_params(const MlpSpec& spec, ParamStore& params, const std::string& prefix,
                     std::uint64_t seed);

/// Throws ShapeError naming the first layer whose parameters disagree with spec.
void check_mlp_params(const MlpSpec& spec, const ParamStore& params, const std::string& prefix);

/// Parameter entries of one network, resolved once so repeated forward passes
/// skip the name lookups.
struct MlpBinding {
  const MlpSpec* spec = nullptr;
  std::vector<ParamStore::Entry*> weights;
  std::vector<ParamStore::Entry*> biases;
};

MlpBinding bind_mlp(const MlpSpec& spec, ParamStore& params, const std::string& prefix);

/// Records the network on tape and returns the pre-output-activation values.
Var mlp_logits(const MlpBinding& net, Var input, Tape& tape);
/// Records the network on tape, output activation included.
Var mlp_forward(const MlpBinding& net, Var input, Tape& tape);
Var mlp_forward(const MlpSpec& spec, ParamStore& params, const std::string& prefix, Var input,
                Tape& tape);

namespace detail {
inline void apply_hidden(Tensor& h, HiddenActivation act) {
  if (act == HiddenActivation::tanh) {
    h = h.array().tanh().matrix();
  } else {
    h = h.cwiseMax(0.0);
  }
}
}  // namespace detail

/// Tape-free evaluation of the pre-output-activation values. Read-only on
/// params, so safe to call concurrently on a frozen store.
template <typename Derived>
Tensor mlp_eval_logits(const MlpSpec& spec, const ParamStore& params, const std::string& prefix,
                       const Eigen::MatrixBase<Derived>& input) {
  if (input.cols() != spec.input_dim()) {
    throw ShapeError("layer 0 of '" + prefix + "': expected input width " +
                     std::to_string(spec.input_dim()) + ", got " + std::to_string(input.cols()));
  }
  Tensor h = input;
  for (std::size_t layer = 0; layer < spec.num_layers(); ++layer) {
    const Tensor& w = params.at(weight_name(prefix, layer)).value;
    const Tensor& b = params.at(bias_name(prefix, layer)).value;
    Tensor next = h * w.transpose();
    next.rowwise() += b.row(0);
    if (layer + 1 < spec.num_layers()) detail::apply_hidden(next, spec.hidden);
    h = std::move(next);
  }
  return h;
}

template <typename Derived>
Tensor mlp_eval(const MlpSpec& spec, const ParamStore& params, const std::string& prefix,
                const Eigen::MatrixBase<Derived>& input) {
  Tensor z = mlp_eval_logits(spec, params, prefix, input);
  if (spec.output == OutputActivation::sigmoid) {
    z = z.unaryExpr([](double v) { return probability_from_logit(v); });
  }
  return z;
}

void to_json(nlohmann::json& j, const MlpSpec& spec);
void from_json(const nlohmann::json& j, MlpSpec& spec);

}  // namespace modn
