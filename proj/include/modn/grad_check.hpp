#pragma once

#include <cstdint>
#include <functional>

#include "modn/autodiff.hpp"
#include "modn/mlp.hpp"

namespace modn {

enum class LossKind { squared, bce };

/// Largest relative error between reverse-mode gradients of `loss` and
/// central finite differences, over every entry of every parameter in params.
/// The loss callback must rebuild its graph from params on the given tape.
/// Relative error is |a - n| / max(|a|, |n|, floor).
double max_gradient_error(ParamStore& params, const std::function<Var(Tape&)>& loss,
                          double step = 1e-5, double floor = 1e-4);

/// Builds a random network for spec (non-zero biases included), a random
/// 3-row input and target from seed, and returns max_gradient_error for the
/// chosen loss. BCE uses the network's logits with a sigmoid output spec, or
/// its raw output otherwise.
double grad_check(const MlpSpec& spec, LossKind loss, std::uint64_t seed);

}  // namespace modn
