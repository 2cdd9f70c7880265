#include "modn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "modn/random.hpp"

namespace modn {

double max_gradient_error(ParamStore& params, const std::function<Var(Tape&)>& loss, double step,
                          double floor) {
  params.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape tape;
    return loss(tape).value()(0, 0);
  };
  double worst = 0.0;
  for (auto& [name, entry] : params.entries()) {
    for (Eigen::Index i = 0; i < entry.value.size(); ++i) {
      double& x = entry.value.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = eval();
      x = saved - step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = entry.grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  params.zero_grad();
  return worst;
}

double grad_check(const MlpSpec& spec, LossKind loss, std::uint64_t seed) {
  spec.validate();
  ParamStore params;
  params.rng_seed = seed;
  init_mlp_params(spec, params, "net/", derive_seed(seed, "params"));
  Rng rng(derive_seed(seed, "data"));
  for (auto& [name, entry] : params.entries()) {
    if (name.find("/b") != std::string::npos) {
      for (Eigen::Index i = 0; i < entry.value.size(); ++i) entry.value.data()[i] = rng.uniform(-0.5, 0.5);
    }
  }
  constexpr int batch = 3;
  Tensor input(batch, spec.input_dim());
  for (Eigen::Index i = 0; i < input.size(); ++i) input.data()[i] = rng.uniform(-1.0, 1.0);
  Tensor target(batch, spec.output_dim());
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    target.data()[i] = loss == LossKind::bce ? (rng.bernoulli(0.5) ? 1.0 : 0.0) : rng.uniform(-1.0, 1.0);
  }
  const MlpBinding net = bind_mlp(spec, params, "net/");
  return max_gradient_error(params, [&](Tape& tape) {
    Var x = tape.constant(input);
    if (loss == LossKind::bce) return bce_with_logits(mlp_logits(net, x, tape), target);
    return squared_error(mlp_forward(net, x, tape), target);
  });
}

}  // namespace modn
