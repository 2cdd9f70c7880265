#include "modn/baselines.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "modn/activations.hpp"
#include "modn/autodiff.hpp"
#include "modn/errors.hpp"
#include "modn/mlp.hpp"
#include "modn/optimizer.hpp"
#include "modn/random.hpp"

namespace modn {

void MeanModeImputer::fit(const DatasetTable& train) {
  schema_ = train.schema;
  stats_ = compute_normalization(train);
  fill_.clear();
  width_ = 0;
  for (const auto& f : schema_) {
    width_ += f.encoded_width();
    if (f.kind == FeatureKind::continuous) {
      fill_.emplace_back(stats_.at(f.id).mean);
      if (stats_.at(f.id).stddev == 0.0) {
        log_warning_once("impute-const:" + f.id, "feature '" + f.id + "' is constant in the training data");
      }
      continue;
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& r : train.records) {
      if (const Answer* a = r.find(f.id)) ++counts[value_to_string(a->value)];
    }
    std::string mode = f.kind == FeatureKind::binary ? "0" : f.levels.front();
    std::size_t best = 0;
    for (const auto& [value, n] : counts) {
      if (n > best) {
        best = n;
        mode = value;
      }
    }
    fill_.push_back(canonical_value(f, Value(mode)));
  }
}

Eigen::MatrixXd MeanModeImputer::transform(const DatasetTable& data) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.records.size()), width_);
  std::uint64_t filled = 0;
  for (std::size_t r = 0; r < data.records.size(); ++r) {
    Eigen::Index col = 0;
    for (std::size_t k = 0; k < schema_.size(); ++k) {
      const auto& f = schema_[k];
      const Answer* a = data.records[r].find(f.id);
      if (a == nullptr) ++filled;
      const Value& v = a != nullptr ? a->value : fill_[k];
      Eigen::RowVectorXd enc;
      if (f.kind == FeatureKind::continuous && stats_.at(f.id).stddev == 0.0) {
        enc = Eigen::RowVectorXd::Zero(1);
      } else {
        enc = encode_answer(f, v, stats_);
      }
      x.block(static_cast<Eigen::Index>(r), col, 1, enc.size()) = enc;
      col += enc.size();
    }
  }
  imputation_counter().fetch_add(filled);
  return x;
}

namespace {

struct Classifier {
  MlpSpec spec;
  ParamStore params;
  double val_loss = std::numeric_limits<double>::infinity();
};

double batch_loss(const MlpBinding& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  Tape tape;
  return bce_with_logits(mlp_logits(net, tape.constant(x), tape), y).value()(0, 0) / static_cast<double>(x.rows());
}

Classifier fit_classifier(const MlpSpec& spec, double lr, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                          const Eigen::MatrixXd& vx, const Eigen::MatrixXd& vy, const BaselineOptions& options,
                          std::uint64_t seed) {
  Classifier c;
  c.spec = spec;
  init_mlp_params(spec, c.params, "clf/", seed);
  const MlpBinding net = bind_mlp(c.spec, c.params, "clf/");
  OptimizerConfig oc;
  oc.lr = lr;
  Optimizer opt(oc);
  Rng rng(derive_seed(seed, "batches"));
  std::vector<Eigen::Index> order(x.rows());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::map<std::string, Tensor> best;
  int best_epoch = -1;
  const bool has_val = vx.rows() > 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      const auto n = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd bx(n, x.cols()), by(n, 1);
      for (Eigen::Index i = 0; i < n; ++i) {
        bx.row(i) = x.row(order[start + i]);
        by(i, 0) = y(order[start + i], 0);
      }
      Tape tape;
      Var loss = scale(bce_with_logits(mlp_logits(net, tape.constant(bx), tape), by), 1.0 / static_cast<double>(n));
      tape.backward(loss);
      opt.step(c.params);
    }
    const double vl = has_val ? batch_loss(net, vx, vy) : batch_loss(net, x, y);
    if (vl < c.val_loss) {
      c.val_loss = vl;
      best_epoch = epoch;
      for (const auto& [name, e] : c.params.entries()) best[name] = e.value;
    } else if (epoch - best_epoch >= options.patience) {
      break;
    }
  }
  for (auto& [name, e] : c.params.entries()) e.value = best.at(name);
  return c;
}

PredictionSet run_baseline(const DatasetTable& train, const DatasetTable& test, bool hidden_layer,
                           const BaselineOptions& options) {
  if (train.records.empty() || test.records.empty()) throw ConfigError("baseline needs non-empty train and test sets");
  MeanModeImputer imputer;
  imputer.fit(train);
  const Eigen::MatrixXd x_all = imputer.transform(train);
  const Eigen::MatrixXd x_test = imputer.transform(test);

  Rng rng(derive_seed(options.seed, "val-split"));
  std::vector<Eigen::Index> order(x_all.rows());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  rng.shuffle(order.begin(), order.end());
  auto n_val = static_cast<Eigen::Index>(options.val_fraction * static_cast<double>(x_all.rows()));
  if (x_all.rows() - n_val < 1) n_val = 0;
  const Eigen::Index n_fit = x_all.rows() - n_val;
  Eigen::MatrixXd x_fit(n_fit, x_all.cols()), x_val(n_val, x_all.cols());
  for (Eigen::Index i = 0; i < n_fit; ++i) x_fit.row(i) = x_all.row(order[i]);
  for (Eigen::Index i = 0; i < n_val; ++i) x_val.row(i) = x_all.row(order[n_fit + i]);

  PredictionSet out;
  out.targets = train.targets;
  out.threshold = options.threshold;
  out.probabilities.resize(x_test.rows(), static_cast<Eigen::Index>(train.targets.size()));
  out.labels.resize(x_test.rows(), static_cast<Eigen::Index>(train.targets.size()));
  for (const auto& r : test.records) out.record_ids.push_back(r.record_id);

  const int width = std::max(1, imputer.width());
  for (std::size_t d = 0; d < train.targets.size(); ++d) {
    const std::string& target = train.targets[d];
    auto label = [&](const ConsultationRecord& r) {
      auto it = r.labels.find(target);
      if (it == r.labels.end()) throw DataError("record '" + r.record_id + "' has no label for '" + target + "'");
      return static_cast<double>(it->second);
    };
    Eigen::MatrixXd y_all(x_all.rows(), 1);
    for (Eigen::Index i = 0; i < x_all.rows(); ++i) y_all(i, 0) = label(train.records[i]);
    for (Eigen::Index i = 0; i < x_test.rows(); ++i) out.labels(i, d) = static_cast<int>(label(test.records[i]));

    const double positives = y_all.sum();
    if (positives == 0.0 || positives == static_cast<double>(y_all.rows())) {
      log_warning("target '" + target + "' has a single class in training data; using a constant classifier");
      out.probabilities.col(d).setConstant(probability_from_logit(positives == 0.0 ? -1e3 : 1e3));
      continue;
    }
    Eigen::MatrixXd y_fit(n_fit, 1), y_val(n_val, 1);
    for (Eigen::Index i = 0; i < n_fit; ++i) y_fit(i, 0) = y_all(order[i], 0);
    for (Eigen::Index i = 0; i < n_val; ++i) y_val(i, 0) = y_all(order[n_fit + i], 0);

    std::optional<Classifier> best;
    const std::vector<int> widths = hidden_layer ? options.hidden_widths : std::vector<int>{0};
    for (double lr : options.learning_rates) {
      for (int h : widths) {
        MlpSpec spec;
        spec.layer_sizes = h > 0 ? std::vector<int>{width, h, 1} : std::vector<int>{width, 1};
        spec.output = OutputActivation::sigmoid;
        const std::uint64_t seed = derive_seed(derive_seed(options.seed, target), static_cast<std::uint64_t>(h));
        Eigen::MatrixXd xf = x_fit, xv = x_val;
        if (imputer.width() == 0) {
          xf = Eigen::MatrixXd::Zero(n_fit, 1);
          xv = Eigen::MatrixXd::Zero(n_val, 1);
        }
        Classifier c = fit_classifier(spec, lr, xf, y_fit, xv, y_val, options, seed);
        if (!best || c.val_loss < best->val_loss) best = std::move(c);
      }
    }
    const Eigen::MatrixXd xt = imputer.width() == 0 ? Eigen::MatrixXd::Zero(x_test.rows(), 1) : x_test;
    out.probabilities.col(d) = mlp_eval(best->spec, best->params, "clf/", xt).col(0);
  }
  return out;
}

}  // namespace

PredictionSet baseline_logreg(const DatasetTable& train, const DatasetTable& test, Imputation,
                              const BaselineOptions& options) {
  return run_baseline(train, test, false, options);
}

PredictionSet baseline_mlp(const DatasetTable& train, const DatasetTable& test, Imputation,
                           const BaselineOptions& options) {
  return run_baseline(train, test, true, options);
}

}  // namespace modn
