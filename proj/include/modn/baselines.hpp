#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "modn/data.hpp"
#include "modn/metrics.hpp"

namespace modn {

enum class Imputation { mean_mode };

/// Fills missing answers with the training mean (continuous) or mode
/// (binary, categorical) and encodes each record into a fixed-width row:
/// z-scored continuous values, 0/1 binaries, one-hot categoricals. Every
/// filled cell increments imputation_counter().
class MeanModeImputer {
 public:
  void fit(const DatasetTable& train);
  Eigen::MatrixXd transform(const DatasetTable& data) const;
  int width() const { return width_; }

 private:
  std::vector<FeatureSchema> schema_;
  std::vector<Value> fill_;
  NormalizationStats stats_;
  int width_ = 0;
};

struct BaselineOptions {
  /// Grid searched per target; the configuration with the lowest
  /// validation loss wins. hidden_widths is ignored by logistic regression.
  std::vector<double> learning_rates{1e-2, 1e-3};
  std::vector<int> hidden_widths{16, 64};
  int epochs = 200;
  int batch_size = 64;
  int patience = 20;
  double val_fraction = 0.2;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

/// Independent logistic regression per target on imputed rows, trained
/// with Adam on the autodiff tape. A target with a single class in train
/// gets a constant classifier and a warning.
PredictionSet baseline_logreg(const DatasetTable& train, const DatasetTable& test, Imputation imputation,
                              const BaselineOptions& options = {});

/// As baseline_logreg with one tanh hidden layer per target.
PredictionSet baseline_mlp(const DatasetTable& train, const DatasetTable& test, Imputation imputation,
                           const BaselineOptions& options = {});

}  // namespace modn
