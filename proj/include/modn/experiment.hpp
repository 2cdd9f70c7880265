#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modn/baselines.hpp"
#include "modn/data.hpp"
#include "modn/iio_split.hpp"
#include "modn/metrics.hpp"
#include "modn/synthetic.hpp"
#include "modn/training.hpp"

namespace modn {

/// Where experiment data comes from: a synthetic spec or a CSV + schema pair.
struct DatasetSource {
  std::optional<SyntheticSpec> synthetic;
  std::filesystem::path csv;
  std::filesystem::path schema;

  DatasetTable load() const;
};

void to_json(nlohmann::json& j, const DatasetSource& s);
void from_json(const nlohmann::json& j, DatasetSource& s);

/// Splits off a seeded validation fraction (at least one record stays in train).
std::pair<DatasetTable, DatasetTable> split_train_val(const DatasetTable& data, double val_fraction,
                                                      std::uint64_t seed);

/// Trains on the first table, predicts on the second.
using ModelBuilder =
    std::function<PredictionSet(const DatasetTable& train, const DatasetTable& test, std::uint64_t seed)>;

ModelBuilder modn_builder(const TrainConfig& config, double val_fraction = 0.125);
ModelBuilder logreg_builder(const BaselineOptions& options);
ModelBuilder mlp_builder(const BaselineOptions& options);

struct CvResult {
  /// 10 overall macro F1 scores ordered (rep0 fold0, rep0 fold1, rep1 fold0, ...).
  std::vector<double> overall;
  /// per_target[k][d] for fold k, target d.
  std::vector<std::vector<double>> per_target;
  std::vector<std::vector<std::string>> test_ids;
  std::vector<std::string> targets;
};

/// Five seeded repetitions of 2-fold cross-validation. Throws ConfigError
/// when the dataset has fewer than 4 records.
CvResult cv_5x2(const DatasetTable& dataset, const ModelBuilder& builder, std::uint64_t seed);

/// Per-target (and overall) comparison of MoDN against the two baselines
/// over the same 5x2 folds.
struct ComparisonRow {
  std::string target;  // "overall" for the last row
  std::map<std::string, double> mean;
  std::map<std::string, TTestResult> vs_modn;  // keyed by baseline name
  std::map<std::string, bool> significant;
};

struct ComparisonTable {
  std::vector<std::string> methods;
  std::vector<ComparisonRow> rows;
  std::map<std::string, CvResult> cv;
  double alpha = 0.05;
  bool corrected = false;
};

struct ComparisonConfig {
  TrainConfig train;
  BaselineOptions baseline;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  /// Use the variance-corrected 5x2cv t-test instead of the plain paired test.
  bool corrected = false;
};

ComparisonTable run_model_comparison(const DatasetTable& dataset, const ComparisonConfig& config);
nlohmann::json comparison_to_json(const ComparisonTable& table);
std::string comparison_to_text(const ComparisonTable& table);

enum class Scenario { static_source, local, global, fine_tune, modular_update };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);
const std::vector<Scenario>& all_scenarios();

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<double> overlaps{0.6, 0.8, 1.0};
  SplitSizes sizes{1200, 300, 500};
  std::vector<Scenario> scenarios = all_scenarios();
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  TrainConfig train;
  double val_fraction = 0.125;
  std::filesystem::path output;  // empty: no files written
  bool save_models = false;
  int trajectory_dumps = 0;      // test records dumped per scenario (first seed)
  int threads = 0;               // 0: hardware concurrency

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ResultRow {
  Scenario scenario = Scenario::static_source;
  double overlap = 1.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> scores;  // one per successful seed, aligned with seeds
  MeanCi ci;
  bool failed = false;
  std::string message;

  bool operator==(const ResultRow&) const = default;
};

struct PairwiseEntry {
  double overlap = 1.0;
  Scenario a = Scenario::static_source;
  Scenario b = Scenario::static_source;
  TTestResult test;

  bool operator==(const PairwiseEntry&) const = default;
};

struct ResultsTable {
  std::vector<ResultRow> rows;
  std::vector<PairwiseEntry> comparisons;

  const ResultRow* find(Scenario scenario, double overlap) const;
  bool operator==(const ResultsTable&) const = default;
};

/// Outcome of one scenario for one (overlap, seed).
struct CellResult {
  Scenario scenario = Scenario::static_source;
  double overlap = 1.0;
  std::uint64_t seed = 0;
  double score = 0.0;
  std::vector<double> per_target;
  bool failed = false;
  std::string message;
  /// Features whose encoders were applied while scoring the test set.
  std::set<std::string> touched_features;
  std::set<std::string> available_features;
};

struct IioExperimentResult {
  ResultsTable table;
  std::vector<CellResult> cells;
};

/// Aggregates cells into rows (mean and Student-t CI over seeds) plus
/// paired t-tests between every scenario pair at each overlap.
ResultsTable aggregate_cells(const std::vector<CellResult>& cells, const ExperimentConfig& config);

/// For every (overlap, seed): build the IIO split, train and score every
/// requested scenario on the shared test set. A failing scenario marks its
/// cell failed without stopping the others.
IioExperimentResult run_iio_experiment(const ExperimentConfig& config);
IioExperimentResult run_iio_experiment(const ExperimentConfig& config, const DatasetTable& full);

}  // namespace modn
