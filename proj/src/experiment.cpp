#include "modn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "modn/errors.hpp"
#include "modn/model_io.hpp"
#include "modn/random.hpp"
#include "modn/results_io.hpp"

namespace modn {

DatasetTable DatasetSource::load() const {
  if (synthetic) return generate_synthetic(*synthetic);
  if (csv.empty() || schema.empty()) throw ConfigError("dataset needs either 'synthetic' or both 'csv' and 'schema'");
  return load_dataset(csv, schema);
}

void to_json(nlohmann::json& j, const DatasetSource& s) {
  j = nlohmann::json::object();
  if (s.synthetic) j["synthetic"] = *s.synthetic;
  if (!s.csv.empty()) j["csv"] = s.csv.string();
  if (!s.schema.empty()) j["schema"] = s.schema.string();
}

void from_json(const nlohmann::json& j, DatasetSource& s) {
  s = DatasetSource{};
  if (j.contains("synthetic")) s.synthetic = j.at("synthetic").get<SyntheticSpec>();
  if (j.contains("csv")) s.csv = j.at("csv").get<std::string>();
  if (j.contains("schema")) s.schema = j.at("schema").get<std::string>();
}

std::pair<DatasetTable, DatasetTable> split_train_val(const DatasetTable& data, double val_fraction,
                                                      std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  std::vector<std::size_t> order(data.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "train-val"));
  rng.shuffle(order.begin(), order.end());
  auto n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(order.size()));
  if (n_val >= order.size()) n_val = order.empty() ? 0 : order.size() - 1;
  std::vector<std::size_t> val(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> fit(order.begin() + n_val, order.end());
  std::sort(val.begin(), val.end());
  std::sort(fit.begin(), fit.end());
  return {subset(data, fit), subset(data, val)};
}

ModelBuilder modn_builder(const TrainConfig& config, double val_fraction) {
  return [config, val_fraction](const DatasetTable& train_set, const DatasetTable& test, std::uint64_t seed) {
    auto [fit, val] = split_train_val(train_set, val_fraction, seed);
    TrainConfig c = config;
    c.shuffle_seed = derive_seed(seed, "modn-shuffle");
    ModnModel model = prepare_model(fit, c, derive_seed(seed, "modn-init"));
    model = train(std::move(model), fit, val, c).model;
    return predict(model, test, c.threshold);
  };
}

ModelBuilder logreg_builder(const BaselineOptions& options) {
  return [options](const DatasetTable& train_set, const DatasetTable& test, std::uint64_t seed) {
    BaselineOptions o = options;
    o.seed = seed;
    return baseline_logreg(train_set, test, Imputation::mean_mode, o);
  };
}

ModelBuilder mlp_builder(const BaselineOptions& options) {
  return [options](const DatasetTable& train_set, const DatasetTable& test, std::uint64_t seed) {
    BaselineOptions o = options;
    o.seed = seed;
    return baseline_mlp(train_set, test, Imputation::mean_mode, o);
  };
}

CvResult cv_5x2(const DatasetTable& dataset, const ModelBuilder& builder, std::uint64_t seed) {
  const std::size_t n = dataset.records.size();
  if (n < 4) throw ConfigError("5x2 cross-validation needs at least 4 records");
  CvResult result;
  result.targets = dataset.targets;
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, rep));
    rng.shuffle(order.begin(), order.end());
    const std::size_t half = n / 2;
    std::vector<std::size_t> first(order.begin(), order.begin() + half);
    std::vector<std::size_t> second(order.begin() + half, order.end());
    for (int fold = 0; fold < 2; ++fold) {
      const auto& train_idx = fold == 0 ? first : second;
      const auto& test_idx = fold == 0 ? second : first;
      const DatasetTable test = subset(dataset, test_idx);
      const PredictionSet preds =
          builder(subset(dataset, train_idx), test, derive_seed(seed, rep * 2 + static_cast<std::uint64_t>(fold)));
      const auto scores = per_target_macro_f1(preds);
      result.per_target.push_back(scores);
      result.overall.push_back(overall_f1(scores));
      result.test_ids.push_back(preds.record_ids);
    }
  }
  return result;
}

ComparisonTable run_model_comparison(const DatasetTable& dataset, const ComparisonConfig& config) {
  ComparisonTable table;
  table.methods = {"modn", "logreg", "mlp"};
  table.alpha = config.alpha;
  table.corrected = config.corrected;
  table.cv["modn"] = cv_5x2(dataset, modn_builder(config.train), config.seed);
  table.cv["logreg"] = cv_5x2(dataset, logreg_builder(config.baseline), config.seed);
  table.cv["mlp"] = cv_5x2(dataset, mlp_builder(config.baseline), config.seed);

  auto column = [&](const std::string& method, std::optional<std::size_t> target) {
    const CvResult& cv = table.cv.at(method);
    std::vector<double> out;
    for (std::size_t k = 0; k < cv.overall.size(); ++k) out.push_back(target ? cv.per_target[k][*target] : cv.overall[k]);
    return out;
  };
  for (std::size_t d = 0; d <= dataset.targets.size(); ++d) {
    const bool overall = d == dataset.targets.size();
    const std::optional<std::size_t> target = overall ? std::nullopt : std::optional<std::size_t>(d);
    ComparisonRow row;
    row.target = overall ? "overall" : dataset.targets[d];
    const auto modn_scores = column("modn", target);
    for (const auto& m : table.methods) {
      const auto scores = column(m, target);
      row.mean[m] = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
      if (m == "modn") continue;
      const TTestResult t = config.corrected ? corrected_5x2cv_t_test(modn_scores, scores)
                                             : paired_t_test(modn_scores, scores);
      row.vs_modn[m] = t;
      row.significant[m] = !t.degenerate && t.p < config.alpha;
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

nlohmann::json comparison_to_json(const ComparisonTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    nlohmann::json tests = nlohmann::json::object();
    for (const auto& [m, t] : r.vs_modn) {
      tests[m] = {{"t", t.t}, {"p", t.p}, {"df", t.df}, {"degenerate", t.degenerate}, {"significant", r.significant.at(m)}};
    }
    rows.push_back({{"target", r.target}, {"mean_macro_f1", r.mean}, {"modn_vs", tests}});
  }
  nlohmann::json folds = nlohmann::json::object();
  for (const auto& [m, cv] : table.cv) folds[m] = {{"overall", cv.overall}, {"per_target", cv.per_target}};
  return {{"methods", table.methods}, {"alpha", table.alpha}, {"corrected_5x2cv", table.corrected},
          {"rows", rows}, {"folds", folds}};
}

std::string comparison_to_text(const ComparisonTable& table) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "target";
  for (const auto& m : table.methods) out << std::setw(10) << m;
  out << "modn>logreg  modn>mlp\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& r : table.rows) {
    out << std::setw(16) << r.target;
    for (const auto& m : table.methods) out << std::setw(10) << r.mean.at(m);
    for (const auto* b : {"logreg", "mlp"}) {
      const auto& t = r.vs_modn.at(b);
      std::ostringstream cell;
      cell << std::setprecision(3) << "p=" << t.p << (r.significant.at(b) ? "*" : "");
      out << std::setw(b == std::string("logreg") ? 13 : 10) << cell.str();
    }
    out << '\n';
  }
  out << "* p < " << table.alpha << (table.corrected ? " (5x2cv corrected t-test)" : " (paired t-test)") << '\n';
  return out.str();
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::static_source: return "static";
    case Scenario::local: return "local";
    case Scenario::global: return "global";
    case Scenario::fine_tune: return "fine_tune";
    case Scenario::modular_update: return "modular_update";
  }
  return "static";
}

Scenario scenario_from_string(const std::string& s) {
  for (Scenario sc : all_scenarios()) {
    if (to_string(sc) == s) return sc;
  }
  throw ConfigError("unknown scenario '" + s + "'");
}

const std::vector<Scenario>& all_scenarios() {
  static const std::vector<Scenario> all{Scenario::static_source, Scenario::local, Scenario::global,
                                         Scenario::fine_tune, Scenario::modular_update};
  return all;
}

void ExperimentConfig::validate() const {
  if (scenarios.empty()) throw ConfigError("experiment needs at least one scenario");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (overlaps.empty()) throw ConfigError("experiment needs at least one overlap");
  for (double o : overlaps) {
    if (!(o > 0.0 && o <= 1.0)) throw ConfigError("overlaps must lie in (0, 1]");
  }
  if (sizes.n_a == 0 || sizes.n_b == 0 || sizes.n_test == 0) throw ConfigError("split sizes must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in [0, 1)");
  train.validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  std::vector<std::string> scenarios;
  for (Scenario s : c.scenarios) scenarios.push_back(to_string(s));
  j = nlohmann::json{{"dataset", c.dataset},
                     {"overlaps", c.overlaps},
                     {"sizes", {{"n_a", c.sizes.n_a}, {"n_b", c.sizes.n_b}, {"n_test", c.sizes.n_test}}},
                     {"scenarios", scenarios},
                     {"seeds", c.seeds},
                     {"train", c.train},
                     {"val_fraction", c.val_fraction},
                     {"output", c.output.string()},
                     {"save_models", c.save_models},
                     {"trajectory_dumps", c.trajectory_dumps},
                     {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  try {
    if (j.contains("dataset")) j.at("dataset").get_to(c.dataset);
    if (j.contains("overlaps")) j.at("overlaps").get_to(c.overlaps);
    if (j.contains("sizes")) {
      const auto& s = j.at("sizes");
      c.sizes = SplitSizes{s.at("n_a").get<std::size_t>(), s.at("n_b").get<std::size_t>(),
                           s.at("n_test").get<std::size_t>()};
    }
    if (j.contains("scenarios")) {
      c.scenarios.clear();
      for (const auto& s : j.at("scenarios")) c.scenarios.push_back(scenario_from_string(s.get<std::string>()));
    }
    if (j.contains("seeds")) j.at("seeds").get_to(c.seeds);
    if (j.contains("train")) j.at("train").get_to(c.train);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.output = j.value("output", std::string());
    c.save_models = j.value("save_models", c.save_models);
    c.trajectory_dumps = j.value("trajectory_dumps", c.trajectory_dumps);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in).get<ExperimentConfig>();
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

const ResultRow* ResultsTable::find(Scenario scenario, double overlap) const {
  for (const auto& r : rows) {
    if (r.scenario == scenario && r.overlap == overlap) return &r;
  }
  return nullptr;
}

ResultsTable aggregate_cells(const std::vector<CellResult>& cells, const ExperimentConfig& config) {
  ResultsTable table;
  for (Scenario sc : config.scenarios) {
    for (double overlap : config.overlaps) {
      ResultRow row;
      row.scenario = sc;
      row.overlap = overlap;
      std::vector<std::string> failures;
      for (std::uint64_t seed : config.seeds) {
        for (const auto& c : cells) {
          if (c.scenario != sc || c.overlap != overlap || c.seed != seed) continue;
          if (c.failed) {
            failures.push_back("seed " + std::to_string(seed) + ": " + c.message);
          } else {
            row.seeds.push_back(seed);
            row.scores.push_back(c.score);
          }
        }
      }
      if (!failures.empty()) {
        row.failed = true;
        for (const auto& f : failures) row.message += (row.message.empty() ? "" : "; ") + f;
      }
      if (row.scores.size() >= 2) {
        row.ci = mean_ci(row.scores);
      } else if (row.scores.size() == 1) {
        row.ci = MeanCi{row.scores[0], row.scores[0], row.scores[0]};
      }
      table.rows.push_back(std::move(row));
    }
  }
  for (double overlap : config.overlaps) {
    for (std::size_t i = 0; i < config.scenarios.size(); ++i) {
      for (std::size_t k = i + 1; k < config.scenarios.size(); ++k) {
        const ResultRow* a = table.find(config.scenarios[i], overlap);
        const ResultRow* b = table.find(config.scenarios[k], overlap);
        if (a->failed || b->failed || a->scores.size() < 2 || a->seeds != b->seeds) continue;
        table.comparisons.push_back(
            PairwiseEntry{overlap, a->scenario, b->scenario, paired_t_test(a->scores, b->scores)});
      }
    }
  }
  return table;
}

namespace {

std::string overlap_tag(double overlap) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << overlap;
  return s.str();
}

std::vector<FeatureSchema> schemas_of(const DatasetTable& full, const std::vector<std::string>& ids) {
  std::vector<FeatureSchema> out;
  for (const auto& id : ids) out.push_back(*full.feature(id));
  return out;
}

/// Runs every requested scenario on one IIO split.
std::vector<CellResult> run_cell(const ExperimentConfig& config, const DatasetTable& full, double overlap,
                                 std::uint64_t seed) {
  const IioSplit split = simulate_iio_split(full, overlap, config.sizes, seed);
  auto [a_fit, a_val] = split_train_val(split.source_a, config.val_fraction, derive_seed(seed, "val-a"));
  auto [b_fit, b_val] = split_train_val(split.target_b, config.val_fraction, derive_seed(seed, "val-b"));
  const std::uint64_t model_seed = derive_seed(seed, "model");
  const std::set<std::string> a_features = split.source_a.feature_ids();
  const std::vector<FeatureSchema> new_features = schemas_of(full, split.deleted_features);

  auto config_for = [&](Scenario sc) {
    TrainConfig c = config.train;
    c.shuffle_seed = derive_seed(seed, "shuffle/" + to_string(sc));
    return c;
  };
  const bool needs_source = std::any_of(config.scenarios.begin(), config.scenarios.end(), [](Scenario s) {
    return s == Scenario::static_source || s == Scenario::fine_tune || s == Scenario::modular_update;
  });
  std::optional<ModnModel> source;
  std::string source_error;
  if (needs_source) {
    try {
      const TrainConfig c = config_for(Scenario::static_source);
      source = train(prepare_model(a_fit, c, model_seed), a_fit, a_val, c).model;
    } catch (const std::exception& e) {
      source_error = std::string("source model: ") + e.what();
    }
  }

  std::vector<CellResult> out;
  for (Scenario sc : config.scenarios) {
    CellResult cell;
    cell.scenario = sc;
    cell.overlap = overlap;
    cell.seed = seed;
    try {
      ModnModel model;
      DatasetTable test = split.test;
      switch (sc) {
        case Scenario::static_source:
          if (!source) throw Error(source_error);
          model = *source;
          test = restrict_features(split.test, a_features);
          break;
        case Scenario::local: {
          const TrainConfig c = config_for(sc);
          model = train(prepare_model(b_fit, c, model_seed), b_fit, b_val, c).model;
          break;
        }
        case Scenario::global: {
          const TrainConfig c = config_for(sc);
          const DatasetTable u_fit = concat(a_fit, b_fit, split.target_b);
          const DatasetTable u_val = concat(a_val, b_val, split.target_b);
          model = train(prepare_model(u_fit, c, model_seed), u_fit, u_val, c).model;
          break;
        }
        case Scenario::fine_tune:
          if (!source) throw Error(source_error);
          model = fine_tune(*source, b_fit, b_val, new_features, config_for(sc));
          break;
        case Scenario::modular_update:
          if (!source) throw Error(source_error);
          model = modular_update(*source, b_fit, b_val, new_features, config_for(sc));
          break;
      }
      cell.available_features = model.feature_ids();
      const PredictionSet preds = predict(model, test, config.train.threshold,
                                          [&cell](const std::string& id) { cell.touched_features.insert(id); });
      if (sc == Scenario::static_source) {
        for (const auto& id : cell.touched_features) {
          if (a_features.count(id) == 0) throw ContractError("static scenario applied non-source feature '" + id + "'");
        }
      }
      cell.per_target = per_target_macro_f1(preds);
      cell.score = overall_f1(cell.per_target);

      if (!config.output.empty()) {
        const std::string stem = to_string(sc) + "_o" + overlap_tag(overlap) + "_s" + std::to_string(seed);
        if (config.save_models) {
          std::filesystem::create_directories(config.output / "models");
          save_model(model, config.output / "models" / (stem + ".modn"));
        }
        if (config.trajectory_dumps > 0 && seed == config.seeds.front()) {
          std::filesystem::create_directories(config.output / "trajectories");
          const auto n = std::min<std::size_t>(config.trajectory_dumps, test.records.size());
          for (std::size_t r = 0; r < n; ++r) {
            nlohmann::json j = trajectory_to_json(model, run_consultation(model, test.records[r]));
            j["record_id"] = test.records[r].record_id;
            j["labels"] = test.records[r].labels;
            std::ofstream(config.output / "trajectories" / (stem + "_" + test.records[r].record_id + ".json"))
                << j.dump(2) << '\n';
          }
        }
      }
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.message = e.what();
    }
    out.push_back(std::move(cell));
  }
  return out;
}

}  // namespace

IioExperimentResult run_iio_experiment(const ExperimentConfig& config) {
  config.validate();
  return run_iio_experiment(config, config.dataset.load());
}

IioExperimentResult run_iio_experiment(const ExperimentConfig& config, const DatasetTable& full) {
  config.validate();
  std::vector<std::pair<double, std::uint64_t>> jobs;
  for (double o : config.overlaps) {
    for (std::uint64_t s : config.seeds) jobs.emplace_back(o, s);
  }
  std::vector<std::vector<CellResult>> results(jobs.size());
  std::size_t threads = config.threads > 0 ? static_cast<std::size_t>(config.threads)
                                           : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = run_cell(config, full, jobs[i].first, jobs[i].second);
      } catch (const std::exception& e) {
        for (Scenario sc : config.scenarios) {
          CellResult cell;
          cell.scenario = sc;
          cell.overlap = jobs[i].first;
          cell.seed = jobs[i].second;
          cell.failed = true;
          cell.message = e.what();
          results[i].push_back(std::move(cell));
        }
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  IioExperimentResult out;
  for (auto& r : results) {
    for (auto& c : r) out.cells.push_back(std::move(c));
  }
  out.table = aggregate_cells(out.cells, config);
  if (!config.output.empty()) {
    std::filesystem::create_directories(config.output);
    export_results(out.table, config.output / "results.csv", ResultsFormat::csv);
    export_results(out.table, config.output / "results.json", ResultsFormat::json);
  }
  return out;
}

}  // namespace modn
