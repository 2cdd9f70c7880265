#include <doctest.h>

#include <fstream>

#include "modn/errors.hpp"
#include "modn/experiment.hpp"
#include "modn/model_io.hpp"
#include "modn/results_io.hpp"
#include "modn/synthetic.hpp"

using namespace modn;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.dataset.synthetic = SyntheticSpec{};
  c.dataset.synthetic->n_records = 400;
  c.dataset.synthetic->rule = LabelRule::threshold;
  c.overlaps = {0.6, 1.0};
  c.sizes = {160, 80, 120};
  c.seeds = {0, 1};
  c.train.epochs = 3;
  c.train.state_dim = 6;
  c.train.optimizer.lr = 1e-2;
  c.threads = 1;
  return c;
}

}  // namespace

TEST_CASE("experiment config json round-trip") {
  auto c = tiny_config();
  c.scenarios = {Scenario::global, Scenario::static_source};
  c.output = "out/dir";
  c.trajectory_dumps = 3;
  const nlohmann::json j = c;
  const auto back = j.get<ExperimentConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(j.at("scenarios") == nlohmann::json({"global", "static"}));
  auto bad = j;
  bad["scenarios"] = {"teleport"};
  CHECK_THROWS_AS(bad.get<ExperimentConfig>(), ConfigError);
  bad = j;
  bad["overlaps"] = {1.5};
  CHECK_THROWS_AS(bad.get<ExperimentConfig>().validate(), ConfigError);
}

TEST_CASE("iio experiment table shape, ranges and instrumentation") {
  const auto c = tiny_config();
  const auto result = run_iio_experiment(c);
  CHECK(result.table.rows.size() == c.scenarios.size() * c.overlaps.size());
  CHECK(result.cells.size() == c.scenarios.size() * c.overlaps.size() * c.seeds.size());
  for (const auto& row : result.table.rows) {
    CAPTURE(to_string(row.scenario));
    CHECK_FALSE(row.failed);
    CHECK(row.scores.size() == 2);
    for (double s : row.scores) CHECK((s >= 0.0 && s <= 1.0));
    CHECK(row.ci.lo <= row.ci.mean);
    CHECK(row.ci.mean <= row.ci.hi);
  }
  // 5 scenarios -> 10 pairs per overlap.
  CHECK(result.table.comparisons.size() == 20);
  for (const auto& cell : result.cells) {
    for (const auto& id : cell.touched_features) CHECK(cell.available_features.count(id) == 1);
    if (cell.scenario == Scenario::static_source && cell.overlap == 0.6) CHECK(cell.available_features.size() == 6);
    if (cell.scenario == Scenario::fine_tune) CHECK(cell.available_features.size() == 10);
  }
}

TEST_CASE("iio experiment is deterministic") {
  auto c = tiny_config();
  c.overlaps = {0.8};
  const auto a = run_iio_experiment(c);
  const auto b = run_iio_experiment(c);
  CHECK(a.table == b.table);
  c.threads = 2;
  CHECK(run_iio_experiment(c).table == a.table);
}

TEST_CASE("iio experiment writes results, models and trajectories") {
  auto c = tiny_config();
  c.overlaps = {0.6};
  c.seeds = {3, 4};
  c.scenarios = {Scenario::static_source, Scenario::modular_update};
  c.output = std::filesystem::temp_directory_path() / "modn_iio_out";
  c.save_models = true;
  c.trajectory_dumps = 2;
  std::filesystem::remove_all(c.output);
  const auto result = run_iio_experiment(c);
  CHECK(import_results(c.output / "results.json", ResultsFormat::json) == result.table);
  CHECK(import_results(c.output / "results.csv", ResultsFormat::csv) == result.table);
  std::size_t models = 0, trajectories = 0;
  for (const auto& e : std::filesystem::directory_iterator(c.output / "models")) {
    CHECK_NOTHROW(load_model(e.path()));
    ++models;
  }
  for (const auto& e : std::filesystem::directory_iterator(c.output / "trajectories")) {
    std::ifstream in(e.path());
    const auto j = nlohmann::json::parse(in);
    CHECK(j.contains("steps"));
    CHECK(j.contains("labels"));
    ++trajectories;
  }
  CHECK(models == 4);
  CHECK(trajectories == 4);  // 2 records x 2 scenarios, first seed only
  std::filesystem::remove_all(c.output);
}

TEST_CASE("failed cells are reported without aborting the others") {
  auto c = tiny_config();
  c.overlaps = {0.6};
  c.seeds = {0, 1, 2};
  c.scenarios = {Scenario::local, Scenario::global};
  std::vector<CellResult> cells;
  for (std::uint64_t seed : c.seeds) {
    for (Scenario sc : c.scenarios) {
      CellResult cell;
      cell.scenario = sc;
      cell.overlap = 0.6;
      cell.seed = seed;
      cell.score = 0.5 + 0.1 * static_cast<double>(seed);
      if (sc == Scenario::local && seed == 1) {
        cell.failed = true;
        cell.message = "diverged";
      }
      cells.push_back(cell);
    }
  }
  const auto table = aggregate_cells(cells, c);
  const auto* local = table.find(Scenario::local, 0.6);
  const auto* global = table.find(Scenario::global, 0.6);
  REQUIRE(local != nullptr);
  CHECK(local->failed);
  CHECK(local->message.find("diverged") != std::string::npos);
  CHECK(local->scores.size() == 2);
  CHECK_FALSE(global->failed);
  CHECK(global->scores.size() == 3);
  CHECK(table.comparisons.empty());
}

TEST_CASE("an impossible split fails every cell but still returns a table") {
  auto c = tiny_config();
  c.sizes = {300, 200, 100};
  const auto result = run_iio_experiment(c);
  CHECK(result.table.rows.size() == 10);
  for (const auto& row : result.table.rows) CHECK(row.failed);
}

TEST_CASE("dataset source from csv files") {
  const auto dir = std::filesystem::temp_directory_path() / "modn_source_test";
  std::filesystem::create_directories(dir);
  SyntheticSpec s;
  s.n_records = 30;
  const auto t = generate_synthetic(s);
  {
    std::ofstream csv(dir / "d.csv");
    write_dataset_csv(csv, t);
    std::ofstream(dir / "s.json") << schema_descriptor_to_json({t.schema, t.targets, "", "record_id"}).dump();
  }
  DatasetSource src;
  src.csv = dir / "d.csv";
  src.schema = dir / "s.json";
  CHECK(src.load().records == t.records);
  std::filesystem::remove_all(dir);
}

TEST_CASE("train/val split is a seeded partition") {
  SyntheticSpec s;
  s.n_records = 80;
  const auto t = generate_synthetic(s);
  auto [a, b] = split_train_val(t, 0.125, 5);
  CHECK(b.records.size() == 10);
  CHECK(a.records.size() == 70);
  auto [a2, b2] = split_train_val(t, 0.125, 5);
  CHECK(b2.records == b.records);
  std::set<std::string> ids;
  for (const auto& r : a.records) ids.insert(r.record_id);
  for (const auto& r : b.records) CHECK(ids.insert(r.record_id).second);
}
