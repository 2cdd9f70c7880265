#include <csignal>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "modn/data.hpp"
#include "modn/experiment.hpp"
#include "modn/model_io.hpp"
#include "modn/results_io.hpp"
#include "modn/service.hpp"
#include "modn/synthetic.hpp"
#include "modn/training.hpp"

#include <CLI11.hpp>
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw modn::ConfigError("cannot open " + path.string());
  return json::parse(in);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << '\n';
    return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw modn::ConfigError("cannot write " + path.string());
  out << text << '\n';
}

struct DataArgs {
  fs::path data;
  fs::path schema;

  void add(CLI::App* app, bool required) {
    auto* d = app->add_option("--data", data, "consultation CSV")->check(CLI::ExistingFile);
    auto* s = app->add_option("--schema", schema, "schema descriptor JSON")->check(CLI::ExistingFile);
    if (required) {
      d->required();
      s->required();
    }
  }
  modn::DatasetTable load() const { return modn::load_dataset(data, schema); }
};

modn::TrainConfig load_train_config(const fs::path& path) {
  modn::TrainConfig config;
  if (!path.empty()) {
    json j = read_json(path);
    config = (j.contains("train") ? j.at("train") : j).get<modn::TrainConfig>();
  }
  return config;
}

modn::BaselineOptions baseline_options(const json& j) {
  modn::BaselineOptions o;
  o.learning_rates = j.value("learning_rates", o.learning_rates);
  o.hidden_widths = j.value("hidden_widths", o.hidden_widths);
  o.epochs = j.value("epochs", o.epochs);
  o.batch_size = j.value("batch_size", o.batch_size);
  o.patience = j.value("patience", o.patience);
  o.val_fraction = j.value("val_fraction", o.val_fraction);
  o.threshold = j.value("threshold", o.threshold);
  return o;
}

int cmd_synth(const fs::path& config_path, std::optional<std::uint64_t> seed, std::optional<int> records,
              const fs::path& out) {
  modn::SyntheticSpec spec;
  if (!config_path.empty()) {
    json j = read_json(config_path);
    spec = (j.contains("synthetic") ? j.at("synthetic") : j).get<modn::SyntheticSpec>();
  }
  if (seed) spec.seed = *seed;
  if (records) spec.n_records = *records;
  const modn::DatasetTable table = modn::generate_synthetic(spec);
  fs::create_directories(out);
  std::ofstream csv(out / "data.csv");
  modn::write_dataset_csv(csv, table);
  modn::SchemaDescriptor d{table.schema, table.targets, "", "record_id"};
  write_text(out / "schema.json", modn::schema_descriptor_to_json(d).dump(2));
  write_text(out / "truth.json", table.provenance);
  std::cerr << "wrote " << table.records.size() << " records to " << out.string() << '\n';
  return 0;
}

int cmd_train(const DataArgs& data, const fs::path& config_path, std::optional<std::uint64_t> seed,
              double val_fraction, const fs::path& out, const fs::path& report) {
  modn::TrainConfig config = load_train_config(config_path);
  if (seed) config.shuffle_seed = *seed;
  const modn::DatasetTable table = data.load();
  auto [train_set, val_set] = modn::split_train_val(table, val_fraction, config.shuffle_seed);
  const modn::ModnModel model = modn::prepare_model(train_set, config, config.shuffle_seed);
  modn::TrainResult result = modn::train(model, train_set, val_set, config);
  modn::save_model(result.model, out);
  json r{{"train_loss", result.report.train_loss},
         {"val_loss", result.report.val_loss},
         {"val_macro_f1", result.report.val_macro_f1},
         {"best_epoch", result.report.best_epoch},
         {"n_train", train_set.records.size()},
         {"n_val", val_set.records.size()}};
  if (!report.empty()) write_text(report, r.dump(2));
  std::cerr << "trained " << result.report.epochs_run() << " epochs (best " << result.report.best_epoch
            << "), saved " << out.string() << '\n';
  return 0;
}

int cmd_eval(const DataArgs& data, const fs::path& model_path, bool cv, const fs::path& config_path,
             std::optional<std::uint64_t> seed, bool corrected, const fs::path& out) {
  const modn::DatasetTable table = data.load();
  if (cv) {
    modn::ComparisonConfig config;
    if (!config_path.empty()) {
      json j = read_json(config_path);
      if (j.contains("train")) config.train = j.at("train").get<modn::TrainConfig>();
      if (j.contains("baseline")) config.baseline = baseline_options(j.at("baseline"));
      config.alpha = j.value("alpha", config.alpha);
      config.corrected = j.value("corrected", config.corrected);
      config.seed = j.value("seed", config.seed);
    }
    if (seed) config.seed = *seed;
    if (corrected) config.corrected = true;
    const modn::ComparisonTable t = modn::run_model_comparison(table, config);
    std::cout << modn::comparison_to_text(t);
    if (!out.empty()) write_text(out, modn::comparison_to_json(t).dump(2));
    return 0;
  }
  if (model_path.empty()) throw modn::ConfigError("eval needs --model unless --cv is given");
  const modn::ModnModel model = modn::load_model(model_path);
  const modn::PredictionSet ps = modn::predict(model, table);
  const std::vector<double> per_target = modn::per_target_macro_f1(ps);
  json r{{"targets", ps.targets}, {"macro_f1", per_target}, {"overall", modn::overall_f1(per_target)},
         {"n_records", table.records.size()}};
  write_text(out, r.dump(2));
  return 0;
}

int cmd_iio(const fs::path& config_path, std::optional<std::uint64_t> seed, const fs::path& out) {
  modn::ExperimentConfig config = modn::load_experiment_config(config_path);
  if (seed) config.seeds = {*seed};
  if (!out.empty()) config.output = out;
  const modn::IioExperimentResult result = modn::run_iio_experiment(config);
  json summary = json::array();
  for (const auto& row : result.table.rows) {
    summary.push_back({{"scenario", modn::to_string(row.scenario)},
                       {"overlap", row.overlap},
                       {"mean", row.ci.mean},
                       {"ci", {row.ci.lo, row.ci.hi}},
                       {"failed", row.failed}});
  }
  std::cout << summary.dump(2) << '\n';
  return 0;
}

std::vector<std::pair<std::string, modn::Value>> answers_from_json(const json& j) {
  const json& list = j.is_object() ? j.at("answers") : j;
  std::vector<std::pair<std::string, modn::Value>> answers;
  for (const auto& a : list) {
    if (a.is_array()) {
      answers.emplace_back(a.at(0).get<std::string>(), modn::value_from_json(a.at(1)));
    } else {
      answers.emplace_back(a.at("feature_id").get<std::string>(), modn::value_from_json(a.at("value")));
    }
  }
  return answers;
}

int cmd_trajectory(const fs::path& model_path, const fs::path& record_path, const DataArgs& data,
                   const std::string& record_id, const fs::path& out) {
  const modn::ModnModel model = modn::load_model(model_path);
  modn::Trajectory t;
  if (!record_path.empty()) {
    auto answers = answers_from_json(read_json(record_path));
    for (auto& [fid, v] : answers) v = modn::canonical_value(model.feature(fid), v);
    t = modn::run_consultation(model, answers);
  } else {
    if (data.data.empty() || record_id.empty()) {
      throw modn::ConfigError("trajectory needs --record, or --data/--schema with --record-id");
    }
    const modn::DatasetTable table = data.load();
    auto it = std::find_if(table.records.begin(), table.records.end(),
                           [&](const modn::ConsultationRecord& r) { return r.record_id == record_id; });
    if (it == table.records.end()) throw modn::ConfigError("no record '" + record_id + "' in " + data.data.string());
    t = modn::run_consultation(model, *it);
  }
  write_text(out, modn::trajectory_to_json(model, t).dump(2));
  return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& host, int port, const std::vector<fs::path>& models, const fs::path& session_dir) {
  std::optional<fs::path> log_dir;
  if (!session_dir.empty()) log_dir = session_dir;
  modn::ConsultationService service(log_dir);
  for (const auto& m : models) {
    const json r = service.register_model(m);
    std::cerr << "registered " << r.at("model_id").get<std::string>() << " from " << m.string() << '\n';
  }
  httplib::Server server;
  modn::mount_routes(server, service);
  g_server = &server;
  std::signal(SIGINT, [](int) { g_server->stop(); });
  std::signal(SIGTERM, [](int) { g_server->stop(); });
  if (port == 0) {
    port = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    std::cerr << "error: cannot bind " << host << ':' << port << '\n';
    return 1;
  }
  std::cout << "listening on http://" << host << ':' << port << std::endl;
  server.listen_after_bind();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modular clinical decision-support networks"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  fs::path config, out, model, record, report, session_dir;
  DataArgs data;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (data.csv, schema.json)");
  std::optional<int> records;
  synth->add_option("--config", config, "SyntheticSpec JSON");
  synth->add_option("--seed", seed);
  synth->add_option("--records", records);
  synth->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model on a CSV dataset");
  double val_fraction = 0.125;
  data.add(train, true);
  train->add_option("--config", config, "TrainConfig JSON");
  train->add_option("--seed", seed);
  train->add_option("--val-fraction", val_fraction)->check(CLI::Range(0.0, 0.9));
  train->add_option("--out", out, "model file")->required();
  train->add_option("--report", report, "loss report JSON");

  auto* eval = app.add_subcommand("eval", "macro F1 of a model, or 5x2 CV comparison with --cv");
  bool cv = false, corrected = false;
  data.add(eval, true);
  eval->add_option("--model", model);
  eval->add_flag("--cv", cv, "run the 5x2 CV comparison against baselines");
  eval->add_flag("--corrected", corrected, "use the variance-corrected 5x2cv t-test");
  eval->add_option("--config", config, "comparison config JSON");
  eval->add_option("--seed", seed);
  eval->add_option("--out", out, "JSON output file (default stdout)");

  auto* iio = app.add_subcommand("iio", "run the incompatible input-output experiment");
  iio->add_option("--config", config, "ExperimentConfig JSON")->required()->check(CLI::ExistingFile);
  iio->add_option("--seed", seed, "run a single seed");
  iio->add_option("--out", out, "output directory");

  auto* traj = app.add_subcommand("trajectory", "per-step probabilities for one consultation");
  std::string record_id;
  traj->add_option("--model", model)->required()->check(CLI::ExistingFile);
  traj->add_option("--record", record, "answers JSON: [{feature_id, value}, ...]");
  data.add(traj, false);
  traj->add_option("--record-id", record_id);
  traj->add_option("--out", out, "JSON output file (default stdout)");

  auto* serve = app.add_subcommand("serve", "HTTP consultation service");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<fs::path> models;
  serve->add_option("--host", host);
  serve->add_option("--port", port, "0 picks a free port");
  serve->add_option("--model", models, "model files to register")->check(CLI::ExistingFile);
  serve->add_option("--session-dir", session_dir, "append-only session logs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(config, seed, records, out);
    if (train->parsed()) return cmd_train(data, config, seed, val_fraction, out, report);
    if (eval->parsed()) return cmd_eval(data, model, cv, config, seed, corrected, out);
    if (iio->parsed()) return cmd_iio(config, seed, out);
    if (traj->parsed()) return cmd_trajectory(model, record, data, record_id, out);
    if (serve->parsed()) return cmd_serve(host, port, models, session_dir);
  } catch (const modn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
