// Real-data acceptance on the public ePOCT export. Point MODN_EPOCT_CSV and
// MODN_EPOCT_SCHEMA at the CSV and its schema descriptor; without them the
// test reports itself skipped (exit 77).

#include <cstdlib>
#include <iomanip>
#include <iostream>

#include "modn/experiment.hpp"
#include "modn/metrics.hpp"
#include "modn/training.hpp"

using namespace modn;

int main() {
  const char* csv = std::getenv("MODN_EPOCT_CSV");
  const char* schema = std::getenv("MODN_EPOCT_SCHEMA");
  if (csv == nullptr || schema == nullptr || *csv == '\0' || *schema == '\0') {
    std::cout << "SKIP  real-data ingestion: set MODN_EPOCT_CSV and MODN_EPOCT_SCHEMA" << std::endl;
    return 77;
  }
  constexpr std::size_t kExpectedRecords = 3192;
  try {
    DatasetSource source;
    source.csv = csv;
    source.schema = schema;
    const auto before = imputation_counter().load();
    const auto data = source.load();
    const auto imputed = imputation_counter().load() - before;
    const bool loaded = data.records.size() == kExpectedRecords && imputed == 0;
    std::cout << (loaded ? "PASS" : "FAIL") << "  real-data ingestion: " << data.records.size() << " records (expected "
              << kExpectedRecords << "), " << data.schema.size() << " features, " << data.targets.size()
              << " targets, " << data.answer_count() << " answers, " << imputed << " imputed" << std::endl;
    if (!loaded) return 1;

    auto [train_set, test_set] = split_train_val(data, 0.2, 0);
    auto [fit_set, val_set] = split_train_val(train_set, 0.125, 0);
    TrainConfig config;
    const auto result = train(prepare_model(fit_set, config, 0), fit_set, val_set, config);
    const auto ps = predict(result.model, test_set);
    const auto scores = per_target_macro_f1(ps);
    std::cout << std::left << std::setw(24) << "target" << "macro F1" << '\n';
    for (std::size_t d = 0; d < scores.size(); ++d)
      std::cout << std::setw(24) << ps.targets[d] << std::fixed << std::setprecision(4) << scores[d] << '\n';
    std::cout << std::setw(24) << "overall" << overall_f1(scores) << '\n';
    std::cout << "PASS  real-data training: " << result.report.epochs_run() << " epochs, best " << result.report.best_epoch
              << std::endl;
    return 0;
  } catch (const std::exception& e) {
    std::cout << "FAIL  real-data ingestion: " << e.what() << std::endl;
    return 1;
  }
}
