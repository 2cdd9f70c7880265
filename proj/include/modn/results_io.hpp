#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

#include "modn/experiment.hpp"

namespace modn {

enum class ResultsFormat { csv, json };

/// Fixed CSV header. Each line is either a scenario row (kind "row") or a
/// pairwise test (kind "pair"); list-valued columns are ';'-separated and
/// every number is written in shortest round-trip form.
inline constexpr const char* kResultsCsvHeader =
    "kind,scenario,overlap,other_scenario,seeds,scores,mean,ci_lo,ci_hi,t,p,df,degenerate,failed,message";

nlohmann::json results_to_json(const ResultsTable& table);
ResultsTable results_from_json(const nlohmann::json& j);
void write_results_csv(std::ostream& out, const ResultsTable& table);
ResultsTable read_results_csv(std::istream& in);

/// Throws Error when the path cannot be written.
void export_results(const ResultsTable& table, const std::filesystem::path& path, ResultsFormat format);
ResultsTable import_results(const std::filesystem::path& path, ResultsFormat format);

}  // namespace modn
