#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace modn {

enum class FeatureKind { continuous, binary, categorical };

std::string to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& s);

/// One question of the consultation.
struct FeatureSchema {
  std::string id;
  std::string question;
  FeatureKind kind = FeatureKind::continuous;
  std::vector<std::string> levels;  // categorical only
  int group = 0;                    // simultaneity group tag

  int encoded_width() const { return kind == FeatureKind::categorical ? static_cast<int>(levels.size()) : 1; }
  /// Throws SchemaError on empty/duplicate levels or levels on a non-categorical feature.
  void validate() const;

  bool operator==(const FeatureSchema&) const = default;
};

/// Raw answer: a number for continuous and binary (0/1) features, a level
/// name for categorical ones.
using Value = std::variant<double, std::string>;

std::string value_to_string(const Value& v);
nlohmann::json value_to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);

/// Checks v against the feature and returns its canonical form: binary
/// answers accept 0/1, true/false, yes/no; continuous answers accept numeric
/// strings. Throws DataError with a hint listing what is accepted.
Value canonical_value(const FeatureSchema& feature, const Value& v);

struct Answer {
  std::string feature_id;
  Value value;
  int group = 0;

  bool operator==(const Answer&) const = default;
};

/// Ordered answers of one consultation plus its target labels. Features the
/// patient was never asked are simply absent.
struct ConsultationRecord {
  std::string record_id;
  std::vector<Answer> answers;
  std::map<std::string, int> labels;

  const Answer* find(const std::string& feature_id) const;
  bool operator==(const ConsultationRecord&) const = default;
};

struct DatasetTable {
  std::vector<FeatureSchema> schema;
  std::vector<std::string> targets;
  std::vector<ConsultationRecord> records;
  std::string provenance;

  const FeatureSchema* feature(const std::string& id) const;
  std::set<std::string> feature_ids() const;
  /// Throws SchemaError/DataError if any record disagrees with schema/targets.
  void validate() const;
  std::size_t answer_count() const;
};

/// Stable 64-bit hash of the feature schema list and target list.
std::uint64_t schema_fingerprint(const std::vector<FeatureSchema>& schema,
                                 const std::vector<std::string>& targets);

/// Stable 64-bit hash of the full table content.
std::uint64_t table_hash(const DatasetTable& table);

/// Parsed schema descriptor file.
struct SchemaDescriptor {
  std::vector<FeatureSchema> features;
  std::vector<std::string> targets;
  std::string missing_sentinel;  // empty cells are always missing
  std::string id_column;         // optional column holding the record id
};

SchemaDescriptor parse_schema_descriptor(const nlohmann::json& j);
SchemaDescriptor load_schema_descriptor(const std::filesystem::path& path);
nlohmann::json schema_descriptor_to_json(const SchemaDescriptor& d);
nlohmann::json feature_to_json(const FeatureSchema& f);
FeatureSchema feature_from_json(const nlohmann::json& j);

/// Reads a CSV export (header row, one consultation per row). Blank or
/// sentinel cells become absent answers; answers are ordered by schema
/// position. Errors carry 1-based row numbers counting the header as row 1.
DatasetTable parse_dataset(std::istream& csv, const SchemaDescriptor& schema);
DatasetTable load_dataset(const std::filesystem::path& data_path,
                          const std::filesystem::path& schema_path);

/// Writes a table in the same CSV layout load_dataset reads.
void write_dataset_csv(std::ostream& out, const DatasetTable& table);

/// Minimal RFC 4180 reader; quoted fields may contain commas, quotes and newlines.
std::vector<std::vector<std::string>> read_csv(std::istream& in);

struct FeatureStats {
  double mean = 0.0;
  double stddev = 1.0;

  bool operator==(const FeatureStats&) const = default;
};

/// Per continuous feature z-score parameters.
using NormalizationStats = std::map<std::string, FeatureStats>;

/// Mean and population standard deviation of every continuous feature over
/// the answers present in table. Features with no answers get (0, 1).
NormalizationStats compute_normalization(const DatasetTable& table);

/// Encodes a raw answer: z-score for continuous, 0/1 for binary, one-hot for
/// categorical. A zero stddev encodes as 0 and logs a warning.
Eigen::RowVectorXd encode_answer(const FeatureSchema& feature, const Value& value,
                                 const NormalizationStats& stats);

/// Copy of table keeping only the listed features, in schema and in records.
DatasetTable restrict_features(const DatasetTable& table, const std::set<std::string>& keep);

/// Records at the given positions, schema/targets shared.
DatasetTable subset(const DatasetTable& table, const std::vector<std::size_t>& indices);

/// Concatenates records of two tables; the result uses `schema_owner`'s schema.
DatasetTable concat(const DatasetTable& a, const DatasetTable& b, const DatasetTable& schema_owner);

/// Number of times any imputation routine has filled a missing value in this
/// process. MoDN inference never touches it.
std::atomic<std::uint64_t>& imputation_counter();

/// Warnings go through here so tests and the CLI can silence or capture them.
void log_warning(const std::string& message);
/// Emits message only the first time key is seen in this process.
void log_warning_once(const std::string& key, const std::string& message);
void set_warnings_enabled(bool enabled);

}  // namespace modn
