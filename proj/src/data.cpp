#include "modn/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "modn/errors.hpp"
#include "modn/random.hpp"

namespace modn {

namespace {

std::atomic<bool> g_warnings{true};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::optional<double> parse_number(const std::string& text) {
  const std::string s = trim(text);
  if (s.empty()) return std::nullopt;
  double out = 0.0;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(out)) return std::nullopt;
  return out;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join_levels(const std::vector<std::string>& levels) {
  std::string out = "{";
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i > 0) out += ", ";
    out += levels[i];
  }
  return out + "}";
}

}  // namespace

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::continuous: return "continuous";
    case FeatureKind::binary: return "binary";
    case FeatureKind::categorical: return "categorical";
  }
  return "continuous";
}

FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "continuous") return FeatureKind::continuous;
  if (s == "binary") return FeatureKind::binary;
  if (s == "categorical") return FeatureKind::categorical;
  throw SchemaError("unknown feature kind '" + s + "'");
}

void FeatureSchema::validate() const {
  if (id.empty()) throw SchemaError("feature with empty id");
  if (kind == FeatureKind::categorical) {
    if (levels.empty()) throw SchemaError("categorical feature '" + id + "' has no levels");
    std::set<std::string> seen(levels.begin(), levels.end());
    if (seen.size() != levels.size()) throw SchemaError("categorical feature '" + id + "' has duplicate levels");
  } else if (!levels.empty()) {
    throw SchemaError("feature '" + id + "' declares levels but is not categorical");
  }
}

std::string value_to_string(const Value& v) {
  if (const double* d = std::get_if<double>(&v)) return format_double(*d);
  return std::get<std::string>(v);
}

nlohmann::json value_to_json(const Value& v) {
  if (const double* d = std::get_if<double>(&v)) return *d;
  return std::get<std::string>(v);
}

Value value_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_boolean()) return j.get<bool>() ? 1.0 : 0.0;
  if (j.is_string()) return j.get<std::string>();
  throw DataError("answer value must be a number, boolean or string");
}

Value canonical_value(const FeatureSchema& feature, const Value& v) {
  switch (feature.kind) {
    case FeatureKind::continuous: {
      if (const double* d = std::get_if<double>(&v)) {
        if (!std::isfinite(*d)) throw DataError("feature '" + feature.id + "' expects a finite number");
        return *d;
      }
      if (auto d = parse_number(std::get<std::string>(v))) return *d;
      throw DataError("feature '" + feature.id + "' expects a number, got '" + std::get<std::string>(v) + "'");
    }
    case FeatureKind::binary: {
      if (const double* d = std::get_if<double>(&v)) {
        if (*d == 0.0 || *d == 1.0) return *d;
      } else {
        const std::string s = lower(trim(std::get<std::string>(v)));
        if (s == "1" || s == "true" || s == "yes") return 1.0;
        if (s == "0" || s == "false" || s == "no") return 0.0;
      }
      throw DataError("feature '" + feature.id + "' expects a binary answer (0/1, true/false, yes/no), got '" +
                      value_to_string(v) + "'");
    }
    case FeatureKind::categorical: {
      const std::string s = std::holds_alternative<double>(v) ? format_double(std::get<double>(v))
                                                              : trim(std::get<std::string>(v));
      if (std::find(feature.levels.begin(), feature.levels.end(), s) != feature.levels.end()) return s;
      throw DataError("feature '" + feature.id + "' value '" + s + "' is not one of " +
                      join_levels(feature.levels));
    }
  }
  return v;
}

const Answer* ConsultationRecord::find(const std::string& feature_id) const {
  for (const Answer& a : answers) {
    if (a.feature_id == feature_id) return &a;
  }
  return nullptr;
}

const FeatureSchema* DatasetTable::feature(const std::string& id) const {
  for (const FeatureSchema& f : schema) {
    if (f.id == id) return &f;
  }
  return nullptr;
}

std::set<std::string> DatasetTable::feature_ids() const {
  std::set<std::string> ids;
  for (const FeatureSchema& f : schema) ids.insert(f.id);
  return ids;
}

std::size_t DatasetTable::answer_count() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.answers.size();
  return n;
}

void DatasetTable::validate() const {
  std::set<std::string> ids;
  for (const FeatureSchema& f : schema) {
    f.validate();
    if (!ids.insert(f.id).second) throw SchemaError("duplicate feature id '" + f.id + "'");
  }
  std::set<std::string> target_ids;
  for (const auto& t : targets) {
    if (!target_ids.insert(t).second) throw SchemaError("duplicate target id '" + t + "'");
    if (ids.count(t) != 0) throw SchemaError("'" + t + "' is both a feature and a target");
  }
  for (const auto& r : records) {
    std::set<std::string> seen;
    for (const Answer& a : r.answers) {
      const FeatureSchema* f = feature(a.feature_id);
      if (f == nullptr) throw DataError("record '" + r.record_id + "' answers unknown feature '" + a.feature_id + "'");
      if (!seen.insert(a.feature_id).second) {
        throw DataError("record '" + r.record_id + "' answers '" + a.feature_id + "' twice");
      }
      canonical_value(*f, a.value);
    }
    for (const auto& [t, y] : r.labels) {
      if (target_ids.count(t) == 0) throw DataError("record '" + r.record_id + "' labels unknown target '" + t + "'");
      if (y != 0 && y != 1) throw DataError("record '" + r.record_id + "' label for '" + t + "' is not 0/1");
    }
  }
}

nlohmann::json feature_to_json(const FeatureSchema& f) {
  nlohmann::json j{{"id", f.id}, {"kind", to_string(f.kind)}, {"group", f.group}, {"question", f.question}};
  if (f.kind == FeatureKind::categorical) j["levels"] = f.levels;
  return j;
}

FeatureSchema feature_from_json(const nlohmann::json& j) {
  FeatureSchema f;
  f.id = j.at("id").get<std::string>();
  f.kind = feature_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("levels")) f.levels = j.at("levels").get<std::vector<std::string>>();
  f.group = j.value("group", 0);
  f.question = j.value("question", std::string());
  f.validate();
  return f;
}

std::uint64_t schema_fingerprint(const std::vector<FeatureSchema>& schema,
                                 const std::vector<std::string>& targets) {
  nlohmann::json j{{"features", nlohmann::json::array()}, {"targets", targets}};
  for (const auto& f : schema) j["features"].push_back(feature_to_json(f));
  return fnv1a(j.dump());
}

std::uint64_t table_hash(const DatasetTable& table) {
  std::uint64_t h = schema_fingerprint(table.schema, table.targets);
  for (const auto& r : table.records) {
    std::string row = r.record_id + '\x1f';
    for (const Answer& a : r.answers) {
      row += a.feature_id + '=' + value_to_string(a.value) + '@' + std::to_string(a.group) + '\x1f';
    }
    for (const auto& [t, y] : r.labels) row += t + ':' + std::to_string(y) + '\x1f';
    h = fnv1a(row, h);
  }
  return h;
}

SchemaDescriptor parse_schema_descriptor(const nlohmann::json& j) {
  SchemaDescriptor d;
  try {
    for (const auto& fj : j.at("features")) d.features.push_back(feature_from_json(fj));
    d.targets = j.at("targets").get<std::vector<std::string>>();
    d.missing_sentinel = j.value("missing_sentinel", std::string());
    d.id_column = j.value("id_column", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed schema descriptor: ") + e.what());
  }
  DatasetTable probe{d.features, d.targets, {}, {}};
  probe.validate();
  if (d.targets.empty()) throw SchemaError("schema descriptor declares no targets");
  return d;
}

SchemaDescriptor load_schema_descriptor(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open schema descriptor " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema descriptor " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_schema_descriptor(j);
}

nlohmann::json schema_descriptor_to_json(const SchemaDescriptor& d) {
  nlohmann::json j{{"features", nlohmann::json::array()},
                   {"targets", d.targets},
                   {"missing_sentinel", d.missing_sentinel}};
  for (const auto& f : d.features) j["features"].push_back(feature_to_json(f));
  if (!d.id_column.empty()) j["id_column"] = d.id_column;
  return j;
}

std::vector<std::vector<std::string>> read_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && in.peek() == '\n') in.get();
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw DataError("unterminated quoted field in CSV", rows.size() + 1);
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

DatasetTable parse_dataset(std::istream& csv, const SchemaDescriptor& schema) {
  auto rows = read_csv(csv);
  if (rows.empty()) throw DataError("CSV has no header row", 1);
  const auto& header = rows.front();
  if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) rows.front()[0].erase(0, 3);

  DatasetTable table;
  table.schema = schema.features;
  table.targets = schema.targets;

  std::map<std::string, std::size_t> feature_pos, target_pos;
  for (std::size_t i = 0; i < schema.features.size(); ++i) feature_pos[schema.features[i].id] = i;
  for (std::size_t i = 0; i < schema.targets.size(); ++i) target_pos[schema.targets[i]] = i;

  std::vector<long> col_feature(header.size(), -1), col_target(header.size(), -1);
  long id_col = -1;
  std::set<std::string> seen;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = trim(rows.front()[c]);
    if (!seen.insert(name).second) throw DataError("duplicate column", 1, name);
    if (!schema.id_column.empty() && name == schema.id_column) {
      id_col = static_cast<long>(c);
    } else if (auto it = feature_pos.find(name); it != feature_pos.end()) {
      col_feature[c] = static_cast<long>(it->second);
    } else if (auto jt = target_pos.find(name); jt != target_pos.end()) {
      col_target[c] = static_cast<long>(jt->second);
    } else {
      throw DataError("unknown column", 1, name);
    }
  }
  for (const auto& f : schema.features) {
    if (seen.count(f.id) == 0) throw DataError("feature column missing from CSV", 1, f.id);
  }
  for (const auto& t : schema.targets) {
    if (seen.count(t) == 0) throw DataError("target column missing from CSV", 1, t);
  }

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    const std::size_t row_no = r + 1;
    if (cells.size() == 1 && trim(cells[0]).empty()) continue;  // trailing blank line
    if (cells.size() != header.size()) {
      throw DataError("expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()),
                      row_no);
    }
    ConsultationRecord rec;
    rec.record_id = id_col >= 0 ? trim(cells[id_col]) : "row-" + std::to_string(row_no);
    std::vector<std::optional<Answer>> by_feature(schema.features.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string cell = trim(cells[c]);
      const std::string& column = rows.front()[c];
      if (col_feature[c] >= 0) {
        if (cell.empty() || (!schema.missing_sentinel.empty() && cell == schema.missing_sentinel)) continue;
        const FeatureSchema& f = schema.features[col_feature[c]];
        Value v;
        try {
          v = canonical_value(f, Value(cell));
        } catch (const DataError& e) {
          throw DataError(e.what(), row_no, column);
        }
        by_feature[col_feature[c]] = Answer{f.id, std::move(v), f.group};
      } else if (col_target[c] >= 0) {
        auto y = parse_number(cell);
        if (!y || (*y != 0.0 && *y != 1.0)) throw DataError("target label must be 0 or 1, got '" + cell + "'", row_no, column);
        rec.labels[schema.targets[col_target[c]]] = static_cast<int>(*y);
      }
    }
    for (auto& a : by_feature) {
      if (a) rec.answers.push_back(std::move(*a));
    }
    table.records.push_back(std::move(rec));
  }
  return table;
}

DatasetTable load_dataset(const std::filesystem::path& data_path, const std::filesystem::path& schema_path) {
  const SchemaDescriptor schema = load_schema_descriptor(schema_path);
  std::ifstream in(data_path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + data_path.string());
  DatasetTable table = parse_dataset(in, schema);
  table.provenance = "csv:" + data_path.string();
  return table;
}

namespace {
std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}
}  // namespace

void write_dataset_csv(std::ostream& out, const DatasetTable& table) {
  out << "record_id";
  for (const auto& f : table.schema) out << ',' << csv_escape(f.id);
  for (const auto& t : table.targets) out << ',' << csv_escape(t);
  out << '\n';
  for (const auto& r : table.records) {
    out << csv_escape(r.record_id);
    for (const auto& f : table.schema) {
      out << ',';
      if (const Answer* a = r.find(f.id)) out << csv_escape(value_to_string(a->value));
    }
    for (const auto& t : table.targets) {
      out << ',';
      if (auto it = r.labels.find(t); it != r.labels.end()) out << it->second;
    }
    out << '\n';
  }
}

NormalizationStats compute_normalization(const DatasetTable& table) {
  NormalizationStats stats;
  for (const auto& f : table.schema) {
    if (f.kind != FeatureKind::continuous) continue;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : table.records) {
      if (const Answer* a = r.find(f.id)) {
        sum += std::get<double>(a->value);
        ++n;
      }
    }
    if (n == 0) {
      stats[f.id] = FeatureStats{};
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& r : table.records) {
      if (const Answer* a = r.find(f.id)) {
        const double d = std::get<double>(a->value) - mean;
        ss += d * d;
      }
    }
    stats[f.id] = FeatureStats{mean, std::sqrt(ss / static_cast<double>(n))};
  }
  return stats;
}

Eigen::RowVectorXd encode_answer(const FeatureSchema& feature, const Value& value,
                                 const NormalizationStats& stats) {
  const Value v = canonical_value(feature, value);
  switch (feature.kind) {
    case FeatureKind::continuous: {
      FeatureStats s;
      if (auto it = stats.find(feature.id); it != stats.end()) s = it->second;
      Eigen::RowVectorXd out(1);
      if (s.stddev == 0.0) {
        log_warning_once("zero-stddev:" + feature.id, "feature '" + feature.id + "' has zero stddev; encoding as 0");
        out(0) = 0.0;
      } else {
        out(0) = (std::get<double>(v) - s.mean) / s.stddev;
      }
      return out;
    }
    case FeatureKind::binary: {
      Eigen::RowVectorXd out(1);
      out(0) = std::get<double>(v);
      return out;
    }
    case FeatureKind::categorical: {
      Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(feature.encoded_width());
      const auto& s = std::get<std::string>(v);
      const auto pos = std::find(feature.levels.begin(), feature.levels.end(), s) - feature.levels.begin();
      out(pos) = 1.0;
      return out;
    }
  }
  return {};
}

DatasetTable restrict_features(const DatasetTable& table, const std::set<std::string>& keep) {
  DatasetTable out;
  out.targets = table.targets;
  out.provenance = table.provenance;
  for (const auto& f : table.schema) {
    if (keep.count(f.id) != 0) out.schema.push_back(f);
  }
  out.records.reserve(table.records.size());
  for (const auto& r : table.records) {
    ConsultationRecord rr{r.record_id, {}, r.labels};
    for (const auto& a : r.answers) {
      if (keep.count(a.feature_id) != 0) rr.answers.push_back(a);
    }
    out.records.push_back(std::move(rr));
  }
  return out;
}

DatasetTable subset(const DatasetTable& table, const std::vector<std::size_t>& indices) {
  DatasetTable out{table.schema, table.targets, {}, table.provenance};
  out.records.reserve(indices.size());
  for (std::size_t i : indices) out.records.push_back(table.records.at(i));
  return out;
}

DatasetTable concat(const DatasetTable& a, const DatasetTable& b, const DatasetTable& schema_owner) {
  DatasetTable out{schema_owner.schema, schema_owner.targets, a.records, schema_owner.provenance};
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  return out;
}

std::atomic<std::uint64_t>& imputation_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

void log_warning(const std::string& message) {
  if (g_warnings.load(std::memory_order_relaxed)) std::cerr << "warning: " << message << '\n';
}

void log_warning_once(const std::string& key, const std::string& message) {
  static std::mutex mutex;
  static std::set<std::string> seen;
  {
    std::lock_guard lock(mutex);
    if (!seen.insert(key).second) return;
  }
  log_warning(message);
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

}  // namespace modn
