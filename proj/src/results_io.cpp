#include "modn/results_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "modn/errors.hpp"

namespace modn {

namespace {

std::string num(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad number '" + s + "' in results CSV");
  return v;
}

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad integer '" + s + "' in results CSV");
  return v;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ";" : "") + f(xs[i]);
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) out.push_back(part);
  return out;
}

std::string escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace

nlohmann::json results_to_json(const ResultsTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"scenario", to_string(r.scenario)},
                    {"overlap", r.overlap},
                    {"seeds", r.seeds},
                    {"scores", r.scores},
                    {"mean", r.ci.mean},
                    {"ci_lo", r.ci.lo},
                    {"ci_hi", r.ci.hi},
                    {"failed", r.failed},
                    {"message", r.message}});
  }
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : table.comparisons) {
    pairs.push_back({{"overlap", p.overlap},
                     {"a", to_string(p.a)},
                     {"b", to_string(p.b)},
                     {"t", p.test.t},
                     {"p", p.test.p},
                     {"df", p.test.df},
                     {"degenerate", p.test.degenerate}});
  }
  return {{"rows", rows}, {"comparisons", pairs}};
}

ResultsTable results_from_json(const nlohmann::json& j) {
  ResultsTable table;
  try {
    for (const auto& r : j.at("rows")) {
      ResultRow row;
      row.scenario = scenario_from_string(r.at("scenario").get<std::string>());
      row.overlap = r.at("overlap").get<double>();
      r.at("seeds").get_to(row.seeds);
      r.at("scores").get_to(row.scores);
      row.ci = MeanCi{r.at("mean").get<double>(), r.at("ci_lo").get<double>(), r.at("ci_hi").get<double>()};
      row.failed = r.at("failed").get<bool>();
      row.message = r.at("message").get<std::string>();
      table.rows.push_back(std::move(row));
    }
    for (const auto& p : j.at("comparisons")) {
      PairwiseEntry e;
      e.overlap = p.at("overlap").get<double>();
      e.a = scenario_from_string(p.at("a").get<std::string>());
      e.b = scenario_from_string(p.at("b").get<std::string>());
      e.test = TTestResult{p.at("t").get<double>(), p.at("p").get<double>(), p.at("df").get<double>(),
                           p.at("degenerate").get<bool>()};
      table.comparisons.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed results JSON: ") + e.what());
  }
  return table;
}

void write_results_csv(std::ostream& out, const ResultsTable& table) {
  out << kResultsCsvHeader << '\n';
  for (const auto& r : table.rows) {
    out << "row," << to_string(r.scenario) << ',' << num(r.overlap) << ",,"
        << join(r.seeds, [](std::uint64_t s) { return std::to_string(s); }) << ','
        << join(r.scores, [](double s) { return num(s); }) << ',' << num(r.ci.mean) << ',' << num(r.ci.lo) << ','
        << num(r.ci.hi) << ",,,,," << (r.failed ? 1 : 0) << ',' << escape(r.message) << '\n';
  }
  for (const auto& p : table.comparisons) {
    out << "pair," << to_string(p.a) << ',' << num(p.overlap) << ',' << to_string(p.b) << ",,,,,,"
        << num(p.test.t) << ',' << num(p.test.p) << ',' << num(p.test.df) << ',' << (p.test.degenerate ? 1 : 0)
        << ",,\n";
  }
}

ResultsTable read_results_csv(std::istream& in) {
  const auto rows = read_csv(in);
  if (rows.empty() || [&] {
        std::string h;
        for (std::size_t i = 0; i < rows[0].size(); ++i) h += (i ? "," : "") + rows[0][i];
        return h != kResultsCsvHeader;
      }()) {
    throw DataError("results CSV header mismatch", 1);
  }
  ResultsTable table;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (c.size() == 1 && c[0].empty()) continue;
    if (c.size() != 15) throw DataError("results CSV row has " + std::to_string(c.size()) + " cells", i + 1);
    if (c[0] == "row") {
      ResultRow r;
      r.scenario = scenario_from_string(c[1]);
      r.overlap = parse_double(c[2]);
      for (const auto& s : split(c[4], ';')) r.seeds.push_back(parse_u64(s));
      for (const auto& s : split(c[5], ';')) r.scores.push_back(parse_double(s));
      r.ci = MeanCi{parse_double(c[6]), parse_double(c[7]), parse_double(c[8])};
      r.failed = c[13] == "1";
      r.message = c[14];
      table.rows.push_back(std::move(r));
    } else if (c[0] == "pair") {
      PairwiseEntry p;
      p.a = scenario_from_string(c[1]);
      p.overlap = parse_double(c[2]);
      p.b = scenario_from_string(c[3]);
      p.test = TTestResult{parse_double(c[9]), parse_double(c[10]), parse_double(c[11]), c[12] == "1"};
      table.comparisons.push_back(p);
    } else {
      throw DataError("unknown row kind '" + c[0] + "'", i + 1);
    }
  }
  return table;
}

void export_results(const ResultsTable& table, const std::filesystem::path& path, ResultsFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write results to " + path.string());
  if (format == ResultsFormat::csv) {
    write_results_csv(out, table);
  } else {
    out << results_to_json(table).dump(2) << '\n';
  }
  if (!out) throw Error("failed writing results to " + path.string());
}

ResultsTable import_results(const std::filesystem::path& path, ResultsFormat format) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  if (format == ResultsFormat::csv) return read_results_csv(in);
  return results_from_json(nlohmann::json::parse(in));
}

}  // namespace modn
