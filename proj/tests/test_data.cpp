#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "modn/activations.hpp"
#include "modn/errors.hpp"
#include "modn/iio_split.hpp"
#include "modn/synthetic.hpp"

using namespace modn;

namespace {

SchemaDescriptor fixture_descriptor(std::string sentinel = "NA") {
  SchemaDescriptor d;
  d.features = {fixtures::continuous("temp", 0), fixtures::binary("cough", 1),
                fixtures::categorical("fever", {"yes", "no"}, 1)};
  d.targets = {"pneumonia"};
  d.missing_sentinel = std::move(sentinel);
  return d;
}

DatasetTable parse(const std::string& csv, const SchemaDescriptor& d) {
  std::istringstream in(csv);
  return parse_dataset(in, d);
}

}  // namespace

TEST_CASE("blank cell becomes an absent answer") {
  const auto t = parse(
      "temp,cough,fever,pneumonia\n"
      "37.5,1,yes,1\n"
      "38.1,,no,0\n"
      "36.9,0,no,0\n",
      fixture_descriptor());
  REQUIRE(t.records.size() == 3);
  CHECK(t.records[0].answers.size() == 3);
  CHECK(t.records[1].answers.size() == 2);
  CHECK(t.records[1].find("cough") == nullptr);
  CHECK(std::get<double>(t.records[1].find("temp")->value) == 38.1);
  CHECK(t.records[2].answers.size() == 3);
  CHECK(t.records[1].labels.at("pneumonia") == 0);
  CHECK(t.records[0].record_id == "row-2");
}

TEST_CASE("sentinel cells are missing too") {
  const auto t = parse("temp,cough,fever,pneumonia\nNA,1,NA,1\n", fixture_descriptor());
  CHECK(t.records[0].answers.size() == 1);
  CHECK(t.records[0].answers[0].feature_id == "cough");
}

TEST_CASE("categorical value outside levels reports coordinates") {
  try {
    parse("temp,cough,fever,pneumonia\n37,1,yes,0\n37,1,maybe,0\n", fixture_descriptor());
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.row() == 3);
    CHECK(e.column() == "fever");
    CHECK(std::string(e.what()).find("maybe") != std::string::npos);
  }
}

TEST_CASE("unparseable number and unknown column") {
  CHECK_THROWS_WITH_AS(parse("temp,cough,fever,pneumonia\n3x7,1,yes,0\n", fixture_descriptor()),
                       doctest::Contains("row 2, column 'temp'"), DataError);
  CHECK_THROWS_WITH_AS(parse("temp,cough,fever,pneumonia,shoe\n37,1,yes,0,9\n", fixture_descriptor()),
                       doctest::Contains("shoe"), DataError);
  CHECK_THROWS_AS(parse("temp,cough,pneumonia\n37,1,0\n", fixture_descriptor()), DataError);
  CHECK_THROWS_AS(parse("temp,cough,fever,pneumonia\n37,1,yes,2\n", fixture_descriptor()), DataError);
  CHECK_THROWS_AS(parse("temp,cough,fever,pneumonia\n37,7,yes,1\n", fixture_descriptor()), DataError);
}

TEST_CASE("quoted csv fields") {
  std::istringstream in("a,b\n\"x, y\",\"say \"\"hi\"\"\"\n\"multi\nline\",2\n");
  const auto rows = read_csv(in);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][0] == "x, y");
  CHECK(rows[1][1] == "say \"hi\"");
  CHECK(rows[2][0] == "multi\nline");
}

TEST_CASE("schema descriptor round-trips through json") {
  const auto d = fixture_descriptor();
  const auto back = parse_schema_descriptor(schema_descriptor_to_json(d));
  CHECK(back.features == d.features);
  CHECK(back.targets == d.targets);
  CHECK(back.missing_sentinel == d.missing_sentinel);
}

TEST_CASE("descriptor validation") {
  auto j = schema_descriptor_to_json(fixture_descriptor());
  j["features"][2]["levels"] = nlohmann::json::array({"yes", "yes"});
  CHECK_THROWS_AS(parse_schema_descriptor(j), SchemaError);
  auto k = schema_descriptor_to_json(fixture_descriptor());
  k["features"][1]["id"] = "temp";
  CHECK_THROWS_AS(parse_schema_descriptor(k), SchemaError);
}

TEST_CASE("ingestion never invents values") {
  // Property: answers in the table = non-blank, non-sentinel feature cells.
  Rng rng(3);
  const auto d = fixture_descriptor();
  for (int trial = 0; trial < 20; ++trial) {
    std::ostringstream csv;
    csv << "temp,cough,fever,pneumonia\n";
    std::size_t present = 0;
    const int rows = 1 + static_cast<int>(rng.below(30));
    for (int r = 0; r < rows; ++r) {
      auto cell = [&](const std::string& v) {
        const auto u = rng.below(3);
        if (u == 0) return std::string();
        if (u == 1) return std::string("NA");
        ++present;
        return v;
      };
      csv << cell(std::to_string(36 + rng.uniform())) << ',' << cell(rng.bernoulli(0.5) ? "1" : "0") << ','
          << cell(rng.bernoulli(0.5) ? "yes" : "no") << ',' << rng.below(2) << '\n';
    }
    const auto t = parse(csv.str(), d);
    CHECK(t.records.size() == static_cast<std::size_t>(rows));
    CHECK(t.answer_count() == present);
  }
}

TEST_CASE("csv write then load is lossless") {
  SyntheticSpec spec;
  spec.n_records = 50;
  spec.missingness = 0.3;
  const auto t = generate_synthetic(spec);
  std::ostringstream out;
  write_dataset_csv(out, t);
  SchemaDescriptor d{t.schema, t.targets, "", "record_id"};
  const auto back = parse(out.str(), d);
  CHECK(back.records == t.records);
}

TEST_CASE("z-score encoding") {
  const auto temp = fixtures::continuous("temp");
  const NormalizationStats stats{{"temp", {37.2, 1.5}}};
  CHECK(encode_answer(temp, 38.7, stats)(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(encode_answer(temp, 37.2, stats)(0) == 0.0);
}

TEST_CASE("one-hot and binary encoding") {
  const auto f = fixtures::categorical("k", {"a", "b", "c", "d"});
  const Eigen::RowVectorXd v = encode_answer(f, std::string("b"), {});
  CHECK(v.size() == 4);
  CHECK(v == (Eigen::RowVectorXd(4) << 0, 1, 0, 0).finished());
  const auto b = fixtures::binary("b");
  CHECK(encode_answer(b, canonical_value(b, std::string("yes")), {})(0) == 1.0);
  CHECK(encode_answer(b, canonical_value(b, std::string("false")), {})(0) == 0.0);
}

TEST_CASE("constant feature encodes as zero") {
  set_warnings_enabled(false);
  const auto f = fixtures::continuous("flat");
  CHECK(encode_answer(f, 5.0, {{"flat", {5.0, 0.0}}})(0) == 0.0);
  CHECK(encode_answer(f, 9.0, {{"flat", {5.0, 0.0}}})(0) == 0.0);
  set_warnings_enabled(true);
}

TEST_CASE("encoding is injective per feature") {
  const auto c = fixtures::categorical("k", {"a", "b", "c"});
  std::vector<Eigen::RowVectorXd> seen;
  for (const auto& l : c.levels) seen.push_back(encode_answer(c, l, {}));
  for (std::size_t i = 0; i < seen.size(); ++i)
    for (std::size_t j = i + 1; j < seen.size(); ++j) CHECK(seen[i] != seen[j]);
  const auto x = fixtures::continuous("x");
  const NormalizationStats stats{{"x", {1.0, 2.0}}};
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.normal(), b = rng.normal();
    if (a != b) CHECK(encode_answer(x, a, stats)(0) != encode_answer(x, b, stats)(0));
  }
}

TEST_CASE("population standard deviation over present answers") {
  DatasetTable t;
  t.schema = {fixtures::continuous("x")};
  t.targets = {"y"};
  for (double v : {1.0, 2.0, 3.0, 4.0}) t.records.push_back({"r", {{"x", v, 0}}, {{"y", 0}}});
  t.records.push_back({"missing", {}, {{"y", 1}}});
  const auto stats = compute_normalization(t);
  CHECK(stats.at("x").mean == 2.5);
  CHECK(stats.at("x").stddev == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));
}

TEST_CASE("synthetic tables are reproducible") {
  SyntheticSpec spec;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.records.size() == 2000);
  CHECK(table_hash(a) == table_hash(b));
  spec.seed = 2;
  CHECK(table_hash(generate_synthetic(spec)) != table_hash(a));
}

TEST_CASE("synthetic label rate matches the generative rule") {
  // Independent re-evaluation of the recorded rule: expected positives is the
  // sum of sigmoid(logit) over records; the count should fall within 3 SE.
  SyntheticSpec spec;
  spec.n_records = 4000;
  spec.seed = 11;
  const auto t = generate_synthetic(spec);
  const auto prov = nlohmann::json::parse(t.provenance);
  for (const auto& target : t.targets) {
    double expected = 0.0, variance = 0.0;
    int observed = 0;
    for (const auto& r : t.records) {
      double z = prov.at("bias").at(target).get<double>();
      for (const auto& [fid, w] : prov.at("weights").at(target).items()) {
        const Answer* a = r.find(fid);
        const FeatureSchema* f = t.feature(fid);
        if (f->kind == FeatureKind::continuous) z += w.at(0).get<double>() * std::get<double>(a->value);
        if (f->kind == FeatureKind::binary) z += w.at(0).get<double>() * (2.0 * std::get<double>(a->value) - 1.0);
        if (f->kind == FeatureKind::categorical) {
          const auto& lv = f->levels;
          const auto idx = std::find(lv.begin(), lv.end(), std::get<std::string>(a->value)) - lv.begin();
          z += w.at(idx).get<double>();
        }
      }
      const double p = 1.0 / (1.0 + std::exp(-z));
      expected += p;
      variance += p * (1.0 - p);
      observed += r.labels.at(target);
    }
    CAPTURE(target);
    CHECK(std::abs(observed - expected) < 3.0 * std::sqrt(variance));
  }
}

TEST_CASE("noiseless threshold labels follow the sign of the logit") {
  SyntheticSpec spec;
  spec.rule = LabelRule::threshold;
  spec.n_records = 500;
  const auto t = generate_synthetic(spec);
  const auto truth = synthetic_truth(t);
  for (const auto& r : t.records)
    for (const auto& target : t.targets) CHECK(r.labels.at(target) == (truth.logit(target, r, t.schema) > 0.0 ? 1 : 0));
}

TEST_CASE("missingness removes answers at the requested rate") {
  SyntheticSpec spec;
  spec.missingness = 0.3;
  const auto t = generate_synthetic(spec);
  const double rate = 1.0 - static_cast<double>(t.answer_count()) / (2000.0 * spec.n_features());
  const double se = std::sqrt(0.3 * 0.7 / (2000.0 * spec.n_features()));
  CHECK(std::abs(rate - 0.3) < 3.0 * se);
}

TEST_CASE("deleted feature count") {
  CHECK(deleted_feature_count(10, 1.0) == 0);
  CHECK(deleted_feature_count(10, 0.6) == 4);
  CHECK(deleted_feature_count(10, 0.8) == 2);
  CHECK(deleted_feature_count(10, 0.7) == 3);
  CHECK(deleted_feature_count(10, 0.65) == 4);
  CHECK(deleted_feature_count(7, 0.5) == 4);
}

TEST_CASE("iio split partitions and deletes") {
  SyntheticSpec spec;
  const auto full = generate_synthetic(spec);
  const auto split = simulate_iio_split(full, 0.6, {1200, 300, 500}, 0);
  CHECK(split.source_a.records.size() == 1200);
  CHECK(split.target_b.records.size() == 300);
  CHECK(split.test.records.size() == 500);
  CHECK(split.deleted_features.size() == 4);
  CHECK(split.source_a.schema.size() == 6);
  CHECK(split.target_b.schema.size() == 10);
  CHECK(split.test.schema.size() == 10);

  // A is a strict subset of B, and A's records never mention deleted features.
  const auto a_ids = split.source_a.feature_ids();
  for (const auto& id : a_ids) CHECK(split.target_b.feature(id) != nullptr);
  for (const auto& r : split.source_a.records)
    for (const auto& a : r.answers) CHECK(a_ids.count(a.feature_id) == 1);

  std::set<std::string> ids;
  for (const auto* t : {&split.source_a, &split.target_b, &split.test})
    for (const auto& r : t->records) CHECK(ids.insert(r.record_id).second);
}

TEST_CASE("iio split with full overlap keeps all features") {
  const auto full = generate_synthetic({});
  const auto split = simulate_iio_split(full, 1.0, {100, 100, 100}, 4);
  CHECK(split.deleted_features.empty());
  CHECK(split.source_a.schema == split.target_b.schema);
}

TEST_CASE("iio split is seeded: identical per seed, varied across seeds") {
  const auto full = generate_synthetic({});
  std::set<std::vector<std::string>> deleted_sets;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = simulate_iio_split(full, 0.6, {200, 100, 100}, seed);
    const auto b = simulate_iio_split(full, 0.6, {200, 100, 100}, seed);
    CHECK(a.deleted_features == b.deleted_features);
    CHECK(a.test.records == b.test.records);
    auto d = a.deleted_features;
    std::sort(d.begin(), d.end());
    deleted_sets.insert(d);
  }
  CHECK(deleted_sets.size() > 10);
}

TEST_CASE("iio split argument errors") {
  const auto full = generate_synthetic({});
  CHECK_THROWS_AS(simulate_iio_split(full, 0.0, {10, 10, 10}, 0), ConfigError);
  CHECK_THROWS_AS(simulate_iio_split(full, 1.1, {10, 10, 10}, 0), ConfigError);
  CHECK_THROWS_AS(simulate_iio_split(full, 0.5, {1500, 400, 200}, 0), ConfigError);
}

TEST_CASE("load_dataset from files") {
  const auto dir = std::filesystem::temp_directory_path() / "modn_test_data";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "s.json") << schema_descriptor_to_json(fixture_descriptor()).dump();
  std::ofstream(dir / "d.csv") << "temp,cough,fever,pneumonia\n37.5,1,yes,1\n";
  const auto t = load_dataset(dir / "d.csv", dir / "s.json");
  CHECK(t.records.size() == 1);
  CHECK_THROWS_AS(load_dataset(dir / "nope.csv", dir / "s.json"), Error);
  std::filesystem::remove_all(dir);
}
