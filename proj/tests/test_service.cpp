#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "fixtures.hpp"
#include "modn/model_io.hpp"
#include "modn/service.hpp"

#include <httplib.h>

using namespace modn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("modn_service_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModnModel fixture_model(std::uint64_t seed = 3) {
  ModelOptions o;
  o.state_dim = 5;
  o.seed = seed;
  auto m = init_model(fixtures::mixed_schema(), {"flu", "cold", "otitis"}, o);
  m.normalization["temp"] = {37.2, 1.5};
  m.normalization["weight"] = {20.0, 6.0};
  m.params.at("state/S0").value << 0.3, -0.1, 0.2, 0.0, 0.5;
  return m;
}

/// Service on an ephemeral loopback port, torn down with the object.
struct Harness {
  ConsultationService service;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit Harness(std::optional<fs::path> log_dir = std::nullopt) : service(std::move(log_dir)) {
    mount_routes(server, service);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Harness() {
    server.stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    return c;
  }
};

struct Reply {
  int status = 0;
  json body;
};

Reply call(const Harness& h, const std::string& method, const std::string& path, const json& body = nullptr) {
  auto c = h.client();
  httplib::Result r;
  if (method == "GET") r = c.Get(path);
  if (method == "POST") r = c.Post(path, body.dump(), "application/json");
  if (method == "DELETE") r = c.Delete(path);
  REQUIRE(r);
  return {r->status, json::parse(r->body)};
}

std::vector<double> probs(const json& reply) { return reply.at("probabilities").get<std::vector<double>>(); }

std::vector<double> row_of(const Eigen::RowVectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::string save_fixture(const fs::path& dir, const ModnModel& m, const std::string& name = "model.modn") {
  const auto path = dir / name;
  save_model(m, path);
  return path.string();
}

/// Runs `modn trajectory` and returns its JSON.
json cli_trajectory(const fs::path& model, const json& answers, const fs::path& dir) {
  const auto rec = dir / "record.json";
  const auto out = dir / "cli_out.json";
  std::ofstream(rec) << answers.dump();
  const std::string cmd = std::string(MODN_CLI_PATH) + " trajectory --model " + model.string() + " --record " +
                          rec.string() + " --out " + out.string();
  REQUIRE(std::system(cmd.c_str()) == 0);
  std::ifstream in(out);
  return json::parse(in);
}

const json kFiveAnswers = json::array({{{"feature_id", "age"}, {"value", "child"}},
                                       {{"feature_id", "temp"}, {"value", 38.7}},
                                       {{"feature_id", "cough"}, {"value", "yes"}},
                                       {{"feature_id", "weight"}, {"value", 14.25}},
                                       {{"feature_id", "missing_in_model"}, {"value", 1}}});

}  // namespace

TEST_CASE("empty registry lists no models; unknown ids are 404") {
  Harness h;
  const auto r = call(h, "GET", "/models");
  CHECK(r.status == 200);
  CHECK(r.body.at("models").empty());
  const auto s = call(h, "GET", "/models/m9/schema");
  CHECK(s.status == 404);
  CHECK(s.body.at("code") == "not_found");
  CHECK(s.body.contains("message"));
  CHECK(s.body.contains("detail"));
  CHECK(call(h, "POST", "/sessions", {{"model_id", "m9"}}).status == 404);
  CHECK(call(h, "GET", "/sessions/s404/predictions").status == 404);
  CHECK(call(h, "GET", "/sessions/s404/trajectory").status == 404);
  CHECK(call(h, "POST", "/sessions/s404/answers", {{"feature_id", "temp"}, {"value", 1}}).status == 404);
}

TEST_CASE("registration and schema") {
  const auto dir = scratch("schema");
  const auto m = fixture_model();
  Harness h;
  const auto reg = call(h, "POST", "/models", {{"path", save_fixture(dir, m)}});
  CHECK(reg.status == 201);
  const std::string id = reg.body.at("model_id");
  CHECK(call(h, "GET", "/models").body.at("models").size() == 1);
  const auto schema = call(h, "GET", "/models/" + id + "/schema");
  CHECK(schema.status == 200);
  CHECK(schema.body.at("features").size() == 4);
  CHECK(schema.body.at("targets") == json({"flu", "cold", "otitis"}));
  CHECK(schema.body.at("threshold") == 0.5);
  // Levels round-trip from the schema descriptor.
  for (std::size_t i = 0; i < m.features.size(); ++i)
    CHECK(feature_from_json(schema.body.at("features")[i]) == m.features[i]);

  CHECK(call(h, "POST", "/models", {{"path", (dir / "nope.modn").string()}}).status == 422);
  CHECK(call(h, "POST", "/models", {{"path", save_fixture(dir, m, "b.modn")}, {"model_id", id}}).status == 409);
  CHECK(call(h, "POST", "/models", json{{"nopath", 1}}).status == 400);
  fs::remove_all(dir);
}

TEST_CASE("zero-decoder model starts every session at 0.5") {
  const auto dir = scratch("zero");
  auto m = fixture_model();
  fixtures::zero_params(m, "decoder/");
  Harness h;
  const std::string id = call(h, "POST", "/models", {{"path", save_fixture(dir, m)}}).body.at("model_id");
  const auto s1 = call(h, "POST", "/sessions", {{"model_id", id}});
  const auto s2 = call(h, "POST", "/sessions", {{"model_id", id}});
  CHECK(s1.status == 201);
  CHECK(s1.body.at("session_id") != s2.body.at("session_id"));
  CHECK(probs(s1.body) == std::vector<double>(3, 0.5));
  CHECK(probs(s1.body) == probs(s2.body));
  CHECK(s1.body.at("step") == 0);
  fs::remove_all(dir);
}

TEST_CASE("answers advance the step and match the library fold exactly") {
  const auto dir = scratch("answers");
  const auto m = fixture_model();
  Harness h;
  const std::string id = call(h, "POST", "/models", {{"path", save_fixture(dir, m)}}).body.at("model_id");
  const std::string sid = call(h, "POST", "/sessions", {{"model_id", id}}).body.at("session_id");
  std::vector<std::pair<std::string, Value>> log;
  for (int k = 0; k < 4; ++k) {
    const auto& a = kFiveAnswers[k];
    const auto r = call(h, "POST", "/sessions/" + sid + "/answers", a);
    REQUIRE(r.status == 200);
    CHECK(r.body.at("step") == k + 1);
    log.emplace_back(a.at("feature_id"), canonical_value(m.feature(a.at("feature_id")), value_from_json(a.at("value"))));
    CHECK(probs(r.body) == row_of(run_consultation(m, log).steps.back().probabilities));
  }
  // A fifth answer for a feature the model does not know is rejected.
  const auto unknown = call(h, "POST", "/sessions/" + sid + "/answers", kFiveAnswers[4]);
  CHECK(unknown.status == 422);
  CHECK(unknown.body.at("code") == "unknown_feature");
  CHECK(call(h, "GET", "/sessions/" + sid + "/predictions").body.at("step") == 4);
  fs::remove_all(dir);
}

TEST_CASE("invalid, duplicate and malformed answers") {
  const auto dir = scratch("invalid");
  Harness h;
  const std::string id = call(h, "POST", "/models", {{"path", save_fixture(dir, fixture_model())}}).body.at("model_id");
  const std::string sid = call(h, "POST", "/sessions", {{"model_id", id}}).body.at("session_id");
  const std::string path = "/sessions/" + sid + "/answers";

  const auto bad_level = call(h, "POST", path, {{"feature_id", "age"}, {"value", "elderly"}});
  CHECK(bad_level.status == 422);
  CHECK(bad_level.body.at("code") == "invalid_value");
  CHECK(bad_level.body.at("detail").at("levels") == json({"infant", "child", "teen"}));

  CHECK(call(h, "POST", path, {{"feature_id", "temp"}, {"value", "hot"}}).status == 422);
  CHECK(call(h, "POST", path, {{"feature_id", "cough"}, {"value", 3}}).status == 422);
  CHECK(call(h, "POST", path, {{"feature_id", "temp"}}).status == 400);

  auto c = h.client();
  auto raw = c.Post(path, "{not json", "application/json");
  REQUIRE(raw);
  CHECK(raw->status == 400);

  CHECK(call(h, "POST", path, {{"feature_id", "temp"}, {"value", 37}}).status == 200);
  const auto dup = call(h, "POST", path, {{"feature_id", "temp"}, {"value", 39}});
  CHECK(dup.status == 409);
  CHECK(dup.body.at("code") == "duplicate_answer");
  // Rejected requests never change the session.
  CHECK(call(h, "GET", "/sessions/" + sid + "/predictions").body.at("step") == 1);
  fs::remove_all(dir);
}

TEST_CASE("retraction replays the remaining log") {
  const auto dir = scratch("retract");
  const auto m = fixture_model();
  Harness h;
  const std::string id = call(h, "POST", "/models", {{"path", save_fixture(dir, m)}}).body.at("model_id");
  const std::string sid = call(h, "POST", "/sessions", {{"model_id", id}}).body.at("session_id");
  const std::string base = "/sessions/" + sid;
  const auto initial = probs(call(h, "GET", base + "/predictions").body);

  call(h, "POST", base + "/answers", kFiveAnswers[0]);
  const auto only = call(h, "DELETE", base + "/answers/age");
  CHECK(only.status == 200);
  CHECK(probs(only.body) == initial);
  CHECK(call(h, "DELETE", base + "/answers/age").status == 404);

  for (int k = 0; k < 4; ++k) call(h, "POST", base + "/answers", kFiveAnswers[k]);
  const auto before = probs(call(h, "GET", base + "/predictions").body);
  call(h, "DELETE", base + "/answers/weight");
  const auto again = call(h, "POST", base + "/answers", kFiveAnswers[3]);
  CHECK(probs(again.body) == before);

  const auto mid = call(h, "DELETE", base + "/answers/temp");
  const std::vector<std::pair<std::string, Value>> remaining{
      {"age", std::string("child")}, {"cough", 1.0}, {"weight", 14.25}};
  CHECK(probs(mid.body) == row_of(run_consultation(m, remaining).steps.back().probabilities));
  const auto traj = call(h, "GET", base + "/trajectory").body;
  CHECK(traj.at("steps").size() == 4);
  CHECK(traj.at("steps")[1].at("feature_id") == "age");
  CHECK(traj.at("steps")[2].at("feature_id") == "cough");
  fs::remove_all(dir);
}

TEST_CASE("trajectory shape and remaining features") {
  const auto dir = scratch("traj");
  Harness h;
  const std::string id = call(h, "POST", "/models", {{"path", save_fixture(dir, fixture_model())}}).body.at("model_id");
  const std::string sid = call(h, "POST", "/sessions", {{"model_id", id}}).body.at("session_id");
  const auto empty = call(h, "GET", "/sessions/" + sid + "/trajectory").body;
  CHECK(empty.at("steps").size() == 1);
  CHECK(empty.at("steps")[0].at("feature_id") == "initial");
  CHECK(empty.at("threshold") == 0.5);
  for (int k = 0; k < 3; ++k) call(h, "POST", "/sessions/" + sid + "/answers", kFiveAnswers[k]);
  const auto t = call(h, "GET", "/sessions/" + sid + "/trajectory").body;
  CHECK(t.at("steps").size() == 4);
  CHECK(t.at("steps")[3].at("question") == "question cough");
  CHECK(t.at("steps")[3].at("answer") == 1.0);
  const auto schema = call(h, "GET", "/models/" + id + "/schema?session_id=" + sid).body;
  CHECK(schema.at("remaining") == json({"weight"}));
  CHECK(schema.at("remaining_by_group").size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("service, library and CLI agree exactly") {
  const auto dir = scratch("cross");
  const auto m = fixture_model(11);
  const auto model_path = save_fixture(dir, m);
  Harness h;
  const std::string id = call(h, "POST", "/models", {{"path", model_path}}).body.at("model_id");
  const std::string sid = call(h, "POST", "/sessions", {{"model_id", id}}).body.at("session_id");

  const json empty_cli = cli_trajectory(model_path, json::array(), dir);
  CHECK(empty_cli.at("steps")[0].at("probabilities") ==
        call(h, "GET", "/sessions/" + sid + "/predictions").body.at("probabilities"));

  json exported = json::array();
  for (int k = 0; k < 4; ++k) {
    call(h, "POST", "/sessions/" + sid + "/answers", kFiveAnswers[k]);
    exported.push_back(kFiveAnswers[k]);
  }
  const json service = call(h, "GET", "/sessions/" + sid + "/trajectory").body;
  const json cli = cli_trajectory(model_path, exported, dir);
  std::vector<std::pair<std::string, Value>> log;
  for (const auto& a : exported)
    log.emplace_back(a.at("feature_id"), canonical_value(m.feature(a.at("feature_id")), value_from_json(a.at("value"))));
  const Eigen::MatrixXd lib = run_consultation(m, log).matrix();
  REQUIRE(service.at("steps").size() == 5);
  REQUIRE(cli.at("steps").size() == 5);
  for (std::size_t t = 0; t < 5; ++t) {
    const auto sp = service.at("steps")[t].at("probabilities").get<std::vector<double>>();
    const auto cp = cli.at("steps")[t].at("probabilities").get<std::vector<double>>();
    CHECK(sp == cp);
    CHECK(sp == row_of(lib.row(static_cast<Eigen::Index>(t))));
  }
  fs::remove_all(dir);
}

TEST_CASE("restart replays persisted logs to identical responses") {
  const auto dir = scratch("restart");
  const auto model_path = save_fixture(dir, fixture_model());
  json before_a, before_b;
  std::string sid_a, sid_b, id;
  {
    Harness h(dir / "logs");
    id = call(h, "POST", "/models", {{"path", model_path}}).body.at("model_id");
    sid_a = call(h, "POST", "/sessions", {{"model_id", id}}).body.at("session_id");
    sid_b = call(h, "POST", "/sessions", {{"model_id", id}}).body.at("session_id");
    for (int k = 0; k < 4; ++k) call(h, "POST", "/sessions/" + sid_a + "/answers", kFiveAnswers[k]);
    call(h, "DELETE", "/sessions/" + sid_a + "/answers/temp");
    call(h, "POST", "/sessions/" + sid_b + "/answers", kFiveAnswers[1]);
    before_a = call(h, "GET", "/sessions/" + sid_a + "/trajectory").body;
    before_b = call(h, "GET", "/sessions/" + sid_b + "/predictions").body;
  }
  Harness h(dir / "logs");
  CHECK(call(h, "GET", "/sessions/" + sid_a + "/trajectory").body == before_a);
  CHECK(call(h, "GET", "/sessions/" + sid_b + "/predictions").body == before_b);
  const std::string fresh = call(h, "POST", "/sessions", {{"model_id", id}}).body.at("session_id");
  CHECK(fresh != sid_a);
  CHECK(fresh != sid_b);
  fs::remove_all(dir);
}

TEST_CASE("sessions are isolated under concurrent use") {
  const auto dir = scratch("concurrent");
  const auto m = fixture_model();
  Harness h;
  const std::string id = call(h, "POST", "/models", {{"path", save_fixture(dir, m)}}).body.at("model_id");
  std::vector<std::string> sids;
  for (int i = 0; i < 4; ++i) sids.push_back(call(h, "POST", "/sessions", {{"model_id", id}}).body.at("session_id"));
  const auto untouched = call(h, "GET", "/sessions/" + sids[3] + "/predictions").body;

  std::vector<std::thread> workers;
  for (int i = 0; i < 3; ++i) {
    workers.emplace_back([&, i] {
      for (int k = 0; k < 4; ++k) call(h, "POST", "/sessions/" + sids[i] + "/answers", kFiveAnswers[(k + i) % 4]);
    });
  }
  // Racing duplicate submissions to one session: exactly one wins.
  std::atomic<int> accepted{0};
  for (int i = 0; i < 3; ++i) {
    workers.emplace_back([&] {
      if (call(h, "POST", "/sessions/" + sids[3] + "/answers", {{"feature_id", "temp"}, {"value", 36.6}}).status == 200)
        ++accepted;
    });
  }
  for (auto& w : workers) w.join();
  CHECK(accepted == 1);
  for (int i = 0; i < 3; ++i) {
    std::vector<std::pair<std::string, Value>> log;
    for (int k = 0; k < 4; ++k) {
      const auto& a = kFiveAnswers[(k + i) % 4];
      log.emplace_back(a.at("feature_id"), canonical_value(m.feature(a.at("feature_id")), value_from_json(a.at("value"))));
    }
    CHECK(probs(call(h, "GET", "/sessions/" + sids[i] + "/predictions").body) ==
          row_of(run_consultation(m, log).steps.back().probabilities));
  }
  const auto after = call(h, "GET", "/sessions/" + sids[3] + "/trajectory").body;
  CHECK(after.at("steps")[0].at("probabilities") == untouched.at("probabilities"));
  fs::remove_all(dir);
}
