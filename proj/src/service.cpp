#include "modn/service.hpp"

#include <chrono>
#include <fstream>

#include <httplib.h>

#include "modn/model_io.hpp"

namespace modn {

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

ServiceError not_found(const std::string& what, const std::string& id) {
  return ServiceError(404, "not_found", what + " '" + id + "' not found", {{"id", id}});
}

// Hex keeps the 64-bit value intact for JavaScript clients.
std::string fingerprint_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t numeric_suffix(const std::string& id) {
  std::size_t i = id.size();
  while (i > 0 && std::isdigit(static_cast<unsigned char>(id[i - 1]))) --i;
  if (i == id.size()) return 0;
  return std::stoull(id.substr(i));
}

}  // namespace

ConsultationService::ConsultationService(std::optional<std::filesystem::path> log_dir) : log_dir_(std::move(log_dir)) {
  if (log_dir_) {
    std::filesystem::create_directories(*log_dir_ / "sessions");
    restore();
  }
}

const ConsultationService::RegistryEntry& ConsultationService::entry(const std::string& model_id) const {
  auto it = models_.find(model_id);
  if (it == models_.end()) throw not_found("model", model_id);
  return it->second;
}

std::shared_ptr<ConsultationService::Session> ConsultationService::session(const std::string& session_id) const {
  std::shared_lock lock(registry_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw not_found("session", session_id);
  return it->second;
}

std::shared_ptr<const ModnModel> ConsultationService::model(const std::string& model_id) const {
  std::shared_lock lock(registry_mutex_);
  return entry(model_id).model;
}

void ConsultationService::append_event(const std::string& file, const nlohmann::json& event) const {
  if (!log_dir_) return;
  std::lock_guard lock(file_mutex_);
  std::ofstream out(*log_dir_ / file, std::ios::app);
  out << event.dump() << '\n';
}

nlohmann::json ConsultationService::register_locked(const std::filesystem::path& given,
                                                    std::optional<std::string> model_id, bool persist) {
  const std::filesystem::path path = std::filesystem::absolute(given);
  std::string id = model_id.value_or("");
  if (id.empty()) {
    do {
      id = "m" + std::to_string(next_model_++);
    } while (models_.count(id) != 0);
  } else if (models_.count(id) != 0) {
    throw ServiceError(409, "conflict", "model id '" + id + "' is already registered", {{"model_id", id}});
  }
  next_model_ = std::max(next_model_, numeric_suffix(id) + 1);
  std::shared_ptr<const ModnModel> model;
  try {
    model = std::make_shared<const ModnModel>(load_model(path));
  } catch (const ModelFileError& e) {
    throw ServiceError(422, "invalid_model", e.what(), {{"path", path.string()}});
  }
  // load_model already cross-checks the stored fingerprint against the stored schema.
  models_[id] = RegistryEntry{id, path, model};
  if (persist) append_event("models.jsonl", {{"event", "register"}, {"model_id", id}, {"path", path.string()}});
  return {{"model_id", id},
          {"path", path.string()},
          {"targets", model->targets},
          {"n_features", model->features.size()},
          {"fingerprint", fingerprint_hex(model->schema_fingerprint)}};
}

nlohmann::json ConsultationService::register_model(const std::filesystem::path& path,
                                                   std::optional<std::string> model_id) {
  std::unique_lock lock(registry_mutex_);
  return register_locked(path, std::move(model_id), true);
}

nlohmann::json ConsultationService::list_models() const {
  std::shared_lock lock(registry_mutex_);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [id, e] : models_) {
    out.push_back({{"model_id", id},
                   {"path", e.path.string()},
                   {"targets", e.model->targets},
                   {"n_features", e.model->features.size()},
                   {"fingerprint", fingerprint_hex(e.model->schema_fingerprint)}});
  }
  return {{"models", out}};
}

nlohmann::json ConsultationService::get_schema(const std::string& model_id,
                                               const std::optional<std::string>& session_id) const {
  std::shared_ptr<const ModnModel> m = model(model_id);
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : m->features) {
    nlohmann::json fj = feature_to_json(f);
    fj["encoded_width"] = f.encoded_width();
    features.push_back(std::move(fj));
  }
  nlohmann::json out{{"model_id", model_id},
                     {"state_dim", m->state_dim()},
                     {"features", features},
                     {"targets", m->targets},
                     {"threshold", kThreshold}};
  if (session_id) {
    auto s = session(*session_id);
    std::lock_guard lock(s->mutex);
    if (s->model_id != model_id) {
      throw ServiceError(422, "session_model_mismatch", "session '" + *session_id + "' uses model '" + s->model_id + "'",
                         {{"session_id", *session_id}, {"model_id", s->model_id}});
    }
    nlohmann::json remaining = nlohmann::json::array();
    std::map<int, std::vector<std::string>> by_group;
    for (const auto& f : m->features) {
      const bool answered = std::any_of(s->log.begin(), s->log.end(), [&](const LogEntry& e) { return e.feature_id == f.id; });
      if (answered) continue;
      remaining.push_back(f.id);
      by_group[f.group].push_back(f.id);
    }
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& [g, ids] : by_group) groups.push_back({{"group", g}, {"features", ids}});
    out["session_id"] = *session_id;
    out["remaining"] = remaining;
    out["remaining_by_group"] = groups;
  }
  return out;
}

void ConsultationService::replay(Session& s) {
  const ModnModel& m = *s.model;
  s.state = initial_state(m);
  s.trajectory = Trajectory{m.targets, {TrajectoryStep{0, "initial", std::nullopt, decode_all(m, s.state)}}};
  std::vector<LogEntry> log = std::move(s.log);
  s.log.clear();
  for (auto& e : log) apply_answer(s, std::move(e));
}

void ConsultationService::apply_answer(Session& s, LogEntry entry) {
  const ModnModel& m = *s.model;
  s.state = encode_step(m, s.state, entry.feature_id, encode_answer(m, entry.feature_id, entry.value));
  const int step = static_cast<int>(s.trajectory.steps.size());
  s.trajectory.steps.push_back(TrajectoryStep{step, entry.feature_id, entry.value, decode_all(m, s.state)});
  s.log.push_back(std::move(entry));
}

nlohmann::json ConsultationService::prediction_body(const Session& s) {
  const auto& last = s.trajectory.steps.back().probabilities;
  std::vector<double> probs(last.data(), last.data() + last.size());
  nlohmann::json by_target = nlohmann::json::object();
  for (std::size_t d = 0; d < s.trajectory.targets.size(); ++d) by_target[s.trajectory.targets[d]] = probs[d];
  nlohmann::json answers = nlohmann::json::array();
  for (const auto& e : s.log) answers.push_back({{"feature_id", e.feature_id}, {"value", value_to_json(e.value)}});
  return {{"session_id", s.session_id},
          {"model_id", s.model_id},
          {"step", s.log.size()},
          {"targets", s.trajectory.targets},
          {"probabilities", probs},
          {"predictions", by_target},
          {"answers", answers},
          {"threshold", kThreshold}};
}

std::shared_ptr<ConsultationService::Session> ConsultationService::create_locked(const std::string& model_id,
                                                                                 const std::string& session_id) {
  auto s = std::make_shared<Session>();
  s->session_id = session_id;
  s->model_id = model_id;
  s->model = entry(model_id).model;
  replay(*s);
  sessions_[session_id] = s;
  next_session_ = std::max(next_session_, numeric_suffix(session_id) + 1);
  return s;
}

nlohmann::json ConsultationService::create_session(const std::string& model_id) {
  std::shared_ptr<Session> s;
  {
    std::unique_lock lock(registry_mutex_);
    entry(model_id);
    std::string id;
    do {
      id = "s" + std::to_string(next_session_++);
    } while (sessions_.count(id) != 0);
    s = create_locked(model_id, id);
  }
  std::lock_guard lock(s->mutex);
  append_event("sessions/" + s->session_id + ".jsonl",
               {{"event", "create"}, {"model_id", model_id}, {"ts", now_ms()}});
  return prediction_body(*s);
}

nlohmann::json ConsultationService::submit_answer(const std::string& session_id, const std::string& feature_id,
                                                  const nlohmann::json& value) {
  auto s = session(session_id);
  std::lock_guard lock(s->mutex);
  const ModnModel& m = *s->model;
  if (!m.has_encoder(feature_id)) {
    std::vector<std::string> ids;
    for (const auto& f : m.features) ids.push_back(f.id);
    throw ServiceError(422, "unknown_feature", "model has no feature '" + feature_id + "'",
                       {{"feature_id", feature_id}, {"features", ids}});
  }
  for (const auto& e : s->log) {
    if (e.feature_id == feature_id) {
      throw ServiceError(409, "duplicate_answer", "feature '" + feature_id + "' is already answered",
                         {{"feature_id", feature_id}, {"value", value_to_json(e.value)}});
    }
  }
  const FeatureSchema& f = m.feature(feature_id);
  Value canonical;
  try {
    canonical = canonical_value(f, value_from_json(value));
  } catch (const DataError& e) {
    nlohmann::json detail{{"feature_id", feature_id}, {"kind", to_string(f.kind)}, {"hint", e.what()}};
    if (f.kind == FeatureKind::categorical) detail["levels"] = f.levels;
    throw ServiceError(422, "invalid_value", e.what(), detail);
  }
  LogEntry entry{feature_id, canonical, now_ms()};
  apply_answer(*s, entry);
  append_event("sessions/" + session_id + ".jsonl", {{"event", "answer"},
                                                      {"feature_id", feature_id},
                                                      {"value", value_to_json(canonical)},
                                                      {"ts", entry.timestamp_ms}});
  nlohmann::json body = prediction_body(*s);
  body["feature_id"] = feature_id;
  return body;
}

nlohmann::json ConsultationService::retract_answer(const std::string& session_id, const std::string& feature_id) {
  auto s = session(session_id);
  std::lock_guard lock(s->mutex);
  auto it = std::find_if(s->log.begin(), s->log.end(), [&](const LogEntry& e) { return e.feature_id == feature_id; });
  if (it == s->log.end()) throw not_found("answer", feature_id);
  s->log.erase(it);
  replay(*s);
  append_event("sessions/" + session_id + ".jsonl",
               {{"event", "retract"}, {"feature_id", feature_id}, {"ts", now_ms()}});
  return prediction_body(*s);
}

nlohmann::json ConsultationService::predictions(const std::string& session_id) const {
  auto s = session(session_id);
  std::lock_guard lock(s->mutex);
  return prediction_body(*s);
}

nlohmann::json ConsultationService::trajectory(const std::string& session_id) const {
  auto s = session(session_id);
  std::lock_guard lock(s->mutex);
  nlohmann::json j = trajectory_to_json(*s->model, s->trajectory, kThreshold);
  j["session_id"] = session_id;
  j["model_id"] = s->model_id;
  return j;
}

void ConsultationService::restore() {
  std::unique_lock lock(registry_mutex_);
  if (std::ifstream in(*log_dir_ / "models.jsonl"); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        const auto ev = nlohmann::json::parse(line);
        register_locked(ev.at("path").get<std::string>(), ev.at("model_id").get<std::string>(), false);
      } catch (const std::exception& e) {
        log_warning(std::string("skipping model registration during restore: ") + e.what());
      }
    }
  }
  for (const auto& file : std::filesystem::directory_iterator(*log_dir_ / "sessions")) {
    if (file.path().extension() != ".jsonl") continue;
    const std::string id = file.path().stem().string();
    try {
      std::ifstream in(file.path());
      std::string line;
      std::shared_ptr<Session> s;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto ev = nlohmann::json::parse(line);
        const auto kind = ev.at("event").get<std::string>();
        if (kind == "create") {
          s = create_locked(ev.at("model_id").get<std::string>(), id);
        } else if (s && kind == "answer") {
          apply_answer(*s, LogEntry{ev.at("feature_id").get<std::string>(), value_from_json(ev.at("value")),
                                    ev.at("ts").get<std::int64_t>()});
        } else if (s && kind == "retract") {
          const auto fid = ev.at("feature_id").get<std::string>();
          std::erase_if(s->log, [&](const LogEntry& e) { return e.feature_id == fid; });
          replay(*s);
        }
      }
    } catch (const std::exception& e) {
      sessions_.erase(id);
      log_warning("skipping session '" + id + "' during restore: " + e.what());
    }
  }
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void handle(httplib::Response& res, int ok_status, Fn&& fn) {
  try {
    send_json(res, ok_status, fn());
  } catch (const ServiceError& e) {
    send_json(res, e.status(), e.body());
  } catch (const nlohmann::json::exception& e) {
    send_json(res, 400, {{"code", "bad_request"}, {"message", e.what()}, {"detail", nullptr}});
  } catch (const std::exception& e) {
    send_json(res, 500, {{"code", "internal"}, {"message", e.what()}, {"detail", nullptr}});
  }
}

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ServiceError(400, "bad_request", "request body is not valid JSON", {{"error", e.what()}});
  }
}

std::string required_string(const nlohmann::json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body.at(key).is_string()) {
    throw ServiceError(400, "bad_request", std::string("missing string field '") + key + "'", {{"field", key}});
  }
  return body.at(key).get<std::string>();
}

}  // namespace

void mount_routes(httplib::Server& server, ConsultationService& service) {
  server.Post("/models", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(res, 201, [&] {
      const auto body = parse_body(req);
      std::optional<std::string> id;
      if (body.contains("model_id")) id = required_string(body, "model_id");
      return service.register_model(required_string(body, "path"), id);
    });
  });
  server.Get("/models", [&service](const httplib::Request&, httplib::Response& res) {
    handle(res, 200, [&] { return service.list_models(); });
  });
  server.Get(R"(/models/([^/]+)/schema)", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(res, 200, [&] {
      std::optional<std::string> session;
      if (req.has_param("session_id")) session = req.get_param_value("session_id");
      return service.get_schema(req.matches[1], session);
    });
  });
  server.Post("/sessions", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(res, 201, [&] { return service.create_session(required_string(parse_body(req), "model_id")); });
  });
  server.Post(R"(/sessions/([^/]+)/answers)", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(res, 200, [&] {
      const auto body = parse_body(req);
      if (!body.contains("value")) {
        throw ServiceError(400, "bad_request", "missing field 'value'", {{"field", "value"}});
      }
      return service.submit_answer(req.matches[1], required_string(body, "feature_id"), body.at("value"));
    });
  });
  server.Delete(R"(/sessions/([^/]+)/answers/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(res, 200, [&] { return service.retract_answer(req.matches[1], req.matches[2]); });
  });
  server.Get(R"(/sessions/([^/]+)/predictions)", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(res, 200, [&] { return service.predictions(req.matches[1]); });
  });
  server.Get(R"(/sessions/([^/]+)/trajectory)", [&service](const httplib::Request& req, httplib::Response& res) {
    handle(res, 200, [&] { return service.trajectory(req.matches[1]); });
  });
}

}  // namespace modn
