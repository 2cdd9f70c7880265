#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modn/errors.hpp"
#include "modn/model.hpp"

namespace httplib {
class Server;
}

namespace modn {

/// Error carrying the HTTP status and the {code, message, detail} body.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message, nlohmann::json detail = nullptr)
      : Error(message), status_(status), code_(std::move(code)), detail_(std::move(detail)) {}

  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& detail() const noexcept { return detail_; }
  nlohmann::json body() const { return {{"code", code_}, {"message", what()}, {"detail", detail_}}; }

 private:
  int status_;
  std::string code_;
  nlohmann::json detail_;
};

/// Interactive consultations over registered models.
///
/// Each session is an ordered answer log; the current state and trajectory
/// are a cache derived from it. Submitting extends the cached state by one
/// encode_step, retracting replays the remaining log from S0. With a log
/// directory, registrations and session events are appended as JSON lines
/// (models.jsonl, sessions/<id>.jsonl) and replayed on construction.
///
/// Calls on different sessions run concurrently; calls on one session are
/// serialized by that session's mutex.
class ConsultationService {
 public:
  explicit ConsultationService(std::optional<std::filesystem::path> log_dir = std::nullopt);

  nlohmann::json register_model(const std::filesystem::path& path, std::optional<std::string> model_id = {});
  nlohmann::json list_models() const;
  nlohmann::json get_schema(const std::string& model_id, const std::optional<std::string>& session_id = {}) const;

  nlohmann::json create_session(const std::string& model_id);
  nlohmann::json submit_answer(const std::string& session_id, const std::string& feature_id,
                               const nlohmann::json& value);
  nlohmann::json retract_answer(const std::string& session_id, const std::string& feature_id);
  nlohmann::json predictions(const std::string& session_id) const;
  nlohmann::json trajectory(const std::string& session_id) const;

  std::shared_ptr<const ModnModel> model(const std::string& model_id) const;

  static constexpr double kThreshold = 0.5;

 private:
  struct RegistryEntry {
    std::string model_id;
    std::filesystem::path path;
    std::shared_ptr<const ModnModel> model;
  };

  struct LogEntry {
    std::string feature_id;
    Value value;
    std::int64_t timestamp_ms = 0;
  };

  struct Session {
    std::string session_id;
    std::string model_id;
    std::shared_ptr<const ModnModel> model;
    std::vector<LogEntry> log;
    StateVector state;
    Trajectory trajectory;
    mutable std::mutex mutex;
  };

  const RegistryEntry& entry(const std::string& model_id) const;  // caller holds registry_mutex_
  std::shared_ptr<Session> session(const std::string& session_id) const;
  nlohmann::json register_locked(const std::filesystem::path& path, std::optional<std::string> model_id,
                                 bool persist);
  std::shared_ptr<Session> create_locked(const std::string& model_id, const std::string& session_id);
  static void replay(Session& s);
  static void apply_answer(Session& s, LogEntry entry);
  static nlohmann::json prediction_body(const Session& s);
  void append_event(const std::string& file, const nlohmann::json& event) const;
  void restore();

  std::optional<std::filesystem::path> log_dir_;
  mutable std::shared_mutex registry_mutex_;
  std::map<std::string, RegistryEntry> models_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_model_ = 1;
  std::uint64_t next_session_ = 1;
  mutable std::mutex file_mutex_;
};

/// Installs the HTTP routes:
///   POST   /models                           {"path", "model_id"?}
///   GET    /models
///   GET    /models/{id}/schema[?session_id=]
///   POST   /sessions                         {"model_id"}
///   POST   /sessions/{id}/answers            {"feature_id", "value"}
///   DELETE /sessions/{id}/answers/{feature_id}
///   GET    /sessions/{id}/predictions
///   GET    /sessions/{id}/trajectory
/// Errors are returned as {"code", "message", "detail"}.
void mount_routes(httplib::Server& server, ConsultationService& service);

}  // namespace modn
