#pragma once

#include <stdexcept>
#include <string>

namespace modn {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or parameter dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition (wrong tape, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Duplicate or conflicting feature/target declarations.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A record references a feature or target with no trained module.
class MissingModuleError : public Error {
 public:
  MissingModuleError(std::string kind, std::string id)
      : Error("no " + kind + " for '" + id + "'"), kind_(std::move(kind)), id_(std::move(id)) {}

  const std::string& kind() const noexcept { return kind_; }
  const std::string& id() const noexcept { return id_; }

 private:
  std::string kind_;
  std::string id_;
};

/// A value does not satisfy its feature schema. Row/column are 1-based
/// CSV coordinates, or 0 when the value did not come from a file.
class DataError : public Error {
 public:
  DataError(const std::string& message, std::size_t row = 0, std::string column = {})
      : Error(row == 0 ? message
                       : "row " + std::to_string(row) + ", column '" + column + "': " + message),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

/// Model file problems.
class ModelFileError : public Error {
 public:
  enum class Kind { corrupt, version, fingerprint, io };
  ModelFileError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace modn
