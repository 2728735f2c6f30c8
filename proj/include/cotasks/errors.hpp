#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cotasks {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document. `where()` is a JSON pointer or "line:col" style location.
class ParseError : public Error {
 public:
  ParseError(std::string path, std::string where, const std::string& what)
      : Error(path + ": " + (where.empty() ? "" : where + ": ") + what),
        path_(std::move(path)),
        where_(std::move(where)) {}

  const std::string& path() const noexcept { return path_; }
  const std::string& where() const noexcept { return where_; }

 private:
  std::string path_;
  std::string where_;
};

/// Well-formed input whose content violates a cross-reference or range invariant.
class IntegrityError : public Error {
 public:
  IntegrityError(std::string code, const std::string& what)
      : Error(code + ": " + what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A CoTask answer could not be constructed for a record; the record is quarantined.
class ConstructionError : public Error {
 public:
  using Error::Error;
};

class RenderError : public Error {
 public:
  RenderError(std::string slot, const std::string& what) : Error(what), slot_(std::move(slot)) {}

  const std::string& slot() const noexcept { return slot_; }

 private:
  std::string slot_;
};

/// Model output that could not be turned into a typed answer. Keeps the raw text for audit.
class ResponseParseError : public Error {
 public:
  ResponseParseError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}

  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class TransportError : public Error {
 public:
  TransportError(const std::string& what, int status = 0) : Error(what), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// Fatal configuration problem (bad config file, missing credentials, rejected key).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cotasks
