#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace facetpipe {

// Base of every error raised by the library. The CLI maps subclasses onto
// process exit codes (config 2, backend 3, data 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad input data such as an unreadable file or a malformed row.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : DataError(what) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

// A caller broke an operation's precondition (e.g. test-split snippets fed to
// an inference input).
class ContractViolation : public DataError {
 public:
  using DataError::DataError;
};

class BackendError : public Error {
 public:
  enum class Kind { kRetryExhausted, kFatalRequest, kProtocol, kTransport };

  BackendError(Kind kind, const std::string& detail, int attempts = 0, const std::string& query = "")
      : Error(query.empty() ? detail : "query '" + query + "': " + detail),
        kind_(kind),
        attempts_(attempts),
        detail_(detail),
        query_(query) {}

  Kind kind() const noexcept { return kind_; }
  int attempts() const noexcept { return attempts_; }
  const std::string& detail() const noexcept { return detail_; }
  const std::string& query() const noexcept { return query_; }

  // Same error with the query it was serving attached.
  BackendError with_query(const std::string& query) const { return {kind_, detail_, attempts_, query}; }

 private:
  Kind kind_;
  int attempts_;
  std::string detail_;
  std::string query_;
};

// A generate_batch request failed; index is the position in the input list.
class BatchError : public BackendError {
 public:
  BatchError(std::size_t index, const BackendError& cause)
      : BackendError(cause.kind(), "request #" + std::to_string(index) + " failed: " + cause.detail(),
                     cause.attempts(), cause.query()),
        index_(index),
        cause_(cause.detail()) {}

  std::size_t index() const noexcept { return index_; }

  BatchError with_query(const std::string& query) const {
    return {index_, BackendError(kind(), cause_, attempts(), query)};
  }

 private:
  std::size_t index_;
  std::string cause_;
};

}  // namespace facetpipe
