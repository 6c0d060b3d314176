#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace radlabel {

enum class ErrorKind {
  Config,
  Parse,
  Io,
  Precondition,
  Transport,
  Protocol,
  Unscorable,
  EmptySummary,
  Degenerate,
  Join,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::Unscorable: return "unscorable";
    case ErrorKind::EmptySummary: return "empty-summary";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Join: return "join";
  }
  return "unknown";
}

// Base of every error raised by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Collects every violation found during validation instead of stopping at the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::Config, what), violations_{what} {}
  explicit ConfigError(std::vector<std::string> violations)
      : Error(ErrorKind::Config, join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = std::to_string(v.size()) + " configuration error(s)";
    for (const auto& s : v) out += "\n  - " + s;
    return out;
  }
  std::vector<std::string> violations_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(ErrorKind::Parse, line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what) : Error(ErrorKind::Precondition, what) {}
};

class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(ErrorKind::Transport, what) {}
};

// Server answered, but not in the expected schema.
class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error(ErrorKind::Protocol, what) {}
};

struct TopLogprob {
  std::string token;
  double logprob = 0.0;
};

// Neither a "yes" nor a "no" variant surfaced in the top-k list.
class UnscorableError : public Error {
 public:
  explicit UnscorableError(std::vector<TopLogprob> top_k)
      : Error(ErrorKind::Unscorable, describe(top_k)), top_k_(std::move(top_k)) {}
  const std::vector<TopLogprob>& top_k() const noexcept { return top_k_; }

 private:
  static std::string describe(const std::vector<TopLogprob>& top_k) {
    std::string out = "no yes/no token in top-k [";
    for (std::size_t i = 0; i < top_k.size(); ++i) {
      if (i) out += ", ";
      out += "\"" + top_k[i].token + "\"";
    }
    return out + "]";
  }
  std::vector<TopLogprob> top_k_;
};

class EmptySummaryError : public Error {
 public:
  EmptySummaryError() : Error(ErrorKind::EmptySummary, "server returned an empty summary") {}
};

class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& what) : Error(ErrorKind::Degenerate, what) {}
};

class JoinError : public Error {
 public:
  explicit JoinError(const std::string& what) : Error(ErrorKind::Join, what) {}
};

}  // namespace radlabel
