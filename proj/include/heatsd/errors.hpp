#pragma once

#include <stdexcept>
#include <string>

namespace heatsd {

// Failure taxonomy for the toolkit. Each kind maps to a distinct failure mode
// so callers (and the CLI exit-code logic) can react without string matching.
enum class ErrorKind {
  config,        // invalid or inconsistent configuration
  input,         // malformed runtime input (non-finite data, bad sizes)
  domain,        // argument outside an operation's domain (t < 0, M out of range)
  precondition,  // a stated hypothesis of an estimate/theorem is violated
  resolution,    // the grid cannot support the request (too many modes, singular Gram)
  degeneracy,    // restricted eigenvectors numerically dependent on the mask
  convergence,   // iterative solver failed to reach tolerance in budget
  divergence,    // simulated state blew up
  parse,         // configuration file syntax error
  io,            // filesystem failure
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::input: return "input";
    case ErrorKind::domain: return "domain";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::degeneracy: return "degeneracy";
    case ErrorKind::convergence: return "convergence";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::parse: return "parse";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind k, const std::string& msg) { throw Error(k, msg); }

inline void require(bool ok, ErrorKind k, const std::string& msg) {
  if (!ok) fail(k, msg);
}

}  // namespace heatsd
