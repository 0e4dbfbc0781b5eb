#pragma once

#include <stdexcept>
#include <string>

namespace oap {

// Error taxonomy shared by the core and the C API. Contract errors cover
// precondition and shape violations; numeric errors cover NaN/divergence.
enum class ErrorKind {
  contract,
  io,
  config,
  numeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_contract(const std::string& msg) {
  throw Error(ErrorKind::contract, msg);
}
[[noreturn]] inline void fail_io(const std::string& msg) {
  throw Error(ErrorKind::io, msg);
}
[[noreturn]] inline void fail_config(const std::string& msg) {
  throw Error(ErrorKind::config, msg);
}
[[noreturn]] inline void fail_numeric(const std::string& msg) {
  throw Error(ErrorKind::numeric, msg);
}

inline void check_contract(bool ok, const std::string& msg) {
  if (!ok) fail_contract(msg);
}

}  // namespace oap
