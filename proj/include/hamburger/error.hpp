#pragma once

#include <stdexcept>
#include <string>

namespace hamburger {

enum class ErrorKind {
  argument,
  dimension,
  configuration,
  vocabulary,
  ordering,
  capacity,
  domain,
  data,
  numeric,
  io,
  invariant,
};

const char* to_string(ErrorKind kind) noexcept;

// Every failure raised by the library carries a kind so the C API can map it
// onto a stable status code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace hamburger
