#pragma once

#include <stdexcept>
#include <string>

namespace cut {

/// Bad caller input: shapes, ranges, unknown enum names.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An object is not in a state that permits the call (empty queue, missing
/// gradient, missing deepest feature).
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Checkpoint file is unreadable or disagrees with the network it is loaded
/// into.
class InvalidCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration key or value rejected. `key()` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

#define CUT_REQUIRE(cond, Type, msg) \
  do {                               \
    if (!(cond)) throw Type(msg);    \
  } while (false)

}  // namespace cut
