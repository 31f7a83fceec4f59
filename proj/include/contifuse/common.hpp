#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace contifuse {

/// Index/extent type used throughout (tensor dims, loop bounds).
using Dim = std::int64_t;

/// Thrown when a caller violates an API precondition (bad shapes, bad config).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for runtime failures (I/O, corrupt files, non-finite losses).
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

inline void ensure(bool cond, const std::string& msg) {
  if (!cond) throw RuntimeError(msg);
}

}  // namespace contifuse
