#pragma once

#include <stdexcept>
#include <string>

namespace stealth {

/// Bad input: invalid configuration, shape mismatch, violated precondition.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A stage of a multi-step procedure (solve, sampling budget, IO) failed.
class PipelineError : public std::runtime_error {
 public:
  explicit PipelineError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

}  // namespace stealth
