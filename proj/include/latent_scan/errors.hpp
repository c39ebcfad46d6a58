#pragma once

#include <stdexcept>
#include <string>

namespace latent_scan {

// Bad or inconsistent user input (missing files, malformed CSV, shape mismatch).
// The CLI maps this to exit code 1.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// A broken internal invariant. The CLI maps this to exit code 2.
class InvariantError : public std::logic_error {
 public:
  explicit InvariantError(const std::string& what) : std::logic_error(what) {}
};

inline void require_input(bool ok, const std::string& message) {
  if (!ok) throw InputError(message);
}

inline void require_invariant(bool ok, const std::string& message) {
  if (!ok) throw InvariantError(message);
}

}  // namespace latent_scan
