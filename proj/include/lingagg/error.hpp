#pragma once

#include <stdexcept>
#include <string>

namespace lingagg {

// Bad input: unreadable files, malformed formats, shape mismatches, invariant
// violations. The CLI maps these to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

// Non-finite losses or gradients. The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(int epoch, const std::string& what)
      : NumericalError("diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Backward pass called with a cache that no longer matches its parameters.
class StaleCacheError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace lingagg
