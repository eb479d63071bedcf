#pragma once

#include <stdexcept>
#include <string>

namespace nnsig {

// Base of every error the library throws. The CLI maps each family to an
// exit code: configuration 2, data/format/input 3, numerical 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent settings (architecture, test parameters, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller handed in arguments of the wrong shape or range.
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed model file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// CSV ingestion and file I/O problems.
class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(std::size_t epoch, double learning_rate)
      : NumericalError("training diverged at epoch " + std::to_string(epoch) +
                       " (learning rate " + std::to_string(learning_rate) + ")"),
        epoch_(epoch),
        learning_rate_(learning_rate) {}

  std::size_t epoch() const noexcept { return epoch_; }
  double learning_rate() const noexcept { return learning_rate_; }

 private:
  std::size_t epoch_;
  double learning_rate_;
};

}  // namespace nnsig
