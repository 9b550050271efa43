#pragma once

#include <stdexcept>
#include <string>

namespace proflow {

/// Invalid grid, problem, model or experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched field/grid/channel shapes.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative solver failed to converge.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, int iterations)
      : std::runtime_error(what), iterations_(iterations) {}
  int iterations() const noexcept { return iterations_; }

 private:
  int iterations_;
};

/// An operation was requested on an object that is not in the right state.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or Inf showed up mid-iteration.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, int index)
      : std::runtime_error(what), index_(index) {}
  int index() const noexcept { return index_; }

 private:
  int index_;
};

/// Missing upstream artifact or malformed file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace proflow
