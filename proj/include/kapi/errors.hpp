#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kapi {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A matrix/vector entry was NaN or infinite where finiteness is required.
struct NonFiniteInput : Error {
  using Error::Error;
};

/// Rank-deficient least-squares system at ridge = 0.
struct SingularSystem : Error {
  int rank = 0;
  int cols = 0;
  SingularSystem(int rank_, int cols_)
      : Error("singular least-squares system: rank " + std::to_string(rank_) +
              " of " + std::to_string(cols_) + " columns"),
        rank(rank_),
        cols(cols_) {}
};

/// A linear or iterative solve failed to reach its residual tolerance.
struct ConvergenceFailure : Error {
  using Error::Error;
};

/// A non-finite value appeared during autodiff or training.
struct NaNDetected : Error {
  std::size_t node = static_cast<std::size_t>(-1);
  long epoch = -1;
  explicit NaNDetected(const std::string& what, std::size_t node_ = static_cast<std::size_t>(-1),
                       long epoch_ = -1)
      : Error(what), node(node_), epoch(epoch_) {}
};

/// Characteristic-foot root solve could not bracket a solution.
struct RootNotBracketed : Error {
  using Error::Error;
};

/// Two sampled fields with incompatible grid specs were combined.
struct GridMismatch : Error {
  using Error::Error;
};

/// Relative error against a reference field with zero norm.
struct ZeroReference : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace kapi
