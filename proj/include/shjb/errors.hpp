#pragma once

#include <stdexcept>
#include <string>

namespace shjb {

/// Incompatible matrix or polynomial dimensions.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

/// A PBH rank test failed: the pair is not stabilizable (or not detectable).
class StabilizabilityError : public std::runtime_error {
 public:
  explicit StabilizabilityError(const std::string& what) : std::runtime_error(what) {}
};

/// A solver could not meet its residual contract.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// An iteration or integration escaped to infinity.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace shjb
