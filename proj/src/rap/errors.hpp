#pragma once

#include <stdexcept>
#include <string>

namespace rap {

// Operand shapes do not conform to an op's shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::string key = {})
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Malformed or insufficient data (dataset files, episode requests).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A loss went non-finite or exceeded the divergence bound.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse of the differentiation tape (non-scalar loss, cleared tape).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace rap
