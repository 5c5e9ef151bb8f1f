#pragma once

#include <stdexcept>
#include <string>

namespace falcon {

// Invalid configuration (bad parameter values, unknown enum names).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Engine code tried to read the label of a sample that has not been labeled.
class LabelAccessError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A fairness quantity has no defined value (e.g. every relevant rate has a
// zero denominator, or fewer than two groups are present).
class UndefinedFairness : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace falcon
