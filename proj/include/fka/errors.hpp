#pragma once

#include <stdexcept>
#include <string>

namespace fka {

// Error categories. All derive from std::runtime_error so callers that do not
// care about the category can catch one type.

class DimensionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InputError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class AssemblyError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class MetricError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace fka
