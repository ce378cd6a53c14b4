#pragma once

#include <stdexcept>

namespace fairbayes {

/// Base class for all toolkit errors.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid schema, configuration, or option values. CLI exit code 2.
class config_error : public error {
 public:
  using error::error;
};

/// Malformed or inconsistent data: CSV parse failures, domain violations,
/// unknown groups at prediction time. CLI exit code 3.
class data_error : public error {
 public:
  using error::error;
};

}  // namespace fairbayes
