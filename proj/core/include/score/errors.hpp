#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace score {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not compose.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf reached a place where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Rejected user input that names specific sample ids.
class SelectionError : public Error {
 public:
  SelectionError(const std::string& what, std::vector<std::int64_t> offending)
      : Error(what), offending_ids_(std::move(offending)) {}

  const std::vector<std::int64_t>& offending_ids() const { return offending_ids_; }

 private:
  std::vector<std::int64_t> offending_ids_;
};

}  // namespace score
