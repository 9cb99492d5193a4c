#pragma once

#include <stdexcept>
#include <string>

namespace bvib {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A numeric argument is outside the domain of the operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Array or tensor dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Training diverged or a run could not complete.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

namespace detail {
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DomainError(msg);
}
inline void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}
}  // namespace detail

}  // namespace bvib
