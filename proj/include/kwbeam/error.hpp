// error.hpp
// Error taxonomy shared by every module. ValidationError covers bad inputs
// and malformed files (CLI exit code 2), NumericError covers failures of the
// math itself such as non-finite losses or impossible factorizations (exit
// code 3).

#pragma once

#include <stdexcept>
#include <string>

namespace kwbeam {

class ValidationError : public std::runtime_error {
  public:
    explicit ValidationError(const std::string &msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string &msg) : std::runtime_error(msg) {}
};

class IoError : public ValidationError {
  public:
    explicit IoError(const std::string &msg) : ValidationError(msg) {}
};

inline void require(bool cond, const std::string &msg) {
    if (!cond) throw ValidationError(msg);
}

inline void require_numeric(bool cond, const std::string &msg) {
    if (!cond) throw NumericError(msg);
}

}  // namespace kwbeam
