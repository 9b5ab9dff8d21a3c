// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace layerparti {

// Each error family maps to one CLI exit code (see tools/layerparti.cpp).

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class UsageError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class InputError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
  public:
    ParseError(const std::string& what, std::size_t line)
        : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class InvariantError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

}  // namespace layerparti
