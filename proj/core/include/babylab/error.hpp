// SPDX-FileCopyrightText: (c) 2026 The babylab Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace babylab {

/// Failure categories; each maps onto one CLI exit code.
enum class ErrorKind {
  Config = 2,
  Scorer = 3,
  Io = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

/// Raised by scorers on transport or protocol failure. Benchmark runners
/// convert it into an errored item rather than an incorrect answer.
class ScorerError : public Error {
 public:
  explicit ScorerError(const std::string& what) : Error(ErrorKind::Scorer, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace babylab
