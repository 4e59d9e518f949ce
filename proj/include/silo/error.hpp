#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace silo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed dataset or config file. `line()` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class BudgetUnderflowError : public Error {
 public:
  BudgetUnderflowError() : Error("round budget underflow; reduce E or B") {}
};

class DegenerateBaselineError : public Error {
 public:
  using Error::Error;
};

/// A non-finite loss or parameter appeared during local training.
class DivergedError : public Error {
 public:
  DivergedError(std::size_t step, std::optional<std::size_t> client = {},
                std::optional<std::size_t> round = {})
      : Error(describe(step, client, round)), step_(step), client_(client), round_(round) {}

  std::size_t step() const noexcept { return step_; }
  std::optional<std::size_t> client() const noexcept { return client_; }
  std::optional<std::size_t> round() const noexcept { return round_; }

  DivergedError with_context(std::size_t client, std::size_t round) const {
    return DivergedError(step_, client, round);
  }

 private:
  static std::string describe(std::size_t step, std::optional<std::size_t> client,
                              std::optional<std::size_t> round) {
    std::string msg = "training diverged at local step " + std::to_string(step);
    if (client) msg += ", client " + std::to_string(*client);
    if (round) msg += ", round " + std::to_string(*round);
    return msg;
  }

  std::size_t step_;
  std::optional<std::size_t> client_;
  std::optional<std::size_t> round_;
};

}  // namespace silo
