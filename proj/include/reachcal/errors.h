#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace reachcal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SimulationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class CalibrationInfeasible : public Error {
 public:
  CalibrationInfeasible(const std::string& what, int step)
      : Error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// An artifact was produced from different inputs than the ones supplied.
class StaleArtifactError : public Error {
 public:
  using Error::Error;
};

class GridTooSmallError : public Error {
 public:
  using Error::Error;
};

}  // namespace reachcal
