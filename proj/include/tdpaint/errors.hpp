#pragma once

#include <stdexcept>
#include <string>

namespace tdpaint {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  ok = 0,
  config = 2,
  numeric = 3,
  io = 4,
};

/// Invalid or missing configuration field. `field()` is the dotted path,
/// e.g. "schedule.T".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A NaN or Inf showed up during sampling or training. `step()` is the
/// diffusion step (sampling) or optimizer step (training) where it happened.
class NumericError : public std::runtime_error {
 public:
  NumericError(int step, const std::string& what)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  int step() const noexcept { return step_; }

 private:
  int step_;
};

class IoError : public std::runtime_error {
 public:
  IoError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace tdpaint
