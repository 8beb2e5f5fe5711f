#pragma once

#include <stdexcept>
#include <string>

namespace cf2 {

// Caller supplied something invalid (bad flag, inconsistent shapes, bad file).
// The CLI maps these to exit status 1.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ShapeError : public UsageError {
public:
    using UsageError::UsageError;
};

class ParseError : public UsageError {
public:
    using UsageError::UsageError;
};

class ValidationError : public UsageError {
public:
    using UsageError::UsageError;
};

// Numerical failures during a run. The CLI maps these to exit status 2.
class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, std::size_t epoch)
        : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

class OptimizationError : public std::runtime_error {
public:
    OptimizationError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace cf2
