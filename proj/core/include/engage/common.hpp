#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace engage {

using StateId = std::uint32_t;
using ActionId = std::uint32_t;

// Categorical feature ids describing a state. A tabular state is the
// single-element vector {state id}.
using FeatureIds = std::vector<std::uint32_t>;

struct PairKey {
    FeatureIds state;
    ActionId action = 0;

    auto operator<=>(const PairKey&) const = default;
    bool operator==(const PairKey&) const = default;
};

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Malformed inputs: bad probability tables, bad configs, shape mismatches.
class ValidationError : public Error {
  public:
    using Error::Error;
};

// Malformed or inconsistent data files and records.
class DataError : public Error {
  public:
    using Error::Error;
};

class ConvergenceError : public Error {
  public:
    ConvergenceError(const std::string& what, std::vector<double> trace)
        : Error(what), trace_(std::move(trace)) {}

    const std::vector<double>& trace() const noexcept { return trace_; }

  private:
    std::vector<double> trace_;
};

class DivergenceError : public Error {
  public:
    DivergenceError(const std::string& what, std::size_t step)
        : Error(what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

  private:
    std::size_t step_;
};

}  // namespace engage
