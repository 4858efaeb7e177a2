#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace usconf {

/// Malformed or out-of-range input (bad dimensions, invalid values, format errors).
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// An iterative computation stopped before meeting its tolerance. Carries the
/// best partial result so the caller may still use it.
template <class Partial, class Stats>
class NotConvergedError : public std::runtime_error {
public:
  NotConvergedError(const std::string &what, Partial partial, Stats stats)
      : std::runtime_error(what), partial_(std::move(partial)), stats_(stats) {}

  const Partial &partial() const noexcept { return partial_; }
  const Stats &stats() const noexcept { return stats_; }

private:
  Partial partial_;
  Stats stats_;
};

/// Monte-Carlo walks hit the step cap too often for the estimate to be trusted.
class CensoredWalksError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A metric is undefined for the given input (e.g. surface distance to an
/// empty mask). Never silently reported as 0.
class UndefinedMetricError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace usconf
