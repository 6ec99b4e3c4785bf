#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace nonmarkov {

/// Right-continuous piecewise-constant function on [start, end].
///
/// The value on [start, times[0]) is `initial`; on [times[k], times[k+1]) it
/// is values[k]. Knot times are strictly increasing and lie in [start, end].
class StepFunction {
 public:
  StepFunction() = default;

  StepFunction(double start, double end, double initial)
      : start_(start), end_(end), initial_(initial) {
    if (!(end >= start)) throw std::invalid_argument("StepFunction: end < start");
  }

  StepFunction(double start, double end, double initial, std::vector<double> times,
               std::vector<double> values)
      : start_(start), end_(end), initial_(initial), times_(std::move(times)),
        values_(std::move(values)) {
    if (!(end >= start)) throw std::invalid_argument("StepFunction: end < start");
    if (times_.size() != values_.size())
      throw std::invalid_argument("StepFunction: times/values size mismatch");
    for (std::size_t k = 0; k < times_.size(); ++k) {
      if (times_[k] < start_ || times_[k] > end_)
        throw std::invalid_argument("StepFunction: knot outside [start, end]");
      if (k > 0 && !(times_[k] > times_[k - 1]))
        throw std::invalid_argument("StepFunction: knot times not strictly increasing");
    }
  }

  /// Appends a knot; `t` must exceed the last knot.
  void push_back(double t, double value) {
    if (!times_.empty() && !(t > times_.back()))
      throw std::invalid_argument("StepFunction::push_back: non-increasing time");
    if (t < start_ || t > end_) throw std::invalid_argument("StepFunction::push_back: out of range");
    times_.push_back(t);
    values_.push_back(value);
  }

  double start() const noexcept { return start_; }
  double end() const noexcept { return end_; }
  double initial() const noexcept { return initial_; }
  std::span<const double> times() const noexcept { return times_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return times_.size(); }
  bool empty() const noexcept { return times_.empty(); }
  double back_value() const noexcept { return values_.empty() ? initial_ : values_.back(); }

  double operator()(double t) const noexcept {
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return initial_;
    return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
  }

  /// Value just before t, f(t-).
  double left_limit(double t) const noexcept {
    auto it = std::lower_bound(times_.begin(), times_.end(), t);
    if (it == times_.begin()) return initial_;
    return values_[static_cast<std::size_t>(it - times_.begin()) - 1];
  }

  /// Exact integral over [a, b] with start <= a <= b <= end.
  double integral(double a, double b) const {
    if (a < start_ || b > end_ || a > b)
      throw std::invalid_argument("StepFunction::integral: bounds outside [start, end]");
    double total = 0.0;
    double cursor = a;
    double current = (*this)(a);
    auto it = std::upper_bound(times_.begin(), times_.end(), a);
    for (; it != times_.end() && *it < b; ++it) {
      total += current * (*it - cursor);
      cursor = *it;
      current = values_[static_cast<std::size_t>(it - times_.begin())];
    }
    total += current * (b - cursor);
    return total;
  }

  double integral() const { return integral(start_, end_); }

  /// Supremum of |f - g| over [max(starts), min(ends)], exact for step functions.
  friend double sup_distance(const StepFunction& f, const StepFunction& g) {
    const double lo = std::max(f.start_, g.start_);
    const double hi = std::min(f.end_, g.end_);
    double best = std::abs(f(lo) - g(lo));
    auto visit = [&](std::span<const double> ts) {
      for (double t : ts)
        if (t >= lo && t <= hi) best = std::max(best, std::abs(f(t) - g(t)));
    };
    visit(f.times());
    visit(g.times());
    return best;
  }

 private:
  double start_ = 0.0;
  double end_ = 0.0;
  double initial_ = 0.0;
  std::vector<double> times_;
  std::vector<double> values_;
};

}  // namespace nonmarkov
