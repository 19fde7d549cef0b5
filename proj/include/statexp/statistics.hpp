#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace statexp {

/// Streaming mean and variance (Welford), mergeable (Chan et al.).
struct RunningStats {
  std::uint64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double v) {
    ++count;
    const double d = v - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (v - mean);
  }

  void merge(const RunningStats& o) {
    if (o.count == 0) return;
    if (count == 0) {
      *this = o;
      return;
    }
    const double n1 = static_cast<double>(count), n2 = static_cast<double>(o.count);
    const double d = o.mean - mean;
    const double n = n1 + n2;
    mean += d * n2 / n;
    m2 += o.m2 + d * d * n1 * n2 / n;
    count += o.count;
  }

  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double standard_error() const { return count > 1 ? std::sqrt(variance() / static_cast<double>(count)) : 0.0; }
};

struct Estimate {
  double mean = 0.0;
  double se = 0.0;
  std::uint64_t n = 0;

  static Estimate from(const RunningStats& s) { return {s.mean, s.standard_error(), s.count}; }
};

/// Correctly rounded floating-point sum (Shewchuk partials). The result
/// does not depend on the order of the terms, and negating every term
/// negates the result exactly.
class ExactSum {
 public:
  void add(double x) {
    std::size_t i = 0;
    for (double y : partials_) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials_[i++] = lo;
      x = hi;
    }
    partials_.resize(i);
    partials_.push_back(x);
  }

  double value() const {
    if (partials_.empty()) return 0.0;
    std::size_t n = partials_.size();
    double hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      const double x = hi;
      const double y = partials_[--n];
      hi = x + y;
      lo = y - (hi - x);
      if (lo != 0.0) break;
    }
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) || (lo > 0.0 && partials_[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
    return hi;
  }

 private:
  std::vector<double> partials_;
};

/// |a - b| <= k * sqrt(se_a^2 + se_b^2), with exact equality accepted.
inline bool within_standard_errors(double a, double se_a, double b, double se_b, double k = 3.0) {
  const double diff = std::abs(a - b);
  return diff == 0.0 || diff <= k * std::sqrt(se_a * se_a + se_b * se_b);
}

}  // namespace statexp
