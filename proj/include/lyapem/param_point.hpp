#pragma once

// A point in the parameter/state space of a discrete-time system. For the
// mixture model this is the stacked component means (length M*d); toy
// systems use arbitrary lengths. Entries are validated finite on
// construction and the coordinates are immutable afterwards.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lyapem/errors.hpp"

namespace lyapem {

class ParamPoint {
 public:
  ParamPoint() = default;

  explicit ParamPoint(std::vector<double> coords) : coords_(std::move(coords)) {
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      if (!std::isfinite(coords_[i])) {
        throw NonFiniteState("parameter point has non-finite entry at index " +
                             std::to_string(i));
      }
    }
  }

  static ParamPoint zeros(std::size_t n) { return ParamPoint(std::vector<double>(n, 0.0)); }

  std::size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  double operator[](std::size_t i) const { return coords_[i]; }

  const std::vector<double>& coords() const { return coords_; }
  std::span<const double> view() const { return coords_; }
  std::span<const double> block(std::size_t offset, std::size_t len) const {
    return std::span<const double>(coords_).subspan(offset, len);
  }

  friend bool operator==(const ParamPoint& a, const ParamPoint& b) {
    return a.coords_ == b.coords_;
  }

 private:
  std::vector<double> coords_;
};

inline double norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline double norm(const ParamPoint& p) { return norm(p.view()); }

inline double distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline double distance(const ParamPoint& a, const ParamPoint& b) {
  return distance(a.view(), b.view());
}

}  // namespace lyapem
