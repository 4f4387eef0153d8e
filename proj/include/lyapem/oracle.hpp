#pragma once

// Independent brute-force verifiers. These deliberately avoid the closed
// forms they are used to check: the M-step oracle maximizes Q by lattice
// search over the raw Q surface, the KL oracle is a direct term-by-term sum,
// and stationarity is probed by central differences.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lyapem/em_system.hpp"
#include "lyapem/param_point.hpp"

namespace lyapem {

struct LatticeSearchConfig {
  double initial_radius = 4.0;
  double shrink_factor = 0.6;        // in (0,1)
  std::size_t points_per_axis = 5;   // odd, >= 3
  std::size_t rounds = 40;
  std::size_t budget = 1'000'000;    // max total Q evaluations

  void validate(std::size_t dim) const;
};

// Derivative-free maximizer of Q(, theta_hat): a shrinking coordinate
// lattice centered on the incumbent best point, starting at theta_hat.
// Deterministic; lattice argmax ties go to the lexicographically smallest
// index. Intended for desk-scale dimensions (M*d <= 6).
ParamPoint numeric_m_step(const EmSystem& system, const ParamPoint& theta_hat,
                          const LatticeSearchConfig& config);

// Discrete KL divergence by direct summation, with 0*log(0/q) = 0.
// Returns +inf when p puts mass where q has exactly none.
double kl_direct(std::span<const double> p, std::span<const double> q);

// Central differences of a scalar field; the step along coordinate j is
// h * (1 + |theta_j|).
std::vector<double> fd_gradient(const std::function<double(const ParamPoint&)>& field,
                                const ParamPoint& theta, double h);

}  // namespace lyapem
