#pragma once

// Closed-form systems with known dynamics. They calibrate the stability
// classifier and the rate estimator: the contraction has an exact rate to
// recover, the cubic repeller must never be classified as attracting.

#include <cstddef>

#include "lyapem/em_system.hpp"

namespace lyapem {

// F(θ) = ρ θ. For ρ in (0,1) the origin is exponentially stable with rate
// exactly ρ. The potential is l(θ) = ||θ||, so the Lyapunov gap against the
// origin equals the iterate distance and both rate targets agree.
class LinearContractionSystem : public EmSystem {
 public:
  LinearContractionSystem(double rho, std::size_t dim) : rho_(rho), dim_(dim) {}

  std::size_t state_dim() const override { return dim_; }

  ParamPoint step(const ParamPoint& point) const override {
    std::vector<double> next(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) next[i] = rho_ * point[i];
    return ParamPoint(std::move(next));
  }

  double neg_log_posterior(const ParamPoint& point) const override {
    return norm(point);
  }

  double latent_kl(const ParamPoint& theta, const ParamPoint& theta_hat) const override {
    const double d = distance(theta, theta_hat);
    return 0.5 * d * d;
  }

  double rho() const { return rho_; }

 private:
  double rho_;
  std::size_t dim_;
};

// F(θ) = θ + θ³ componentwise. The origin is an equilibrium but repels:
// every nonzero start leaves every ball, overflowing to NonFiniteState for
// large excursions.
class CubicRepellerSystem : public EmSystem {
 public:
  explicit CubicRepellerSystem(std::size_t dim) : dim_(dim) {}

  std::size_t state_dim() const override { return dim_; }

  ParamPoint step(const ParamPoint& point) const override {
    std::vector<double> next(point.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
      const double x = point[i];
      next[i] = x + x * x * x;
    }
    return ParamPoint(std::move(next));
  }

  double neg_log_posterior(const ParamPoint& point) const override {
    return norm(point);
  }

  double latent_kl(const ParamPoint& theta, const ParamPoint& theta_hat) const override {
    const double d = distance(theta, theta_hat);
    return 0.5 * d * d;
  }

 private:
  std::size_t dim_;
};

}  // namespace lyapem
