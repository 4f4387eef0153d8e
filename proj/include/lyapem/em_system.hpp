#pragma once

// Discrete-time dynamical-system view of EM-like iterations: an abstract
// step map F together with the two scalar fields every diagnostic needs,
// the objective l(θ) = -log p(θ|y) (up to an additive constant) and the
// latent premetric d(θ, θ̂).

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "lyapem/param_point.hpp"

namespace lyapem {

class EmSystem {
 public:
  virtual ~EmSystem() = default;

  virtual std::size_t state_dim() const = 0;

  // The map F. Must be deterministic: identical inputs give identical
  // outputs, bit for bit.
  virtual ParamPoint step(const ParamPoint& point) const = 0;

  // l(θ), unnormalized. All downstream conditions are invariant to the
  // additive constant.
  virtual double neg_log_posterior(const ParamPoint& point) const = 0;

  // Premetric d(θ, θ̂): nonnegative, zero at θ == θ̂, not symmetric.
  virtual double latent_kl(const ParamPoint& theta, const ParamPoint& theta_hat) const = 0;

  // Q(θ, θ̂) = -l(θ) - d(θ, θ̂), sharing l's additive constant across θ.
  double q_value(const ParamPoint& theta, const ParamPoint& theta_hat) const {
    return -neg_log_posterior(theta) - latent_kl(theta, theta_hat);
  }
};

enum class StopReason { MaxIters, StepNormBelowTol, LogPostDeltaBelowTol };

const char* to_string(StopReason reason);

struct StopRule {
  std::size_t max_iters = 500;    // always enabled
  double step_norm_tol = 1e-10;   // stop when ||θ_{k+1} - θ_k|| <= tol
  double log_post_tol = 0.0;      // 0 disables the log-posterior delta criterion

  void validate() const;
};

// Ordered iterates of one run together with the per-iterate and per-step
// scalars the diagnostics consume. delta_v and step_kl have one entry per
// step (one fewer than iterates). delta_v[k] = l(θ_{k+1}) - l(θ_k) is
// reference-free; v_vals needs a reference point and stays empty until
// attach_reference() supplies one.
struct Trajectory {
  std::vector<ParamPoint> iterates;
  std::vector<double> log_post;  // -l per iterate, unnormalized
  std::vector<double> delta_v;   // per step: log_post[k] - log_post[k+1]
  std::vector<double> step_kl;   // per step: d(θ_{k+1}, θ_k)
  std::vector<double> v_vals;    // per iterate once a reference is attached
  StopReason stop_reason = StopReason::MaxIters;

  std::size_t steps() const { return delta_v.size(); }
  const ParamPoint& terminal() const { return iterates.back(); }
};

// Iterates θ_{k+1} = F(θ_k) from `start` until the rule stops it.
// NonFiniteState raised inside the step map is rethrown with the offending
// iteration index attached.
Trajectory run_trajectory(const EmSystem& system, const ParamPoint& start,
                          const StopRule& rule);

// True iff ||F(point) - point||_2 <= tol.
bool is_fixed_point(const EmSystem& system, const ParamPoint& point, double tol);

// Fills v_vals with V(θ_k) = l(θ_k) - l(θ⋆) for the given reference.
void attach_reference(Trajectory& traj, const EmSystem& system,
                      const ParamPoint& theta_star);

// CSV with header k,theta_0..theta_{D-1},log_post,delta_v,step_kl; floats at
// 17 significant digits so values round-trip exactly. The final row has no
// step, so its delta_v/step_kl cells are empty.
void write_trajectory_csv(const Trajectory& traj, std::ostream& os);
Trajectory read_trajectory_csv(std::istream& is);

}  // namespace lyapem
