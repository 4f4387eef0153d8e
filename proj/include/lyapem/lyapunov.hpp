#pragma once

// Lyapunov-function evaluation, sampled stability classification, and
// numeric checkers for the convergence conditions. Verdicts here are
// sampled evidence, never certificates: every report says so.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lyapem/em_system.hpp"
#include "lyapem/param_point.hpp"

namespace lyapem {

enum class LyapunovKind {
  LogPosteriorGap,  // V(θ) = l(θ) - l(θ⋆)
  PosteriorGap,     // V(θ) = 1 - exp(-(l(θ) - l(θ⋆))), the posterior gap
                    // normalized by p(θ⋆|y) so it is computable from
                    // unnormalized log posteriors
};

// Candidate Lyapunov function anchored at a reference point θ⋆.
// V(θ⋆) = 0 exactly for both kinds.
class LyapunovFn {
 public:
  LyapunovFn(LyapunovKind kind, const EmSystem& system, ParamPoint reference);

  double operator()(const ParamPoint& theta) const;

  LyapunovKind kind() const { return kind_; }
  const ParamPoint& reference() const { return reference_; }
  double reference_neg_log_post() const { return ref_neg_log_post_; }

 private:
  LyapunovKind kind_;
  const EmSystem* system_;  // non-owning; the system outlives the diagnostics
  ParamPoint reference_;
  double ref_neg_log_post_;
};

double v_eval(const LyapunovFn& fn, const ParamPoint& theta);

// ΔV(θ) = V(F(θ)) - V(θ).
double delta_v(const LyapunovFn& fn, const EmSystem& system, const ParamPoint& theta);

enum class StabilityVerdict {
  NotEquilibrium,
  Equilibrium,
  Stable,
  AsymptoticallyStable,
  ExponentiallyStable,
};

const char* to_string(StabilityVerdict verdict);

struct ProbeConfig {
  std::vector<double> radii{0.2, 0.1, 0.05, 0.01};
  std::size_t samples_per_radius = 64;
  std::size_t horizon = 200;
  double eps_factor = 3.0;  // stable evidence: max excursion <= eps_factor * δ
  std::uint64_t seed = 0;
  double fixed_point_tol = 1e-8;
  double asymptotic_contraction = 0.01;  // terminal distance <= this * δ
  double exp_ratio_margin = 1e-3;        // tail ratios must stay <= 1 - margin

  void validate() const;
};

struct RadiusEvidence {
  double radius = 0.0;
  std::size_t samples = 0;
  std::vector<double> sample_max_excursion;  // per sample; +inf if it left ℝ
  double max_excursion = 0.0;                // worst over samples
  double worst_terminal = 0.0;
  double worst_tail_ratio = 0.0;
  bool stable_ok = false;
  bool asymptotic_ok = false;
  bool exponential_ok = false;
};

struct StabilityReport {
  StabilityVerdict verdict = StabilityVerdict::NotEquilibrium;
  std::optional<double> rho_hat;  // iterate rate, present when exponential
  std::optional<double> mu_hat;   // Lyapunov-value rate, when measurable
  double fixed_point_residual = 0.0;
  std::vector<RadiusEvidence> evidence;
  std::string caveat;  // always "sampled evidence, not certificate"
  // Hypotheses a global-convergence claim would additionally need; they are
  // not decidable by sampling and are listed, not assumed.
  std::vector<std::string> unchecked_assumptions;
};

// Probes trajectories started on spheres of the configured radii around
// theta_star and grades the strongest stability level whose evidence holds
// for every sample. Returns NotEquilibrium (with the residual) when
// theta_star is not a fixed point within probe.fixed_point_tol.
StabilityReport classify_stability(const EmSystem& system, const ParamPoint& theta_star,
                                   const ProbeConfig& probe);

enum class RateTargetKind { IterateNorm, LyapunovValue, ComponentNorm };

struct RateTarget {
  RateTargetKind kind = RateTargetKind::IterateNorm;
  std::size_t component_offset = 0;  // ComponentNorm: block start in the state vector
  std::size_t component_len = 0;     // ComponentNorm: block length

  static RateTarget iterate_norm() { return {}; }
  static RateTarget lyapunov_value() { return {RateTargetKind::LyapunovValue, 0, 0}; }
  static RateTarget component_norm(std::size_t offset, std::size_t len) {
    return {RateTargetKind::ComponentNorm, offset, len};
  }
};

struct RateEstimate {
  std::vector<double> per_step;         // ratios, one per usable step
  std::vector<std::size_t> step_index;  // trajectory step of each ratio
  double window_estimate = 0.0;         // geometric mean over the tail window
  std::pair<std::size_t, std::size_t> window{0, 0};  // step indices, inclusive
  RateTarget target;
};

// Per-step error ratios toward theta_star and their tail geometric mean.
// A step is usable only when both endpoint error values exceed the floor
// 1e3 * eps * (1 + scale); steps at or below it are excluded. Throws
// InsufficientData when fewer than 2 usable ratios remain. The
// LyapunovValue target reads v_vals and requires attach_reference() first.
RateEstimate estimate_rate(const Trajectory& traj, const ParamPoint& theta_star,
                           const RateTarget& target, double tail_fraction);

enum class ConditionKind {
  Descent,                // ΔV(θ̂) <= -d(F(θ̂), θ̂)
  Identifiability,  // d(θ, θ̂) > 0 for θ != θ̂
  KlDominatesGap,              // d(F(θ̂), θ̂) >= (1-μ)(l(θ̂) - l(θ⋆))
  PosteriorConcavity,               // r(F(θ̂)) >= μ r(θ̂) + (1-μ), r = exp(-(l - l⋆))
  PowerLawBounds,              // fit a1 e^p <= V <= a2 e^p, ΔV <= -a3 e^p
};

const char* to_string(ConditionKind kind);

struct ConditionSpec {
  ConditionKind kind = ConditionKind::Descent;
  double mu = 0.9;     // KlDominatesGap / PosteriorConcavity
  double power = 2.0;  // PowerLawBounds exponent p
};

struct Violation {
  std::size_t sample_index = 0;
  ParamPoint sample;
  double margin = 0.0;  // signed slack; positive means the inequality failed
};

struct PowerLawFit {
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;
  double power = 2.0;
  double mu_implied = 0.0;  // 1 - a3/a2
};

struct ConditionCheckResult {
  ConditionSpec condition;
  std::size_t samples_tested = 0;
  std::vector<Violation> violations;  // sorted by sample index
  bool passed = false;                // <=> violations empty
  std::optional<PowerLawFit> power_law;
};

struct SampleRegion {
  ParamPoint center;
  double radius = 0.0;
};

// Evaluates the chosen inequality at points drawn uniformly from the ball;
// violations are data, not errors.
ConditionCheckResult check_condition(const EmSystem& system, const ParamPoint& theta_star,
                                     const ConditionSpec& condition,
                                     const SampleRegion& region, std::size_t n_samples,
                                     std::uint64_t seed);

}  // namespace lyapem
