#include "lyapem/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lyapem/errors.hpp"
#include "lyapem/parallel.hpp"
#include "lyapem/rng.hpp"

namespace lyapem {

namespace {

constexpr double kDescentSlack = 1e-8;
constexpr double kRecursionSlack = 1e-9;
constexpr double kIdentifiabilityFloor = 1e-14;
constexpr double kInf = std::numeric_limits<double>::infinity();

double rate_floor(double scale) {
  return 1e3 * std::numeric_limits<double>::epsilon() * (1.0 + scale);
}

std::vector<double> unit_direction(Rng& rng, std::size_t dim) {
  std::vector<double> dir(dim);
  double n = 0.0;
  do {
    for (double& v : dir) v = rng.normal();
    n = norm(dir);
  } while (!(n > 0.0));
  for (double& v : dir) v /= n;
  return dir;
}

ParamPoint ball_sample(Rng& rng, const ParamPoint& center, double radius) {
  const std::size_t dim = center.size();
  std::vector<double> dir = unit_direction(rng, dim);
  const double r = radius * std::pow(rng.uniform_pos(), 1.0 / static_cast<double>(dim));
  std::vector<double> coords = center.coords();
  for (std::size_t j = 0; j < dim; ++j) coords[j] += r * dir[j];
  return ParamPoint(std::move(coords));
}

}  // namespace

LyapunovFn::LyapunovFn(LyapunovKind kind, const EmSystem& system, ParamPoint reference)
    : kind_(kind),
      system_(&system),
      reference_(std::move(reference)),
      ref_neg_log_post_(system.neg_log_posterior(reference_)) {}

double LyapunovFn::operator()(const ParamPoint& theta) const {
  const double gap = system_->neg_log_posterior(theta) - ref_neg_log_post_;
  switch (kind_) {
    case LyapunovKind::LogPosteriorGap: return gap;
    case LyapunovKind::PosteriorGap: return 1.0 - std::exp(-gap);
  }
  return gap;
}

double v_eval(const LyapunovFn& fn, const ParamPoint& theta) { return fn(theta); }

double delta_v(const LyapunovFn& fn, const EmSystem& system, const ParamPoint& theta) {
  return fn(system.step(theta)) - fn(theta);
}

const char* to_string(StabilityVerdict verdict) {
  switch (verdict) {
    case StabilityVerdict::NotEquilibrium: return "not_equilibrium";
    case StabilityVerdict::Equilibrium: return "equilibrium";
    case StabilityVerdict::Stable: return "stable";
    case StabilityVerdict::AsymptoticallyStable: return "asymptotically_stable";
    case StabilityVerdict::ExponentiallyStable: return "exponentially_stable";
  }
  return "unknown";
}

void ProbeConfig::validate() const {
  if (radii.empty()) throw ConfigError("probe.radii", "at least one radius required");
  for (double r : radii)
    if (!(r > 0.0)) throw ConfigError("probe.radii", "radii must be positive");
  if (samples_per_radius == 0) throw ConfigError("probe.samples_per_radius", "must be >= 1");
  if (horizon < 2) throw ConfigError("probe.horizon", "must be >= 2");
  if (!(eps_factor >= 1.0)) throw ConfigError("probe.eps_factor", "must be >= 1");
}

namespace {

struct ProbeSample {
  double max_excursion = 0.0;
  double terminal = kInf;
  double tail_max_ratio = kInf;
  std::size_t tail_count = 0;
  double tail_log_sum = 0.0;      // Σ log(ratio) over the tail window
  double v_tail_log_sum = 0.0;    // same for Lyapunov-value ratios
  std::size_t v_tail_count = 0;
  bool escaped = false;
};

ProbeSample run_probe(const EmSystem& system, const ParamPoint& theta_star,
                      const ParamPoint& start, std::size_t horizon, double ell_star) {
  ProbeSample out;
  std::vector<double> dist;
  std::vector<double> vval;
  dist.reserve(horizon + 1);
  vval.reserve(horizon + 1);

  ParamPoint cur = start;
  dist.push_back(distance(cur, theta_star));
  vval.push_back(system.neg_log_posterior(cur) - ell_star);
  for (std::size_t k = 0; k < horizon; ++k) {
    ParamPoint next;
    try {
      next = system.step(cur);
    } catch (const NonFiniteState&) {
      out.escaped = true;
      break;
    }
    cur = std::move(next);
    dist.push_back(distance(cur, theta_star));
    vval.push_back(system.neg_log_posterior(cur) - ell_star);
  }

  out.max_excursion = out.escaped ? kInf : *std::max_element(dist.begin(), dist.end());
  out.terminal = out.escaped ? kInf : dist.back();

  const double floor = rate_floor(norm(theta_star));
  std::vector<double> ratios;
  for (std::size_t k = 0; k + 1 < dist.size(); ++k)
    if (dist[k] > floor && dist[k + 1] > floor) ratios.push_back(dist[k + 1] / dist[k]);
  if (!ratios.empty()) {
    const std::size_t tail_start = ratios.size() / 2;
    out.tail_count = ratios.size() - tail_start;
    out.tail_max_ratio = 0.0;
    for (std::size_t k = tail_start; k < ratios.size(); ++k) {
      out.tail_max_ratio = std::max(out.tail_max_ratio, ratios[k]);
      out.tail_log_sum += std::log(ratios[k]);
    }
  }

  const double vfloor = rate_floor(std::abs(vval.front()));
  std::vector<double> vratios;
  for (std::size_t k = 0; k + 1 < vval.size(); ++k)
    if (vval[k] > vfloor && vval[k + 1] > vfloor) vratios.push_back(vval[k + 1] / vval[k]);
  if (!vratios.empty()) {
    const std::size_t tail_start = vratios.size() / 2;
    out.v_tail_count = vratios.size() - tail_start;
    for (std::size_t k = tail_start; k < vratios.size(); ++k)
      out.v_tail_log_sum += std::log(vratios[k]);
  }
  return out;
}

}  // namespace

StabilityReport classify_stability(const EmSystem& system, const ParamPoint& theta_star,
                                   const ProbeConfig& probe) {
  probe.validate();
  StabilityReport report;
  report.caveat = "sampled evidence, not certificate";
  report.unchecked_assumptions = {
      "objective is radially unbounded (needed for any global claim)",
      "the reference point is the unique fixed point",
      "posterior support covers the whole parameter space",
  };
  report.fixed_point_residual = distance(system.step(theta_star), theta_star);
  if (report.fixed_point_residual > probe.fixed_point_tol) {
    report.verdict = StabilityVerdict::NotEquilibrium;
    return report;
  }

  const double ell_star = system.neg_log_posterior(theta_star);
  bool all_stable = true;
  bool all_asymptotic = true;
  bool all_exponential = true;
  double rho_log_sum = 0.0;
  std::size_t rho_count = 0;
  double mu_log_sum = 0.0;
  std::size_t mu_count = 0;

  for (std::size_t ri = 0; ri < probe.radii.size(); ++ri) {
    const double radius = probe.radii[ri];
    std::vector<ProbeSample> samples(probe.samples_per_radius);

    const int workers = workers_for(probe.samples_per_radius, 4);
#pragma omp parallel for schedule(dynamic) num_threads(workers) if (workers > 1)
    for (long long s = 0; s < static_cast<long long>(probe.samples_per_radius); ++s) {
      Rng rng(child_seed(probe.seed, ri, static_cast<std::uint64_t>(s)));
      std::vector<double> dir = unit_direction(rng, theta_star.size());
      std::vector<double> coords = theta_star.coords();
      for (std::size_t j = 0; j < coords.size(); ++j) coords[j] += radius * dir[j];
      samples[static_cast<std::size_t>(s)] =
          run_probe(system, theta_star, ParamPoint(std::move(coords)), probe.horizon, ell_star);
    }

    RadiusEvidence ev;
    ev.radius = radius;
    ev.samples = probe.samples_per_radius;
    ev.stable_ok = true;
    ev.asymptotic_ok = true;
    ev.exponential_ok = true;
    for (const ProbeSample& s : samples) {
      ev.sample_max_excursion.push_back(s.max_excursion);
      ev.max_excursion = std::max(ev.max_excursion, s.max_excursion);
      ev.worst_terminal = std::max(ev.worst_terminal, s.terminal);
      if (s.tail_count > 0)
        ev.worst_tail_ratio = std::max(ev.worst_tail_ratio, s.tail_max_ratio);
      ev.stable_ok = ev.stable_ok && s.max_excursion <= probe.eps_factor * radius;
      ev.asymptotic_ok =
          ev.asymptotic_ok && s.terminal <= probe.asymptotic_contraction * radius;
      ev.exponential_ok = ev.exponential_ok && s.tail_count > 0 &&
                          s.tail_max_ratio <= 1.0 - probe.exp_ratio_margin;
      if (s.tail_count > 0) {
        rho_log_sum += s.tail_log_sum;
        rho_count += s.tail_count;
      }
      if (s.v_tail_count > 0) {
        mu_log_sum += s.v_tail_log_sum;
        mu_count += s.v_tail_count;
      }
    }
    all_stable = all_stable && ev.stable_ok;
    all_asymptotic = all_asymptotic && ev.asymptotic_ok;
    all_exponential = all_exponential && ev.exponential_ok;
    report.evidence.push_back(std::move(ev));
  }

  report.verdict = StabilityVerdict::Equilibrium;
  if (all_stable) {
    report.verdict = StabilityVerdict::Stable;
    if (all_asymptotic) {
      report.verdict = StabilityVerdict::AsymptoticallyStable;
      if (all_exponential && rho_count > 0) {
        report.verdict = StabilityVerdict::ExponentiallyStable;
        report.rho_hat = std::exp(rho_log_sum / static_cast<double>(rho_count));
        if (mu_count > 0)
          report.mu_hat = std::exp(mu_log_sum / static_cast<double>(mu_count));
      }
    }
  }
  return report;
}

RateEstimate estimate_rate(const Trajectory& traj, const ParamPoint& theta_star,
                           const RateTarget& target, double tail_fraction) {
  if (traj.iterates.size() < 3)
    throw InsufficientData("rate estimation needs at least 3 iterates");
  if (!(tail_fraction > 0.0) || tail_fraction > 1.0)
    throw ConfigError("tail_fraction", "must lie in (0,1]");

  std::vector<double> values(traj.iterates.size());
  double scale = 0.0;
  switch (target.kind) {
    case RateTargetKind::IterateNorm:
      for (std::size_t k = 0; k < traj.iterates.size(); ++k)
        values[k] = distance(traj.iterates[k], theta_star);
      scale = norm(theta_star);
      break;
    case RateTargetKind::ComponentNorm: {
      if (target.component_offset + target.component_len > theta_star.size())
        throw ConfigError("rate_target", "component block exceeds state dimension");
      const auto star = theta_star.block(target.component_offset, target.component_len);
      for (std::size_t k = 0; k < traj.iterates.size(); ++k)
        values[k] = distance(
            traj.iterates[k].block(target.component_offset, target.component_len), star);
      scale = norm(star);
      break;
    }
    case RateTargetKind::LyapunovValue:
      if (traj.v_vals.size() != traj.iterates.size())
        throw Error("lyapunov-value rate target needs v_vals; attach a reference first");
      values = traj.v_vals;
      scale = std::abs(values.front());
      break;
  }

  const double floor = rate_floor(scale);
  RateEstimate est;
  est.target = target;
  for (std::size_t k = 0; k + 1 < values.size(); ++k) {
    if (values[k] > floor && values[k + 1] > floor) {
      est.per_step.push_back(values[k + 1] / values[k]);
      est.step_index.push_back(k);
    }
  }
  if (est.per_step.size() < 2)
    throw InsufficientData("fewer than 2 usable rate ratios above the denominator floor");

  const std::size_t count = est.per_step.size();
  std::size_t window_len =
      static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(count)));
  window_len = std::clamp<std::size_t>(window_len, 1, count);
  const std::size_t begin = count - window_len;

  double log_sum = 0.0;
  for (std::size_t k = begin; k < count; ++k) log_sum += std::log(est.per_step[k]);
  est.window_estimate = std::exp(log_sum / static_cast<double>(window_len));
  est.window = {est.step_index[begin], est.step_index[count - 1]};
  return est;
}

const char* to_string(ConditionKind kind) {
  switch (kind) {
    case ConditionKind::Descent: return "descent";
    case ConditionKind::Identifiability: return "identifiability";
    case ConditionKind::KlDominatesGap: return "kl_dominates_gap";
    case ConditionKind::PosteriorConcavity: return "posterior_concavity";
    case ConditionKind::PowerLawBounds: return "power_law_bounds";
  }
  return "unknown";
}

ConditionCheckResult check_condition(const EmSystem& system, const ParamPoint& theta_star,
                                     const ConditionSpec& condition,
                                     const SampleRegion& region, std::size_t n_samples,
                                     std::uint64_t seed) {
  if (!(region.radius > 0.0)) throw ConfigError("region.radius", "must be positive");
  if (n_samples == 0) throw ConfigError("n_samples", "must be >= 1");
  if ((condition.kind == ConditionKind::KlDominatesGap ||
       condition.kind == ConditionKind::PosteriorConcavity) &&
      (!(condition.mu > 0.0) || !(condition.mu < 1.0)))
    throw ConfigError("condition.mu", "must lie in (0,1)");
  if (condition.kind == ConditionKind::PowerLawBounds && !(condition.power > 0.0))
    throw ConfigError("condition.power", "must be positive");

  const double ell_star = system.neg_log_posterior(theta_star);

  struct SampleEval {
    ParamPoint point;
    double margin = 0.0;
    bool violated = false;
    double err = 0.0;  // ||θ̂ - θ⋆||
    double v = 0.0;    // log-posterior gap
    double dv = 0.0;   // ΔV of the log gap
  };
  std::vector<SampleEval> evals(n_samples);

  const int workers = workers_for(n_samples, 8);
#pragma omp parallel for schedule(dynamic) num_threads(workers) if (workers > 1)
  for (long long s = 0; s < static_cast<long long>(n_samples); ++s) {
    const auto idx = static_cast<std::size_t>(s);
    Rng rng(child_seed(seed, 0x5eed, static_cast<std::uint64_t>(s)));
    SampleEval ev;
    ev.point = ball_sample(rng, region.center, region.radius);

    try {
    switch (condition.kind) {
      case ConditionKind::Descent: {
        const ParamPoint next = system.step(ev.point);
        const double dv = system.neg_log_posterior(next) - system.neg_log_posterior(ev.point);
        ev.margin = dv + system.latent_kl(next, ev.point);
        ev.violated = ev.margin > kDescentSlack;
        break;
      }
      case ConditionKind::Identifiability: {
        ParamPoint other = ball_sample(rng, region.center, region.radius);
        while (distance(other, ev.point) <= 1e-9 * (1.0 + region.radius))
          other = ball_sample(rng, region.center, region.radius);
        const double d = system.latent_kl(other, ev.point);
        ev.margin = kIdentifiabilityFloor - d;
        ev.violated = ev.margin > 0.0;
        break;
      }
      case ConditionKind::KlDominatesGap: {
        const ParamPoint next = system.step(ev.point);
        const double gap = system.neg_log_posterior(ev.point) - ell_star;
        const double d = system.latent_kl(next, ev.point);
        ev.margin = (1.0 - condition.mu) * gap - d;
        ev.violated = ev.margin > kRecursionSlack;
        break;
      }
      case ConditionKind::PosteriorConcavity: {
        const ParamPoint next = system.step(ev.point);
        const double r_here = std::exp(-(system.neg_log_posterior(ev.point) - ell_star));
        const double r_next = std::exp(-(system.neg_log_posterior(next) - ell_star));
        ev.margin = condition.mu * r_here + (1.0 - condition.mu) - r_next;
        ev.violated = ev.margin > kRecursionSlack;
        break;
      }
      case ConditionKind::PowerLawBounds: {
        const ParamPoint next = system.step(ev.point);
        ev.err = distance(ev.point, theta_star);
        ev.v = system.neg_log_posterior(ev.point) - ell_star;
        ev.dv = (system.neg_log_posterior(next) - ell_star) - ev.v;
        // V must be positive away from θ⋆ and non-increasing under F.
        const double pd_violation = ev.err > rate_floor(norm(theta_star)) ? -ev.v : 0.0;
        ev.margin = std::max(pd_violation, ev.dv - kDescentSlack);
        ev.violated = ev.margin > 0.0;
        break;
      }
    }
    } catch (const NonFiniteState&) {
      // A sample whose image leaves the finite domain fails any of these
      // inequalities; record it instead of aborting the sweep.
      ev.margin = kInf;
      ev.violated = true;
    }
    evals[idx] = std::move(ev);
  }

  ConditionCheckResult result;
  result.condition = condition;
  result.samples_tested = n_samples;
  for (std::size_t s = 0; s < n_samples; ++s) {
    if (evals[s].violated)
      result.violations.push_back({s, evals[s].point, evals[s].margin});
  }
  result.passed = result.violations.empty();

  if (condition.kind == ConditionKind::PowerLawBounds && result.passed) {
    PowerLawFit fit;
    fit.power = condition.power;
    fit.a1 = kInf;
    fit.a2 = 0.0;
    fit.a3 = kInf;
    const double floor = rate_floor(norm(theta_star));
    std::size_t used = 0;
    for (const SampleEval& ev : evals) {
      if (ev.err <= floor) continue;
      const double ep = std::pow(ev.err, condition.power);
      fit.a1 = std::min(fit.a1, ev.v / ep);
      fit.a2 = std::max(fit.a2, ev.v / ep);
      fit.a3 = std::min(fit.a3, -ev.dv / ep);
      ++used;
    }
    if (used > 0 && fit.a2 > 0.0) {
      fit.mu_implied = 1.0 - fit.a3 / fit.a2;
      result.power_law = fit;
    }
  }
  return result;
}

}  // namespace lyapem
