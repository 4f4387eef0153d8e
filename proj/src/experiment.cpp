#include "lyapem/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "lyapem/errors.hpp"
#include "lyapem/io.hpp"
#include "lyapem/json_io.hpp"
#include "lyapem/parallel.hpp"
#include "lyapem/rng.hpp"

namespace lyapem {

namespace {

// Child-seed streams. Each trial draws one dataset shared by every prior
// arm, so the arms are compared on identical data; prior centers get one
// stream per gaussian arm.
constexpr std::uint64_t kDatasetStream = 0xD474;

std::optional<double> median_of(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  if (v.size() % 2 == 1) return v[mid];
  return 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  covariances.push_back(Matrix::diag(std::vector<double>{0.25, 1.0}));
  covariances.push_back(Matrix::diag(std::vector<double>{1.0, 0.25}));
}

void ExperimentConfig::validate() const {
  if (n == 0 && include_flat)
    throw ConfigError("n", "flat-prior baseline needs at least one observation");
  if (dim == 0) throw ConfigError("dim", "must be positive");
  if (m_components == 0) throw ConfigError("m_components", "must be positive");
  if (weights.size() != m_components)
    throw ConfigError("weights", "must have m_components entries");
  if (true_means.size() != m_components)
    throw ConfigError("true_means", "must have m_components entries");
  for (std::size_t m = 0; m < true_means.size(); ++m)
    if (true_means[m].size() != dim)
      throw ConfigError("true_means[" + std::to_string(m) + "]", "must have dim entries");
  if (covariances.size() != m_components)
    throw ConfigError("covariances", "must have m_components entries");
  if (init_means.size() != m_components)
    throw ConfigError("init_means", "must have m_components entries");
  for (std::size_t m = 0; m < init_means.size(); ++m)
    if (init_means[m].size() != dim)
      throw ConfigError("init_means[" + std::to_string(m) + "]", "must have dim entries");
  for (std::size_t i = 0; i < prior_sigmas.size(); ++i)
    if (!(prior_sigmas[i] > 0.0))
      throw ConfigError("prior_sigmas[" + std::to_string(i) + "]", "must be positive");
  if (prior_sigmas.empty() && !include_flat)
    throw ConfigError("prior_sigmas", "need at least one arm (a sigma or the flat baseline)");
  if (trials == 0) throw ConfigError("trials", "must be positive");
  if (rate_kind == RateTargetKind::ComponentNorm &&
      (rate_component < 1 || rate_component > m_components))
    throw ConfigError("rate_target.component", "must lie in 1..m_components");
  if (!(tail_fraction > 0.0) || tail_fraction > 1.0)
    throw ConfigError("tail_fraction", "must lie in (0,1]");
  stop.validate();
  make_spec();  // validates weights/covariances via GmmSpec
}

GmmSpec ExperimentConfig::make_spec() const { return GmmSpec(weights, covariances); }

namespace {

ParamPoint stack_means(const std::vector<std::vector<double>>& means) {
  std::vector<double> coords;
  for (const auto& m : means) coords.insert(coords.end(), m.begin(), m.end());
  return ParamPoint(std::move(coords));
}

}  // namespace

ParamPoint ExperimentConfig::true_means_point() const { return stack_means(true_means); }
ParamPoint ExperimentConfig::init_means_point() const { return stack_means(init_means); }

std::vector<std::string> ExperimentConfig::overridden_fields() const {
  const ExperimentConfig defaults;
  std::vector<std::string> out;
  auto differs = [](const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return true;
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j)
        if (a(i, j) != b(i, j)) return true;
    return false;
  };
  if (seed != defaults.seed) out.push_back("seed");
  if (n != defaults.n) out.push_back("n");
  if (dim != defaults.dim) out.push_back("dim");
  if (m_components != defaults.m_components) out.push_back("m_components");
  if (weights != defaults.weights) out.push_back("weights");
  if (true_means != defaults.true_means) out.push_back("true_means");
  bool cov_diff = covariances.size() != defaults.covariances.size();
  if (!cov_diff)
    for (std::size_t m = 0; m < covariances.size(); ++m)
      cov_diff = cov_diff || differs(covariances[m], defaults.covariances[m]);
  if (cov_diff) out.push_back("covariances");
  if (prior_sigmas != defaults.prior_sigmas) out.push_back("prior_sigmas");
  if (include_flat != defaults.include_flat) out.push_back("include_flat");
  if (trials != defaults.trials) out.push_back("trials");
  if (init_means != defaults.init_means) out.push_back("init_means");
  if (stop.max_iters != defaults.stop.max_iters || stop.step_norm_tol != defaults.stop.step_norm_tol ||
      stop.log_post_tol != defaults.stop.log_post_tol)
    out.push_back("stop");
  if (rate_kind != defaults.rate_kind || rate_component != defaults.rate_component)
    out.push_back("rate_target");
  if (tail_fraction != defaults.tail_fraction) out.push_back("tail_fraction");
  return out;
}

double matched_mean_distance(std::size_t components, std::size_t dim,
                             const ParamPoint& estimate, const ParamPoint& truth) {
  // Brute-force assignment; component counts here are single digits.
  std::vector<std::size_t> perm(components);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t m = 0; m < components; ++m)
      total += distance(estimate.block(perm[m] * dim, dim), truth.block(m * dim, dim));
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(components);
}

TrialResult run_single_trial(const ExperimentConfig& config, std::size_t arm_index,
                             bool flat, std::size_t trial) {
  const GmmSpec spec = config.make_spec();
  const ParamPoint truth = config.true_means_point();

  TrialResult result;
  result.trial = trial;
  result.dataset_seed = child_seed(config.seed, kDatasetStream, trial);
  result.prior_seed = flat ? 0 : child_seed(config.seed, arm_index, trial);

  const Dataset data = sample_dataset(spec, truth, config.n, result.dataset_seed);
  PriorSpec prior = PriorSpec::flat();
  if (!flat) {
    const double sigma_sq = config.prior_sigmas[arm_index];
    result.prior_sigma = sigma_sq;
    // The configured value parameterizes the prior covariance directly:
    // Σ_{m,0} = sigma_sq · I.
    prior = sample_prior_means(spec, truth, std::sqrt(sigma_sq), result.prior_seed);
  }

  const GmmMapEmSystem system(spec, std::move(prior), data);
  result.trajectory = run_trajectory(system, config.init_means_point(), config.stop);
  result.converged = result.trajectory.stop_reason == StopReason::StepNormBelowTol;
  result.iterations = result.trajectory.steps();
  result.converged_point = result.trajectory.terminal();
  result.terminal_log_post = result.trajectory.log_post.back();
  if (!result.converged)
    result.warnings.push_back("did not reach step_norm_tol within max_iters");
  if (system.starved_update_count() > 0)
    result.warnings.push_back("flat-prior component kept its previous mean on " +
                              std::to_string(system.starved_update_count()) +
                              " starved updates");

  // Active descent monitor; a violation is recorded, not fatal.
  for (std::size_t k = 0; k + 1 < result.trajectory.log_post.size(); ++k) {
    const double lp = result.trajectory.log_post[k];
    if (result.trajectory.log_post[k + 1] < lp - 1e-9 * (1.0 + std::abs(lp))) {
      result.warnings.push_back("descent invariant violated at step " + std::to_string(k));
      break;
    }
  }

  attach_reference(result.trajectory, system, result.converged_point);
  RateTarget target = RateTarget::iterate_norm();
  if (config.rate_kind == RateTargetKind::ComponentNorm)
    target = RateTarget::component_norm((config.rate_component - 1) * config.dim, config.dim);
  else if (config.rate_kind == RateTargetKind::LyapunovValue)
    target = RateTarget::lyapunov_value();
  try {
    result.rate =
        estimate_rate(result.trajectory, result.converged_point, target, config.tail_fraction);
  } catch (const InsufficientData&) {
    result.rate = std::nullopt;
    result.warnings.push_back("too few usable steps for a rate estimate");
  }

  result.distance_to_truth =
      matched_mean_distance(config.m_components, config.dim, result.converged_point, truth);
  double labeled = 0.0;
  for (std::size_t m = 0; m < config.m_components; ++m)
    labeled += distance(result.converged_point.block(m * config.dim, config.dim),
                        truth.block(m * config.dim, config.dim));
  result.distance_to_truth_labeled = labeled / static_cast<double>(config.m_components);
  return result;
}

ExperimentResult run_scenario(const ExperimentConfig& config) {
  config.validate();

  struct Arm {
    std::size_t index;
    bool flat;
  };
  std::vector<Arm> arms;
  for (std::size_t s = 0; s < config.prior_sigmas.size(); ++s) arms.push_back({s, false});
  if (config.include_flat) arms.push_back({0, true});

  ExperimentResult result;
  result.config = config;
  result.overrides = config.overridden_fields();
  result.arms.resize(arms.size());

  const std::size_t total_cells = arms.size() * config.trials;
  std::vector<TrialResult> cells(total_cells);

  // Trials are embarrassingly parallel; each cell derives its own seeds, so
  // results are identical no matter how the loop is scheduled. A failed
  // trial is recorded in its slot, never fatal for the batch.
  const int workers = workers_for(total_cells, 1);
#pragma omp parallel for schedule(dynamic) num_threads(workers) if (workers > 1)
  for (long long cell = 0; cell < static_cast<long long>(total_cells); ++cell) {
    const std::size_t a = static_cast<std::size_t>(cell) / config.trials;
    const std::size_t t = static_cast<std::size_t>(cell) % config.trials;
    TrialResult& slot = cells[static_cast<std::size_t>(cell)];
    try {
      slot = run_single_trial(config, arms[a].index, arms[a].flat, t);
    } catch (const Error& e) {
      slot.trial = t;
      if (!arms[a].flat) slot.prior_sigma = config.prior_sigmas[arms[a].index];
      slot.converged = false;
      slot.warnings.push_back(std::string("trial failed: ") + e.what());
    }
  }

  for (std::size_t a = 0; a < arms.size(); ++a) {
    ArmSummary& summary = result.arms[a];
    summary.prior_sigma =
        arms[a].flat ? std::nullopt : std::optional<double>(config.prior_sigmas[arms[a].index]);
    std::vector<double> rates;
    std::vector<double> distances;
    std::vector<double> labeled;
    for (std::size_t t = 0; t < config.trials; ++t) {
      TrialResult& tr = cells[a * config.trials + t];
      if (tr.converged) ++summary.converged_trials;
      if (tr.rate) rates.push_back(tr.rate->window_estimate);
      if (!tr.converged_point.empty()) {  // failed trials carry no point
        distances.push_back(tr.distance_to_truth);
        labeled.push_back(tr.distance_to_truth_labeled);
      }
      summary.trials.push_back(std::move(tr));
    }
    summary.rate_median = median_of(rates);
    if (!rates.empty())
      summary.rate_mean =
          std::accumulate(rates.begin(), rates.end(), 0.0) / static_cast<double>(rates.size());
    if (!distances.empty()) {
      summary.mean_distance_to_truth =
          std::accumulate(distances.begin(), distances.end(), 0.0) /
          static_cast<double>(distances.size());
      summary.median_distance_to_truth = *median_of(distances);
      summary.mean_distance_to_truth_labeled =
          std::accumulate(labeled.begin(), labeled.end(), 0.0) /
          static_cast<double>(labeled.size());
    }
  }
  return result;
}

ExperimentResult run_figure1(const ExperimentConfig& config) { return run_scenario(config); }

std::string arm_label(const std::optional<double>& prior_sigma) {
  if (!prior_sigma) return "flat";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", *prior_sigma);
  return buf;
}

void write_experiment_outputs(const ExperimentResult& result,
                              const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "trajectories");

  write_text_atomic(out_dir / "result.json", experiment_result_json(result));

  std::string rates = "prior_sigma,trial,mu1_window,iterations\n";
  char buf[64];
  for (const ArmSummary& arm : result.arms) {
    const std::string label = arm_label(arm.prior_sigma);
    for (const TrialResult& tr : arm.trials) {
      rates += label;
      rates += ',' + std::to_string(tr.trial) + ',';
      if (tr.rate) {
        std::snprintf(buf, sizeof buf, "%.17g", tr.rate->window_estimate);
        rates += buf;
      }
      rates += ',' + std::to_string(tr.iterations) + '\n';
    }
  }
  write_text_atomic(out_dir / "rates.csv", rates);

  for (const ArmSummary& arm : result.arms) {
    const std::string label = arm_label(arm.prior_sigma);
    for (const TrialResult& tr : arm.trials) {
      std::ostringstream os;
      write_trajectory_csv(tr.trajectory, os);
      const std::string name = (arm.prior_sigma ? "\xcf\x83" + label : label) + "_t" +
                               std::to_string(tr.trial) + ".csv";
      write_text_atomic(out_dir / "trajectories" / name, os.str());
    }
  }
}

}  // namespace lyapem
