#include "lyapem/json_io.hpp"

#include <cmath>
#include <set>

#include "json.hpp"
#include "lyapem/errors.hpp"

namespace lyapem {

using nlohmann::json;

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
  if (cols == 0) throw ConfigError(path, "rows must be non-empty arrays");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw ConfigError(path + "[" + std::to_string(i) + "]", "inconsistent row width");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[i][c].is_number())
        throw ConfigError(path + "[" + std::to_string(i) + "]", "entries must be numbers");
      m(i, c) = j[i][c].get<double>();
    }
  }
  return m;
}

std::vector<std::vector<double>> vecvec_from_json(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array");
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array())
      throw ConfigError(path + "[" + std::to_string(i) + "]", "expected an array");
    out.push_back(j[i].get<std::vector<double>>());
  }
  return out;
}

json rate_estimate_to_json(const RateEstimate& rate) {
  json out;
  out["window_estimate"] = rate.window_estimate;
  out["window"] = {rate.window.first, rate.window.second};
  out["per_step"] = rate.per_step;
  out["step_index"] = rate.step_index;
  return out;
}

json trial_to_json(const TrialResult& trial) {
  json out;
  out["trial"] = trial.trial;
  out["dataset_seed"] = trial.dataset_seed;
  out["prior_seed"] = trial.prior_seed;
  out["converged"] = trial.converged;
  out["iterations"] = trial.iterations;
  out["converged_point"] = trial.converged_point.coords();
  out["terminal_log_post"] = trial.terminal_log_post;
  out["distance_to_truth"] = trial.distance_to_truth;
  out["distance_to_truth_labeled"] = trial.distance_to_truth_labeled;
  if (trial.rate)
    out["rate"] = rate_estimate_to_json(*trial.rate);
  else
    out["rate"] = nullptr;
  out["warnings"] = trial.warnings;
  return out;
}

json config_to_json(const ExperimentConfig& config) {
  json out;
  out["seed"] = config.seed;
  out["n"] = config.n;
  out["dim"] = config.dim;
  out["m_components"] = config.m_components;
  out["weights"] = config.weights;
  out["true_means"] = config.true_means;
  json covs = json::array();
  for (const Matrix& m : config.covariances) covs.push_back(matrix_to_json(m));
  out["covariances"] = std::move(covs);
  out["prior_sigmas"] = config.prior_sigmas;
  out["include_flat"] = config.include_flat;
  out["trials"] = config.trials;
  out["init_means"] = config.init_means;
  out["stop"] = {{"max_iters", config.stop.max_iters},
                 {"step_norm_tol", config.stop.step_norm_tol},
                 {"log_post_tol", config.stop.log_post_tol}};
  const char* kind = "component_norm";
  if (config.rate_kind == RateTargetKind::IterateNorm) kind = "iterate_norm";
  if (config.rate_kind == RateTargetKind::LyapunovValue) kind = "lyapunov_value";
  out["rate_target"] = {{"kind", kind}, {"component", config.rate_component}};
  out["tail_fraction"] = config.tail_fraction;
  return out;
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("<document>", "top level must be an object");

  static const std::set<std::string> known = {
      "seed",         "n",           "dim",        "m_components", "weights",
      "true_means",   "covariances", "prior_sigmas", "include_flat", "trials",
      "init_means",   "stop",        "rate_target", "tail_fraction"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError(key, "unknown config field");

  ExperimentConfig config;
  try {
    if (j.contains("seed")) config.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("n")) config.n = j["n"].get<std::size_t>();
    if (j.contains("dim")) config.dim = j["dim"].get<std::size_t>();
    if (j.contains("m_components")) config.m_components = j["m_components"].get<std::size_t>();
    if (j.contains("weights")) config.weights = j["weights"].get<std::vector<double>>();
    if (j.contains("true_means"))
      config.true_means = vecvec_from_json(j["true_means"], "true_means");
    if (j.contains("covariances")) {
      config.covariances.clear();
      const json& covs = j["covariances"];
      if (!covs.is_array()) throw ConfigError("covariances", "expected an array");
      for (std::size_t m = 0; m < covs.size(); ++m)
        config.covariances.push_back(
            matrix_from_json(covs[m], "covariances[" + std::to_string(m) + "]"));
    }
    if (j.contains("prior_sigmas"))
      config.prior_sigmas = j["prior_sigmas"].get<std::vector<double>>();
    if (j.contains("include_flat")) config.include_flat = j["include_flat"].get<bool>();
    if (j.contains("trials")) config.trials = j["trials"].get<std::size_t>();
    if (j.contains("init_means"))
      config.init_means = vecvec_from_json(j["init_means"], "init_means");
    if (j.contains("stop")) {
      const json& s = j["stop"];
      if (!s.is_object()) throw ConfigError("stop", "expected an object");
      for (const auto& [key, value] : s.items())
        if (key != "max_iters" && key != "step_norm_tol" && key != "log_post_tol")
          throw ConfigError("stop." + key, "unknown config field");
      if (s.contains("max_iters")) config.stop.max_iters = s["max_iters"].get<std::size_t>();
      if (s.contains("step_norm_tol"))
        config.stop.step_norm_tol = s["step_norm_tol"].get<double>();
      if (s.contains("log_post_tol"))
        config.stop.log_post_tol = s["log_post_tol"].get<double>();
    }
    if (j.contains("rate_target")) {
      const json& rt = j["rate_target"];
      if (!rt.is_object()) throw ConfigError("rate_target", "expected an object");
      for (const auto& [key, value] : rt.items())
        if (key != "kind" && key != "component")
          throw ConfigError("rate_target." + key, "unknown config field");
      if (rt.contains("kind")) {
        const std::string kind = rt["kind"].get<std::string>();
        if (kind == "component_norm")
          config.rate_kind = RateTargetKind::ComponentNorm;
        else if (kind == "iterate_norm")
          config.rate_kind = RateTargetKind::IterateNorm;
        else if (kind == "lyapunov_value")
          config.rate_kind = RateTargetKind::LyapunovValue;
        else
          throw ConfigError("rate_target.kind",
                            "must be component_norm, iterate_norm, or lyapunov_value");
      }
      if (rt.contains("component"))
        config.rate_component = rt["component"].get<std::size_t>();
    }
    if (j.contains("tail_fraction")) config.tail_fraction = j["tail_fraction"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError("<document>", std::string("type error: ") + e.what());
  }
  config.validate();
  return config;
}

std::string config_to_json_text(const ExperimentConfig& config) {
  return config_to_json(config).dump(2) + "\n";
}

std::string experiment_result_json(const ExperimentResult& result) {
  json out;
  out["metadata"]["config"] = config_to_json(result.config);
  out["metadata"]["overrides"] = result.overrides;
  out["metadata"]["theta_map_rule"] =
      "terminal iterate of each trial at the configured step_norm_tol";
  out["metadata"]["rate_window"] =
      "geometric mean over the final tail_fraction of usable steps";

  json arms = json::array();
  for (const ArmSummary& arm : result.arms) {
    json a;
    if (arm.prior_sigma)
      a["prior_sigma"] = *arm.prior_sigma;
    else
      a["prior_sigma"] = nullptr;
    a["flat"] = !arm.prior_sigma.has_value();
    a["converged_trials"] = arm.converged_trials;
    if (arm.rate_median) a["rate_median"] = *arm.rate_median; else a["rate_median"] = nullptr;
    if (arm.rate_mean) a["rate_mean"] = *arm.rate_mean; else a["rate_mean"] = nullptr;
    a["mean_distance_to_truth"] = arm.mean_distance_to_truth;
    a["median_distance_to_truth"] = arm.median_distance_to_truth;
    a["mean_distance_to_truth_labeled"] = arm.mean_distance_to_truth_labeled;
    json trials = json::array();
    for (const TrialResult& tr : arm.trials) trials.push_back(trial_to_json(tr));
    a["trials"] = std::move(trials);
    arms.push_back(std::move(a));
  }
  out["arms"] = std::move(arms);
  return out.dump(2) + "\n";
}

std::string stability_report_json(const StabilityReport& report) {
  json out;
  out["verdict"] = to_string(report.verdict);
  if (report.rho_hat) out["rho_hat"] = *report.rho_hat; else out["rho_hat"] = nullptr;
  if (report.mu_hat) out["mu_hat"] = *report.mu_hat; else out["mu_hat"] = nullptr;
  out["fixed_point_residual"] = report.fixed_point_residual;
  out["caveat"] = report.caveat;
  out["unchecked_assumptions"] = report.unchecked_assumptions;
  json evidence = json::array();
  for (const RadiusEvidence& ev : report.evidence) {
    json e;
    e["radius"] = ev.radius;
    e["samples"] = ev.samples;
    e["max_excursion"] = ev.max_excursion;
    e["worst_terminal"] = ev.worst_terminal;
    e["worst_tail_ratio"] = ev.worst_tail_ratio;
    e["stable_ok"] = ev.stable_ok;
    e["asymptotic_ok"] = ev.asymptotic_ok;
    e["exponential_ok"] = ev.exponential_ok;
    e["sample_max_excursion"] = ev.sample_max_excursion;
    evidence.push_back(std::move(e));
  }
  out["evidence"] = std::move(evidence);
  return out.dump(2) + "\n";
}

std::string condition_results_json(std::span<const ConditionCheckResult> results) {
  json out = json::array();
  for (const ConditionCheckResult& r : results) {
    json c;
    c["condition"] = to_string(r.condition.kind);
    if (r.condition.kind == ConditionKind::KlDominatesGap ||
        r.condition.kind == ConditionKind::PosteriorConcavity)
      c["mu"] = r.condition.mu;
    if (r.condition.kind == ConditionKind::PowerLawBounds) c["power"] = r.condition.power;
    c["samples_tested"] = r.samples_tested;
    c["passed"] = r.passed;
    json violations = json::array();
    for (const Violation& v : r.violations) {
      violations.push_back({{"sample_index", v.sample_index},
                            {"sample", v.sample.coords()},
                            {"margin", v.margin}});
    }
    c["violations"] = std::move(violations);
    if (r.power_law) {
      c["power_law_fit"] = {{"a1", r.power_law->a1},
                            {"a2", r.power_law->a2},
                            {"a3", r.power_law->a3},
                            {"power", r.power_law->power},
                            {"mu_implied", r.power_law->mu_implied}};
    }
    out.push_back(std::move(c));
  }
  return out.dump(2) + "\n";
}

}  // namespace lyapem
