// Command-line front end: data generation, single MAP-EM runs, stability
// classification, condition checks, and the reference-experiment
// reproduction. Exit codes: 0 success, 1 configuration/usage error, 2
// runtime numerical failure.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lyapem/em_system.hpp"
#include "lyapem/errors.hpp"
#include "lyapem/experiment.hpp"
#include "lyapem/gmm.hpp"
#include "lyapem/io.hpp"
#include "lyapem/json_io.hpp"
#include "lyapem/lyapunov.hpp"
#include "lyapem/oracle.hpp"
#include "lyapem/rng.hpp"

namespace {

using namespace lyapem;
namespace fs = std::filesystem;

constexpr std::uint64_t kProbeStream = 0xC1A55;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma;
  std::optional<std::size_t> trials;
  bool verify = false;
  bool quiet = false;
};

ExperimentConfig load_config(const CommonOpts& opts) {
  ExperimentConfig config;
  if (!opts.config_path.empty()) {
    if (!fs::exists(opts.config_path))
      throw ConfigError("config", "file not found: " + opts.config_path);
    config = config_from_json_text(read_text(opts.config_path));
  }
  if (opts.seed) config.seed = *opts.seed;  // command line overrides the file
  if (opts.trials) config.trials = *opts.trials;
  config.validate();
  return config;
}

// Resolves --sigma against the config: a positive value selects (or appends)
// a gaussian arm, 0 selects the flat baseline, absent means the first arm.
struct ArmChoice {
  std::size_t index = 0;
  bool flat = false;
  std::optional<double> sigma;
};

ArmChoice resolve_arm(ExperimentConfig& config, const std::optional<double>& sigma_flag) {
  ArmChoice arm;
  if (!sigma_flag) {
    if (config.prior_sigmas.empty()) {
      arm.flat = true;
    } else {
      arm.sigma = config.prior_sigmas.front();
    }
    return arm;
  }
  if (*sigma_flag < 0.0) throw ConfigError("sigma", "must be nonnegative (0 selects flat)");
  if (*sigma_flag == 0.0) {
    arm.flat = true;
    return arm;
  }
  for (std::size_t i = 0; i < config.prior_sigmas.size(); ++i) {
    if (config.prior_sigmas[i] == *sigma_flag) {
      arm.index = i;
      arm.sigma = *sigma_flag;
      return arm;
    }
  }
  arm.index = config.prior_sigmas.size();
  arm.sigma = *sigma_flag;
  config.prior_sigmas.push_back(*sigma_flag);
  return arm;
}

void say(const CommonOpts& opts, const std::string& line) {
  if (!opts.quiet) std::cout << line << "\n";
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

int cmd_gen_data(const CommonOpts& opts) {
  ExperimentConfig config = load_config(opts);
  const GmmSpec spec = config.make_spec();
  const std::uint64_t seed = child_seed(config.seed, 0xD474, 0);
  const Dataset data = sample_dataset(spec, config.true_means_point(), config.n, seed);
  std::ostringstream os;
  write_dataset_csv(data, os);
  const fs::path out = fs::path(opts.out_dir) / "data.csv";
  write_text_atomic(out, os.str());
  say(opts, "wrote " + out.string() + " (n=" + std::to_string(data.n) +
                ", d=" + std::to_string(data.dim) + ")");
  return 0;
}

TrialResult run_requested_trial(ExperimentConfig& config, const CommonOpts& opts,
                                ArmChoice* arm_out = nullptr) {
  const ArmChoice arm = resolve_arm(config, opts.sigma);
  if (arm_out) *arm_out = arm;
  return run_single_trial(config, arm.index, arm.flat, 0);
}

int verify_trial(const ExperimentConfig& config, const ArmChoice& arm,
                 const TrialResult& trial, const CommonOpts& opts, const char* file_tag) {
  const GmmSpec spec = config.make_spec();
  const Dataset data =
      sample_dataset(spec, config.true_means_point(), config.n, trial.dataset_seed);
  PriorSpec prior = PriorSpec::flat();
  if (!arm.flat)
    prior = sample_prior_means(spec, config.true_means_point(), std::sqrt(*arm.sigma),
                               trial.prior_seed);
  const GmmMapEmSystem system(spec, prior, data);

  bool ok = true;
  std::ostringstream report;
  report << "{\n  \"checks\": [\n";

  // Closed-form update against the lattice maximizer at the initial point.
  double max_dev = 0.0;
  {
    const ParamPoint closed = system.step(config.init_means_point());
    const ParamPoint numeric =
        numeric_m_step(system, config.init_means_point(), LatticeSearchConfig{});
    for (std::size_t j = 0; j < closed.size(); ++j)
      max_dev = std::max(max_dev, std::abs(closed[j] - numeric[j]));
    ok = ok && max_dev <= 1e-5;
    report << "    {\"name\": \"m_step_vs_lattice\", \"max_dev\": " << max_dev
           << ", \"tol\": 1e-5, \"passed\": " << (max_dev <= 1e-5 ? "true" : "false")
           << "},\n";
  }

  // Stationarity of the log posterior at the converged point.
  double grad_norm = 0.0;
  if (trial.converged) {
    const auto grad = fd_gradient(
        [&](const ParamPoint& p) { return -system.neg_log_posterior(p); },
        trial.converged_point, 1e-5);
    grad_norm = norm(grad);
    ok = ok && grad_norm <= 1e-4;
  }
  report << "    {\"name\": \"fd_stationarity\", \"grad_norm\": " << grad_norm
         << ", \"tol\": 1e-4, \"passed\": " << (grad_norm <= 1e-4 ? "true" : "false")
         << "},\n";

  // Latent KL against direct per-row summation.
  const ParamPoint first_step = system.step(config.init_means_point());
  const double lib_kl = system.latent_kl(first_step, config.init_means_point());
  const Responsibilities rp = e_step(spec, data, config.init_means_point());
  const Responsibilities rq = e_step(spec, data, first_step);
  double direct = 0.0;
  for (std::size_t i = 0; i < data.n; ++i)
    for (std::size_t m = 0; m < spec.components(); ++m)
      if (rp(i, m) > 0.0) direct += rp(i, m) * (rp.log_at(i, m) - rq.log_at(i, m));
  const double kl_dev = std::abs(lib_kl - std::max(direct, 0.0));
  ok = ok && kl_dev <= 1e-10;
  report << "    {\"name\": \"latent_kl_direct_sum\", \"dev\": " << kl_dev
         << ", \"tol\": 1e-10, \"passed\": " << (kl_dev <= 1e-10 ? "true" : "false")
         << "}\n  ],\n  \"passed\": " << (ok ? "true" : "false") << "\n}\n";

  if (!opts.out_dir.empty()) {
    write_text_atomic(fs::path(opts.out_dir) / (std::string(file_tag) + "verify.json"),
                      report.str());
  }
  say(opts, std::string("verify: ") + (ok ? "all oracle checks passed" : "ORACLE MISMATCH"));
  if (!ok) {
    std::cerr << "oracle cross-checks failed\n" << report.str();
    return 2;
  }
  return 0;
}

int cmd_run_em(const CommonOpts& opts) {
  ExperimentConfig config = load_config(opts);
  ArmChoice arm;
  const TrialResult trial = run_requested_trial(config, opts, &arm);

  if (!opts.out_dir.empty()) {
    std::ostringstream os;
    write_trajectory_csv(trial.trajectory, os);
    write_text_atomic(fs::path(opts.out_dir) / "trajectory.csv", os.str());

    char lp[40];
    std::snprintf(lp, sizeof lp, "%.17g", trial.terminal_log_post);
    std::ostringstream run;
    run << "{\n  \"arm\": \"" << arm_label(trial.prior_sigma) << "\",\n"
        << "  \"converged\": " << (trial.converged ? "true" : "false") << ",\n"
        << "  \"iterations\": " << trial.iterations << ",\n"
        << "  \"stop_reason\": \"" << to_string(trial.trajectory.stop_reason) << "\",\n"
        << "  \"terminal_log_post\": " << lp << ",\n  \"rate_window\": "
        << (trial.rate ? format_double(trial.rate->window_estimate) : "null")
        << ",\n  \"warnings\": [";
    for (std::size_t w = 0; w < trial.warnings.size(); ++w)
      run << (w ? ", " : "") << '"' << trial.warnings[w] << '"';
    run << "]\n}\n";
    write_text_atomic(fs::path(opts.out_dir) / "run.json", run.str());
  }

  say(opts, "arm=" + arm_label(trial.prior_sigma) + " iterations=" +
                std::to_string(trial.iterations) + " stop=" +
                to_string(trial.trajectory.stop_reason) + " log_post=" +
                format_double(trial.terminal_log_post) +
                (trial.rate ? " rate=" + format_double(trial.rate->window_estimate) : ""));

  if (opts.verify) return verify_trial(config, arm, trial, opts, "");
  return 0;
}

int cmd_classify(const CommonOpts& opts) {
  ExperimentConfig config = load_config(opts);
  ArmChoice arm;
  const TrialResult trial = run_requested_trial(config, opts, &arm);
  if (!trial.converged)
    throw Error("run did not converge to step_norm_tol; no fixed point to classify");

  const GmmSpec spec = config.make_spec();
  const Dataset data =
      sample_dataset(spec, config.true_means_point(), config.n, trial.dataset_seed);
  PriorSpec prior = PriorSpec::flat();
  if (!arm.flat)
    prior = sample_prior_means(spec, config.true_means_point(), std::sqrt(*arm.sigma),
                               trial.prior_seed);
  const GmmMapEmSystem system(spec, prior, data);

  ProbeConfig probe;
  probe.seed = child_seed(config.seed, kProbeStream, arm.flat ? 1000 : arm.index);
  const StabilityReport report = classify_stability(system, trial.converged_point, probe);

  if (!opts.out_dir.empty())
    write_text_atomic(fs::path(opts.out_dir) / "stability_report.json",
                      stability_report_json(report));

  std::string line = std::string("verdict=") + to_string(report.verdict);
  if (report.rho_hat) line += " rho_hat=" + format_double(*report.rho_hat);
  if (report.mu_hat) line += " mu_hat=" + format_double(*report.mu_hat);
  line += " (" + report.caveat + ")";
  say(opts, line);
  return 0;
}

int cmd_check_conditions(const CommonOpts& opts) {
  ExperimentConfig config = load_config(opts);
  ArmChoice arm;
  const TrialResult trial = run_requested_trial(config, opts, &arm);
  if (!trial.converged)
    throw Error("run did not converge to step_norm_tol; no reference point for checks");

  const GmmSpec spec = config.make_spec();
  const Dataset data =
      sample_dataset(spec, config.true_means_point(), config.n, trial.dataset_seed);
  PriorSpec prior = PriorSpec::flat();
  if (!arm.flat)
    prior = sample_prior_means(spec, config.true_means_point(), std::sqrt(*arm.sigma),
                               trial.prior_seed);
  const GmmMapEmSystem system(spec, prior, data);
  const ParamPoint star = trial.converged_point;

  // Region around the reference covering the trajectory tail.
  const std::size_t tail_start = trial.trajectory.iterates.size() / 2;
  double radius = 0.0;
  for (std::size_t k = tail_start; k < trial.trajectory.iterates.size(); ++k)
    radius = std::max(radius, distance(trial.trajectory.iterates[k], star));
  radius = std::max(radius * 1.2, 1e-4);

  const std::uint64_t seed = child_seed(config.seed, kProbeStream + 1, arm.index);
  std::vector<ConditionCheckResult> results;
  results.push_back(check_condition(system, star, {ConditionKind::Descent, 0, 0},
                                    {star, std::max(radius, 0.5)}, 200, seed));
  results.push_back(check_condition(system, star,
                                    {ConditionKind::Identifiability, 0, 0},
                                    {star, std::max(radius, 0.5)}, 100, seed + 1));
  for (const double mu : {0.9, 0.99, 0.999}) {
    results.push_back(check_condition(system, star, {ConditionKind::KlDominatesGap, mu, 0},
                                      {star, radius}, 200, seed + 2));
    results.push_back(check_condition(system, star, {ConditionKind::PosteriorConcavity, mu, 0},
                                      {star, radius}, 200, seed + 3));
  }
  results.push_back(check_condition(system, star, {ConditionKind::PowerLawBounds, 0, 2.0},
                                    {star, radius}, 200, seed + 4));

  if (!opts.out_dir.empty())
    write_text_atomic(fs::path(opts.out_dir) / "checks.json",
                      condition_results_json(results));

  for (const ConditionCheckResult& r : results) {
    std::string line = std::string(r.passed ? "pass " : "FAIL ") + to_string(r.condition.kind);
    if (r.condition.kind == ConditionKind::KlDominatesGap ||
        r.condition.kind == ConditionKind::PosteriorConcavity)
      line += " mu=" + format_double(r.condition.mu);
    line += " violations=" + std::to_string(r.violations.size()) + "/" +
            std::to_string(r.samples_tested);
    if (r.power_law)
      line += " mu_implied=" + format_double(r.power_law->mu_implied);
    say(opts, line);
  }
  return 0;
}

int cmd_reproduce_fig1(const CommonOpts& opts) {
  ExperimentConfig config = load_config(opts);
  const ExperimentResult result = run_figure1(config);
  if (opts.out_dir.empty()) throw ConfigError("out", "an output directory is required");
  write_experiment_outputs(result, opts.out_dir);

  std::string line = "rates (median):";
  for (const ArmSummary& arm : result.arms) {
    line += " " + arm_label(arm.prior_sigma) + "=";
    line += arm.rate_median ? format_double(*arm.rate_median) : "n/a";
  }
  say(opts, line);

  if (opts.verify) {
    // Oracle cross-checks on trial 0 of each gaussian arm.
    int rc = 0;
    for (std::size_t a = 0; a < config.prior_sigmas.size() && rc == 0; ++a) {
      ArmChoice arm;
      arm.index = a;
      arm.sigma = config.prior_sigmas[a];
      const TrialResult trial = run_single_trial(config, a, false, 0);
      rc = verify_trial(config, arm, trial, opts,
                        ("arm" + std::to_string(a) + "_").c_str());
    }
    if (rc != 0) return rc;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MAP-EM as a discrete dynamical system: runs, stability "
               "classification, rate diagnostics"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto add_common = [&](CLI::App* cmd, bool with_sigma, bool with_trials, bool with_verify) {
    cmd->add_option("--config", opts.config_path, "experiment config (JSON)");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "root seed override");
    if (with_sigma)
      cmd->add_option("--sigma", opts.sigma, "prior arm to use (0 selects the flat prior)");
    if (with_trials) cmd->add_option("--trials", opts.trials, "trial count override");
    if (with_verify) cmd->add_flag("--verify", opts.verify, "run oracle cross-checks");
    cmd->add_flag("--quiet", opts.quiet, "suppress the summary line");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "sample a dataset and write CSV");
  add_common(gen, false, false, false);
  CLI::App* run = app.add_subcommand("run-em", "run MAP-EM once and write the trajectory");
  add_common(run, true, false, true);
  CLI::App* classify =
      app.add_subcommand("classify", "classify stability around the converged point");
  add_common(classify, true, false, false);
  CLI::App* checks =
      app.add_subcommand("check-conditions", "evaluate convergence conditions by sampling");
  add_common(checks, true, false, false);
  CLI::App* fig1 =
      app.add_subcommand("reproduce-fig1", "run the reference experiment and write outputs");
  add_common(fig1, false, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opts);
    if (run->parsed()) return cmd_run_em(opts);
    if (classify->parsed()) return cmd_classify(opts);
    if (checks->parsed()) return cmd_check_conditions(opts);
    if (fig1->parsed()) return cmd_reproduce_fig1(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
