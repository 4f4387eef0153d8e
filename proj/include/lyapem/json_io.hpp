#pragma once

// JSON serialization for configs, reports, and experiment results. Field
// names are part of the external interface and stay fixed.

#include <span>
#include <string>

#include "lyapem/experiment.hpp"
#include "lyapem/lyapunov.hpp"

namespace lyapem {

// Experiment config; unknown keys are rejected and every validation error
// names the offending field path.
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& config);

std::string experiment_result_json(const ExperimentResult& result);

std::string stability_report_json(const StabilityReport& report);

std::string condition_results_json(std::span<const ConditionCheckResult> results);

}  // namespace lyapem
