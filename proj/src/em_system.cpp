#include "lyapem/em_system.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "lyapem/errors.hpp"

namespace lyapem {

const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::MaxIters: return "max_iters";
    case StopReason::StepNormBelowTol: return "step_norm_below_tol";
    case StopReason::LogPostDeltaBelowTol: return "log_post_delta_below_tol";
  }
  return "unknown";
}

void StopRule::validate() const {
  if (max_iters == 0) throw ConfigError("stop.max_iters", "must be at least 1");
  if (step_norm_tol < 0.0) throw ConfigError("stop.step_norm_tol", "must be nonnegative");
  if (log_post_tol < 0.0) throw ConfigError("stop.log_post_tol", "must be nonnegative");
}

Trajectory run_trajectory(const EmSystem& system, const ParamPoint& start,
                          const StopRule& rule) {
  rule.validate();
  if (start.size() != system.state_dim()) {
    throw Error("start point length " + std::to_string(start.size()) +
                " does not match system state dimension " +
                std::to_string(system.state_dim()));
  }

  Trajectory traj;
  traj.iterates.push_back(start);
  traj.log_post.push_back(-system.neg_log_posterior(start));
  traj.stop_reason = StopReason::MaxIters;

  for (std::size_t k = 0; k < rule.max_iters; ++k) {
    const ParamPoint& cur = traj.iterates.back();
    ParamPoint next;
    try {
      next = system.step(cur);
    } catch (const NonFiniteState& e) {
      throw NonFiniteState(std::string(e.what()) + " (iteration " +
                               std::to_string(k) + ")",
                           k);
    }

    const double step_norm = distance(next, cur);
    const double lp_next = -system.neg_log_posterior(next);
    const double lp_cur = traj.log_post.back();

    traj.delta_v.push_back(lp_cur - lp_next);
    traj.step_kl.push_back(system.latent_kl(next, cur));
    traj.iterates.push_back(std::move(next));
    traj.log_post.push_back(lp_next);

    if (step_norm <= rule.step_norm_tol) {
      traj.stop_reason = StopReason::StepNormBelowTol;
      break;
    }
    if (rule.log_post_tol > 0.0 && std::abs(lp_next - lp_cur) <= rule.log_post_tol) {
      traj.stop_reason = StopReason::LogPostDeltaBelowTol;
      break;
    }
  }
  return traj;
}

bool is_fixed_point(const EmSystem& system, const ParamPoint& point, double tol) {
  if (tol < 0.0) throw Error("fixed-point tolerance must be nonnegative");
  return distance(system.step(point), point) <= tol;
}

void attach_reference(Trajectory& traj, const EmSystem& system,
                      const ParamPoint& theta_star) {
  const double ref_log_post = -system.neg_log_posterior(theta_star);
  traj.v_vals.resize(traj.log_post.size());
  for (std::size_t k = 0; k < traj.log_post.size(); ++k) {
    traj.v_vals[k] = ref_log_post - traj.log_post[k];
  }
}

namespace {

void append_g17(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
  const std::size_t dim = traj.iterates.empty() ? 0 : traj.iterates.front().size();
  std::string line = "k";
  for (std::size_t j = 0; j < dim; ++j) line += ",theta_" + std::to_string(j);
  line += ",log_post,delta_v,step_kl\n";
  os << line;

  for (std::size_t k = 0; k < traj.iterates.size(); ++k) {
    line = std::to_string(k);
    for (std::size_t j = 0; j < dim; ++j) {
      line += ',';
      append_g17(line, traj.iterates[k][j]);
    }
    line += ',';
    append_g17(line, traj.log_post[k]);
    line += ',';
    if (k < traj.delta_v.size()) append_g17(line, traj.delta_v[k]);
    line += ',';
    if (k < traj.step_kl.size()) append_g17(line, traj.step_kl[k]);
    line += '\n';
    os << line;
  }
}

Trajectory read_trajectory_csv(std::istream& is) {
  Trajectory traj;
  std::string line;
  if (!std::getline(is, line)) throw Error("trajectory csv: missing header");

  std::size_t dim = 0;
  {
    std::stringstream header(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(header, cell, ',')) cells.push_back(cell);
    if (cells.size() < 4 || cells.front() != "k")
      throw Error("trajectory csv: unexpected header '" + line + "'");
    dim = cells.size() - 4;
  }

  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (cells.size() != dim + 4)
      throw Error("trajectory csv: row has " + std::to_string(cells.size()) +
                  " cells, expected " + std::to_string(dim + 4));

    std::vector<double> coords(dim);
    for (std::size_t j = 0; j < dim; ++j) coords[j] = std::stod(cells[1 + j]);
    traj.iterates.emplace_back(std::move(coords));
    traj.log_post.push_back(std::stod(cells[1 + dim]));
    if (!cells[2 + dim].empty()) traj.delta_v.push_back(std::stod(cells[2 + dim]));
    if (!cells[3 + dim].empty()) traj.step_kl.push_back(std::stod(cells[3 + dim]));
  }
  if (traj.iterates.empty()) throw Error("trajectory csv: no data rows");
  return traj;
}

}  // namespace lyapem
