#include "lyapem/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lyapem/errors.hpp"
#include "lyapem/parallel.hpp"

namespace lyapem {

void LatticeSearchConfig::validate(std::size_t dim) const {
  if (!(initial_radius > 0.0)) throw ConfigError("lattice.initial_radius", "must be positive");
  if (!(shrink_factor > 0.0) || !(shrink_factor < 1.0))
    throw ConfigError("lattice.shrink_factor", "must lie in (0,1)");
  if (points_per_axis < 3 || points_per_axis % 2 == 0)
    throw ConfigError("lattice.points_per_axis", "must be an odd integer >= 3");
  if (rounds == 0) throw ConfigError("lattice.rounds", "must be positive");

  double evals = static_cast<double>(rounds);
  for (std::size_t j = 0; j < dim; ++j) evals *= static_cast<double>(points_per_axis);
  if (evals > static_cast<double>(budget))
    throw BudgetExceeded("lattice search needs " + std::to_string(evals) +
                         " evaluations, budget is " + std::to_string(budget));
}

ParamPoint numeric_m_step(const EmSystem& system, const ParamPoint& theta_hat,
                          const LatticeSearchConfig& config) {
  const std::size_t dim = system.state_dim();
  config.validate(dim);

  std::vector<double> center = theta_hat.coords();
  double radius = config.initial_radius;
  const std::size_t ppa = config.points_per_axis;

  std::size_t lattice_size = 1;
  for (std::size_t j = 0; j < dim; ++j) lattice_size *= ppa;

  std::vector<double> values(lattice_size);
  std::vector<double> coords(dim);

  for (std::size_t round = 0; round < config.rounds; ++round) {
    const double spacing = 2.0 * radius / static_cast<double>(ppa - 1);

    // Pure map over lattice points; the argmax scan below runs in index
    // order so ties always resolve to the lexicographically smallest index.
    const int workers = workers_for(lattice_size, 256);
#pragma omp parallel num_threads(workers) if (workers > 1)
    {
      std::vector<double> local(dim);
#pragma omp for schedule(static)
      for (long long idx = 0; idx < static_cast<long long>(lattice_size); ++idx) {
        std::size_t rem = static_cast<std::size_t>(idx);
        for (std::size_t j = dim; j-- > 0;) {
          const std::size_t step_idx = rem % ppa;
          rem /= ppa;
          local[j] = center[j] - radius + spacing * static_cast<double>(step_idx);
        }
        values[static_cast<std::size_t>(idx)] =
            system.q_value(ParamPoint(local), theta_hat);
      }
    }

    std::size_t best_idx = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t idx = 0; idx < lattice_size; ++idx) {
      if (values[idx] > best) {
        best = values[idx];
        best_idx = idx;
      }
    }

    std::size_t rem = best_idx;
    for (std::size_t j = dim; j-- > 0;) {
      const std::size_t step_idx = rem % ppa;
      rem /= ppa;
      coords[j] = center[j] - radius + spacing * static_cast<double>(step_idx);
    }
    center = coords;
    radius *= config.shrink_factor;
  }
  return ParamPoint(std::move(center));
}

double kl_direct(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error("kl_direct: length mismatch");
  constexpr double tol = 1e-12;
  double sp = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw Error("kl_direct: negative entry");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > tol || std::abs(sq - 1.0) > tol)
    throw Error("kl_direct: inputs must be row-stochastic within 1e-12");

  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

std::vector<double> fd_gradient(const std::function<double(const ParamPoint&)>& field,
                                const ParamPoint& theta, double h) {
  if (!(h > 0.0)) throw Error("fd_gradient: h must be positive");
  std::vector<double> grad(theta.size());
  std::vector<double> coords = theta.coords();
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double hj = h * (1.0 + std::abs(coords[j]));
    const double orig = coords[j];
    coords[j] = orig + hj;
    const double up = field(ParamPoint(coords));
    coords[j] = orig - hj;
    const double down = field(ParamPoint(coords));
    coords[j] = orig;
    grad[j] = (up - down) / (2.0 * hj);
  }
  return grad;
}

}  // namespace lyapem
