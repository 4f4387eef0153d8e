// Benchmark comparing the serial reference kernels against the OpenMP
// paths on a synthetic mixture large enough to matter. The parallel paths
// are pure row maps with ordered reductions, so outputs must match the
// serial reference bit for bit; the bench asserts that while timing.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "lyapem/gmm.hpp"
#include "lyapem/parallel.hpp"
#include "lyapem/rng.hpp"

using namespace lyapem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename F>
double best_of(int reps, F&& body) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    body();
    best = std::min(best, seconds_since(t0));
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t n = 200000;
  std::size_t m = 8;
  if (argc > 1) n = static_cast<std::size_t>(std::strtoull(argv[1], nullptr, 10));
  if (argc > 2) m = static_cast<std::size_t>(std::strtoull(argv[2], nullptr, 10));
  const std::size_t d = 2;

  Rng rng(12345);
  std::vector<double> weights(m, 1.0 / static_cast<double>(m));
  double head = 0.0;
  for (std::size_t i = 0; i + 1 < m; ++i) head += weights[i];
  weights.back() = 1.0 - head;
  std::vector<Matrix> covs;
  for (std::size_t k = 0; k < m; ++k) {
    Matrix c = Matrix::identity(d);
    c(0, 0) = 0.5 + rng.uniform01();
    c(1, 1) = 0.5 + rng.uniform01();
    covs.push_back(c);
  }
  const GmmSpec spec(weights, covs);

  std::vector<double> mean_coords(m * d);
  for (std::size_t k = 0; k < m; ++k) {
    mean_coords[k * d] = 4.0 * static_cast<double>(k % 4);
    mean_coords[k * d + 1] = 4.0 * static_cast<double>(k / 4);
  }
  const ParamPoint truth(mean_coords);
  const Dataset data = sample_dataset(spec, truth, n, 777);
  const ParamPoint theta = truth;

  std::printf("n=%zu M=%zu d=%zu workers=%d\n", n, m, d, max_workers());

  Responsibilities serial(0, 0);
  Responsibilities parallel(0, 0);
  const double t_serial =
      best_of(3, [&] { serial = e_step_serial(spec, data, theta); });
  const double t_parallel = best_of(3, [&] { parallel = e_step(spec, data, theta); });

  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < data.n; ++i)
    for (std::size_t c = 0; c < m; ++c)
      if (serial(i, c) != parallel(i, c)) ++mismatches;

  std::printf("%-24s %10.4fs\n", "e_step serial", t_serial);
  std::printf("%-24s %10.4fs  speedup %.2fx  bit-mismatches %zu\n", "e_step parallel",
              t_parallel, t_serial / t_parallel, mismatches);

  const GmmMapEmSystem system(spec, PriorSpec::flat(), data);
  double lp = 0.0;
  const double t_logpost =
      best_of(3, [&] { lp = -system.neg_log_posterior(theta); });
  std::printf("%-24s %10.4fs  (log_post=%.6f)\n", "mixture log-posterior", t_logpost, lp);

  ParamPoint next = theta;
  const double t_step = best_of(3, [&] { next = system.step(theta); });
  std::printf("%-24s %10.4fs  (step norm %.3e)\n", "full EM step", t_step,
              distance(next, theta));

  return mismatches == 0 ? 0 : 1;
}
