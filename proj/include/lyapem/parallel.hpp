#pragma once

// OpenMP glue. Parallel loops in this project are pure maps into
// preallocated slots; every reduction happens afterwards in index order, so
// results are bit-identical for any thread count, including 1.

#include <cstddef>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lyapem {

// Worker ceiling: LYAPEM_THREADS caps the OpenMP default when set.
inline int max_workers() {
  static const int cached = [] {
#ifdef _OPENMP
    int n = omp_get_max_threads();
#else
    int n = 1;
#endif
    if (const char* env = std::getenv("LYAPEM_THREADS")) {
      const long cap = std::strtol(env, nullptr, 10);
      if (cap >= 1 && cap < n) n = static_cast<int>(cap);
    }
    return n < 1 ? 1 : n;
  }();
  return cached;
}

// Thread count for a loop of `items` independent units; keeps at least
// `min_items_per_thread` units per thread so small inputs stay serial.
inline int workers_for(std::size_t items, std::size_t min_items_per_thread = 64) {
  if (min_items_per_thread == 0) min_items_per_thread = 1;
  const std::size_t wanted = items / min_items_per_thread;
  const std::size_t cap = static_cast<std::size_t>(max_workers());
  const std::size_t n = wanted < 1 ? 1 : (wanted > cap ? cap : wanted);
  return static_cast<int>(n);
}

}  // namespace lyapem
