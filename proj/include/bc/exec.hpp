// Execution policy for the hot loops: every parallel kernel has a serial
// twin with identical arithmetic, so results are bitwise equal either way.
#pragma once

#include <cstdint>
#include <utility>

namespace bc {

enum class ExecPolicy { Serial, Parallel };

// Process-wide default used when callers do not pass a policy explicitly.
ExecPolicy default_policy();
void set_default_policy(ExecPolicy p);

// Thread count request (OpenMP). jobs <= 1 selects the serial policy.
void set_jobs(int jobs);
int max_threads();

// Index loop over [0, n). Each iteration must write disjoint state.
template <class F>
void par_for(ExecPolicy pol, std::int64_t n, F&& body) {
  if (pol == ExecPolicy::Parallel) {
#ifdef BCWAVE_OPENMP
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
#endif
  }
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

template <class F>
void par_for(std::int64_t n, F&& body) {
  par_for(default_policy(), n, std::forward<F>(body));
}

}  // namespace bc
