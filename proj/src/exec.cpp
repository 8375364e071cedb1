#include "bc/exec.hpp"

#ifdef BCWAVE_OPENMP
#include <omp.h>
#endif

namespace bc {

namespace {
ExecPolicy g_policy = ExecPolicy::Parallel;
}

ExecPolicy default_policy() { return g_policy; }
void set_default_policy(ExecPolicy p) { g_policy = p; }

void set_jobs(int jobs) {
  if (jobs <= 1) {
    g_policy = ExecPolicy::Serial;
#ifdef BCWAVE_OPENMP
    omp_set_num_threads(1);
#endif
    return;
  }
  g_policy = ExecPolicy::Parallel;
#ifdef BCWAVE_OPENMP
  omp_set_num_threads(jobs);
#endif
}

int max_threads() {
#ifdef BCWAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace bc
