#pragma once

#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace affinefence {

// Process-wide worker cap for the OpenMP kernels. Defaults to 1 so runs are
// serial unless the caller (CLI --jobs, benchmark) opts in. Every parallel
// kernel partitions work so that results are bit-identical for any job count.
inline std::atomic<int>& max_jobs_slot() {
  static std::atomic<int> jobs{1};
  return jobs;
}

inline void set_max_jobs(int jobs) { max_jobs_slot().store(std::max(1, jobs)); }

inline int max_jobs() { return max_jobs_slot().load(); }

inline int hardware_jobs() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace affinefence
