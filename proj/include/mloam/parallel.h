#pragma once

// OpenMP plumbing for the parallel kernels. Every kernel in this project
// ships in two variants: an OpenMP one and a plain serial reference used by
// tests and the benchmark. Parallel loops only ever write to disjoint,
// index-addressed slots; reductions happen serially afterwards, so results
// are bit-identical regardless of thread count.

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mloam {

enum class Kernel { Serial, OpenMP };

inline int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace mloam
