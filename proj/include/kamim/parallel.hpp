#pragma once

#include <cstdint>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace kamim {

/// Caps the worker count used inside kernels. Non-positive values restore
/// the runtime default.
inline void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) {
    omp_set_num_threads(threads);
  } else {
    omp_set_num_threads(omp_get_num_procs());
  }
#else
  (void)threads;
#endif
}

inline int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

/// Applies KAMIM_THREADS when set; returns the resulting worker count.
inline int threads_from_env() {
  if (const char* env = std::getenv("KAMIM_THREADS")) {
    try {
      set_num_threads(std::stoi(env));
    } catch (...) {
    }
  }
  return num_threads();
}

/// Runs body(i) for i in [begin, end). Each index is handled by exactly one
/// worker, so per-index results never depend on the worker count.
template <typename Body>
void parallel_for(std::int64_t begin, std::int64_t end, Body&& body,
                  std::int64_t min_parallel = 64) {
#ifdef _OPENMP
  if (end - begin >= min_parallel && omp_get_max_threads() > 1 &&
      !omp_in_parallel()) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = begin; i < end; ++i) body(i);
    return;
  }
#endif
  (void)min_parallel;
  for (std::int64_t i = begin; i < end; ++i) body(i);
}

/// Keeps large tensor buffers on the heap between steps instead of returning
/// them to the OS (glibc only). Call once at process start.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace kamim
