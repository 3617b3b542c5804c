#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace atlasflow {

// Worker count honoured by every parallel kernel. Defaults to the OpenMP
// runtime maximum, capped by ATLASFLOW_THREADS when set.
int worker_threads();
void set_worker_threads(int n);

// Runs body(i) for i in [0, n) across the worker pool. The first exception
// thrown by any iteration is rethrown on the calling thread after the loop.
template <class Body>
void parallel_for(std::ptrdiff_t n, Body&& body, bool dynamic = false) {
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto guarded = [&](std::ptrdiff_t i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
#ifdef _OPENMP
  const int threads = worker_threads();
  if (threads > 1 && n > 1 && !omp_in_parallel()) {
    if (dynamic) {
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
      for (std::ptrdiff_t i = 0; i < n; ++i) guarded(i);
    } else {
#pragma omp parallel for schedule(static) num_threads(threads)
      for (std::ptrdiff_t i = 0; i < n; ++i) guarded(i);
    }
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) guarded(i);
  }
#else
  (void)dynamic;
  for (std::ptrdiff_t i = 0; i < n; ++i) guarded(i);
#endif
  if (failure) std::rethrow_exception(failure);
}

}  // namespace atlasflow
