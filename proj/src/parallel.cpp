#include "atlasflow/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace atlasflow {
namespace {

int default_threads() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("ATLASFLOW_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1 && cap < n) n = cap;
    } catch (...) {
    }
  }
  return n < 1 ? 1 : n;
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> value{default_threads()};
  return value;
}

}  // namespace

int worker_threads() { return thread_setting().load(); }

void set_worker_threads(int n) { thread_setting().store(n < 1 ? 1 : n); }

}  // namespace atlasflow
