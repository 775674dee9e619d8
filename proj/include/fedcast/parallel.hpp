#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedcast {

// Every hot kernel has two execution paths sharing one loop body: a serial
// reference and an OpenMP one. Work units write to disjoint slots and
// reductions run in index order afterwards, so both paths produce
// bit-identical results for any thread count.

enum class ExecMode { serial, openmp };

inline const char* exec_mode_name(ExecMode m) {
  return m == ExecMode::serial ? "serial" : "openmp";
}

void set_thread_count(int n);  // 0 = runtime default
int thread_count();

template <class F>
void parallel_for(std::size_t n, ExecMode mode, F&& body) {
#ifdef _OPENMP
  if (mode == ExecMode::openmp) {
    const int threads = thread_count();
    if (threads > 0) {
#pragma omp parallel for schedule(static) num_threads(threads)
      for (long long i = 0; i < static_cast<long long>(n); ++i) {
        body(static_cast<std::size_t>(i));
      }
    } else {
#pragma omp parallel for schedule(static)
      for (long long i = 0; i < static_cast<long long>(n); ++i) {
        body(static_cast<std::size_t>(i));
      }
    }
    return;
  }
#else
  (void)mode;
#endif
  for (std::size_t i = 0; i < n; ++i) {
    body(i);
  }
}

}  // namespace fedcast
