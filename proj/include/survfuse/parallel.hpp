#ifndef SURVFUSE_PARALLEL_HPP
#define SURVFUSE_PARALLEL_HPP

#ifdef _OPENMP
#include <omp.h>
#define SURVFUSE_PARFOR _Pragma("omp parallel for schedule(static)")
#else
#define SURVFUSE_PARFOR
#endif

#include <cstddef>
#include <exception>

namespace survfuse {

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

// Exceptions must not leave an OpenMP region. Work items run through this
// keep the error of the lowest index, so the rethrown error does not depend
// on thread timing.
class IndexedError {
 public:
  template <class Fn>
  void run(std::size_t index, Fn&& fn) noexcept {
    try {
      fn();
    } catch (...) {
      store(index, std::current_exception());
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void store(std::size_t index, std::exception_ptr e) {
#ifdef _OPENMP
#pragma omp critical(survfuse_indexed_error)
#endif
    if (!error_ || index < index_) {
      error_ = e;
      index_ = index;
    }
  }
  std::exception_ptr error_;
  std::size_t index_ = 0;
};

}  // namespace survfuse

#endif
