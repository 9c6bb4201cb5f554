#ifndef NORMLAB_EXEC_HPP_
#define NORMLAB_EXEC_HPP_

namespace normlab::exec {

// Process-wide kernel execution policy. threads() == 1 routes every kernel
// through the serial reference implementation; larger values enable the
// OpenMP variants. The parallel kernels split work only across independent
// output elements (each element keeps its serial reduction order), so
// results are bit-identical either way.

void set_threads(int n);
int threads();
bool parallel();

int hardware_threads();
/// Value of NORMLAB_THREADS, or 0 when unset/invalid.
int env_thread_cap();
/// hardware_threads() capped by NORMLAB_THREADS when that is set.
int default_parallel_threads();

}  // namespace normlab::exec

#endif  // NORMLAB_EXEC_HPP_
