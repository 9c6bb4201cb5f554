#include "normlab/exec.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

namespace normlab::exec {

namespace {
std::atomic<int> g_threads{1};
}

void set_threads(int n) { g_threads.store(n < 1 ? 1 : n); }
int threads() { return g_threads.load(); }
bool parallel() { return threads() > 1; }

int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

int env_thread_cap() {
  const char* v = std::getenv("NORMLAB_THREADS");
  if (v == nullptr) return 0;
  int n = std::atoi(v);
  return n > 0 ? n : 0;
}

int default_parallel_threads() {
  int n = hardware_threads();
  int cap = env_thread_cap();
  if (cap > 0) n = std::min(n, cap);
  return n;
}

}  // namespace normlab::exec
