// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace kdsr {

/// Worker cap from KDSR_THREADS, defaulting to the machine's core count.
inline std::size_t worker_threads() {
  std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("KDSR_THREADS"); env != nullptr && *env != '\0') {
    try {
      const long v = std::stol(env);
      if (v >= 1) hw = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      // ignore unparsable values
    }
  }
  return hw;
}

/// Runs fn(i) for i in [0, n). Each index writes only its own slot, so the
/// caller's ordered reduction afterwards is independent of scheduling. The
/// first exception thrown by any task is rethrown.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  const std::size_t workers = std::min(worker_threads(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&]() {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace kdsr
