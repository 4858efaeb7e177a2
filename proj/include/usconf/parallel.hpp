#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace usconf {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Items are
/// independent; each writes only its own output slot, so results do not
/// depend on the worker count. The first exception (lowest index) is rethrown.
template <class Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn &&fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t err_index = count;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (i < err_index) {
            err_index = i;
            err = std::current_exception();
          }
        }
      }
    });
  }
  for (auto &t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

} // namespace usconf
