#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace minielm {

// Runs fn(i) for i in [0, count). Each index is computed exactly once and any
// result written by fn lands at its own slot, so output order (and therefore
// any downstream reduction order) is independent of the job count.
template <typename Fn>
void parallel_for(size_t count, int jobs, Fn&& fn) {
  if (count == 0) return;
  const size_t workers = std::min<size_t>(std::max(jobs, 1), count);
  if (workers <= 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  threads.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (size_t i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace minielm
