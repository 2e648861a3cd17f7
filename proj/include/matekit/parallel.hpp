#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

namespace matekit {

// requested > 0 wins; otherwise MATEKIT_THREADS; otherwise the core count.
int resolve_threads(std::optional<int> requested = std::nullopt);

// Seed for work item `index`, derived only from (seed, index) so results do
// not depend on which thread runs the item or in what order.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index);

// Runs f(i) for i in [0, n) on up to `threads` workers. Items are claimed in
// fixed stripes; the first exception thrown by any item is rethrown.
template <typename F>
void parallel_for(std::int64_t n, int threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (std::int64_t i = 0; i < n; ++i) f(i);
    return;
  }
  const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::int64_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace matekit
