#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace rgd {

/// Worker cap from RGDL_THREADS; 0 or unset means reference (single-threaded) mode.
inline std::size_t worker_count() {
  const char* env = std::getenv("RGDL_THREADS");
  if (!env || !*env) return 0;
  try {
    return static_cast<std::size_t>(std::stoul(env));
  } catch (...) {
    return 0;
  }
}

/// Runs fn(shard, begin, end) over fixed-size shards of [0, n). The partition never depends
/// on the worker count, so callers that reduce per-shard results in shard order get the same
/// bits in reference and threaded mode.
template <class Fn>
void for_each_shard(std::size_t n, std::size_t shard_size, Fn&& fn) {
  shard_size = std::max<std::size_t>(shard_size, 1);
  const std::size_t shards = (n + shard_size - 1) / shard_size;
  const std::size_t workers = std::min(worker_count(), shards);
  auto run = [&](std::size_t s) { fn(s, s * shard_size, std::min(n, (s + 1) * shard_size)); };
  if (workers <= 1) {
    for (std::size_t s = 0; s < shards; ++s) run(s);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t s; (s = next.fetch_add(1)) < shards;) {
        try {
          run(s);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::size_t shard_count(std::size_t n, std::size_t shard_size) { return (n + shard_size - 1) / shard_size; }

}  // namespace rgd
