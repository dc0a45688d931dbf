#pragma once

#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace modeplan {

// Runs jobs 0..n-1 on a worker pool and hands each result to `consume` in
// strict index order, so the aggregate is identical for any thread count.
// Jobs must be independent (each derives its own rng stream from its index).
template <typename Result>
void parallel_ordered(int n, int threads,
                      const std::function<Result(int)>& job,
                      const std::function<void(int, Result&&)>& consume) {
  if (n < 0 || threads < 1)
    throw std::runtime_error("parallel_ordered: bad job or thread count");
  if (threads == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) consume(i, job(i));
    return;
  }
  std::mutex mu;
  std::condition_variable cv;
  std::map<int, Result> ready;
  int next_job = 0;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      int idx;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (failure || next_job >= n) return;
        idx = next_job++;
      }
      try {
        Result r = job(idx);
        std::lock_guard<std::mutex> lock(mu);
        ready.emplace(idx, std::move(r));
        cv.notify_all();
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        cv.notify_all();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  int workers = std::min(threads, n);
  pool.reserve(size_t(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);

  // The calling thread is the single consumer; results queue up briefly when
  // job durations are uneven but are drained as soon as the next index lands.
  for (int want = 0; want < n; ++want) {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return failure || ready.count(want) > 0; });
    if (failure) break;
    Result r = std::move(ready.at(want));
    ready.erase(want);
    lock.unlock();
    try {
      consume(want, std::move(r));
    } catch (...) {
      std::lock_guard<std::mutex> guard(mu);
      if (!failure) failure = std::current_exception();
      break;
    }
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace modeplan
