#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace clonebench {

// Shared worker pool. Work items must write disjoint outputs; the pool
// guarantees nothing about which thread runs which item. Workers spin
// briefly before parking so back-to-back small jobs dispatch in
// microseconds, not scheduler wakeups.
//
// CLONEBENCH_THREADS pins the worker count; CLONEBENCH_DETERMINISTIC=1
// forces a single thread, which also makes reduction groupings independent
// of the machine.
class WorkerPool {
public:
  static WorkerPool& instance() {
    static WorkerPool pool(default_thread_count());
    return pool;
  }

  static int default_thread_count() {
    if (const char* det = std::getenv("CLONEBENCH_DETERMINISTIC"); det && std::string(det) == "1")
      return 1;
    if (const char* t = std::getenv("CLONEBENCH_THREADS")) {
      int n = std::atoi(t);
      if (n >= 1) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
  }

  int thread_count() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs fn(0..n-1), blocking until all items finish. Calls from inside a
  // worker run inline: nested parallelism degenerates to serial execution.
  void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
    if (n == 0) return;
    if (in_worker() || workers_.empty() || n == 1) {
      for (size_t i = 0; i < n; ++i) fn(i);
      return;
    }
    auto job = std::make_shared<Job>(fn, n);
    {
      std::lock_guard<std::mutex> lk(mu_);
      current_ = job;
      generation_.fetch_add(1, std::memory_order_release);
    }
    cv_start_.notify_all();
    drain(*job);
    // completion: spin a moment, then park
    for (int spin = 0; spin < 16384; ++spin) {
      if (job->remaining.load(std::memory_order_acquire) == 0) break;
      cpu_relax();
    }
    if (job->remaining.load(std::memory_order_acquire) != 0) {
      std::unique_lock<std::mutex> lk(mu_);
      cv_done_.wait(lk, [&] { return job->remaining.load(std::memory_order_acquire) == 0; });
    }
    std::lock_guard<std::mutex> lk(mu_);
    if (current_ == job) current_.reset();
  }

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_.store(true, std::memory_order_release);
      generation_.fetch_add(1, std::memory_order_release);
    }
    cv_start_.notify_all();
    for (auto& w : workers_) w.join();
  }

private:
  struct Job {
    Job(const std::function<void(size_t)>& f, size_t n) : fn(f), size(n), remaining(n) {}
    const std::function<void(size_t)>& fn;
    const size_t size;
    std::atomic<size_t> next{0};
    std::atomic<size_t> remaining;
  };

  explicit WorkerPool(int threads) {
    for (int i = 1; i < threads; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  static void cpu_relax() {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_ia32_pause();
#else
    std::this_thread::yield();
#endif
  }

  static bool& in_worker() {
    thread_local bool flag = false;
    return flag;
  }

  // Safe on a finished job: grabs past the end are no-ops, so a stale
  // worker can never run a new job's items through an old pointer.
  void drain(Job& job) {
    for (;;) {
      size_t i = job.next.fetch_add(1, std::memory_order_relaxed);
      if (i >= job.size) return;
      job.fn(i);
      if (job.remaining.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> lk(mu_);
        cv_done_.notify_all();
      }
    }
  }

  void worker_loop() {
    in_worker() = true;
    uint64_t seen = generation_.load(std::memory_order_acquire);
    for (;;) {
      bool woke = false;
      for (int spin = 0; spin < 65536; ++spin) {
        if (stop_.load(std::memory_order_acquire)) return;
        if (generation_.load(std::memory_order_acquire) != seen) {
          woke = true;
          break;
        }
        cpu_relax();
      }
      std::shared_ptr<Job> job;
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (!woke)
          cv_start_.wait(lk, [&] {
            return stop_.load(std::memory_order_relaxed) ||
                   generation_.load(std::memory_order_relaxed) != seen;
          });
        if (stop_.load(std::memory_order_relaxed)) return;
        seen = generation_.load(std::memory_order_relaxed);
        job = current_;
      }
      if (job) drain(*job);
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_start_, cv_done_;
  std::shared_ptr<Job> current_;
  std::atomic<uint64_t> generation_{0};
  std::atomic<bool> stop_{false};
};

inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  WorkerPool::instance().parallel_for(n, fn);
}

// Splits [0, n) into contiguous chunks, one task per chunk.
inline void parallel_chunks(size_t n, size_t min_chunk,
                            const std::function<void(size_t, size_t)>& fn) {
  if (n == 0) return;
  const size_t threads = static_cast<size_t>(WorkerPool::instance().thread_count());
  size_t chunks = std::min(threads * 2, (n + min_chunk - 1) / min_chunk);
  if (chunks <= 1) {
    fn(0, n);
    return;
  }
  const size_t per = (n + chunks - 1) / chunks;
  parallel_for(chunks, [&](size_t c) {
    const size_t lo = c * per;
    const size_t hi = std::min(n, lo + per);
    if (lo < hi) fn(lo, hi);
  });
}

} // namespace clonebench
