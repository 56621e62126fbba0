#include "omt/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace omt::parallel {
namespace {

class Pool {
 public:
  explicit Pool(std::size_t threads) : threads_(std::max<std::size_t>(1, threads)) {
    for (std::size_t i = 1; i < threads_; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto& t : workers_) t.join();
  }

  std::size_t threads() const { return threads_; }

  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    const std::size_t chunks = std::min(n, threads_ * 4);
    {
      std::lock_guard lock(mu_);
      body_ = &body;
      n_ = n;
      chunks_ = chunks;
      next_.store(0);
      pending_ = chunks;
      ++generation_;
    }
    wake_.notify_all();
    drain();
    std::unique_lock lock(mu_);
    done_.wait(lock, [this] { return pending_ == 0; });
    body_ = nullptr;
  }

 private:
  void drain() {
    for (;;) {
      const std::size_t c = next_.fetch_add(1);
      if (c >= chunks_) return;
      const std::size_t begin = c * n_ / chunks_;
      const std::size_t end = (c + 1) * n_ / chunks_;
      if (begin < end) (*body_)(begin, end);
      std::lock_guard lock(mu_);
      if (--pending_ == 0) done_.notify_all();
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      drain();
    }
  }

  std::size_t threads_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t, std::size_t)>* body_ = nullptr;
  std::size_t n_ = 0;
  std::size_t chunks_ = 0;
  std::atomic<std::size_t> next_{0};
  std::size_t pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

std::mutex g_config_mu;
std::mutex g_dispatch_mu;
std::size_t g_requested = 0;
std::unique_ptr<Pool> g_pool;

std::size_t resolve(std::size_t n) {
  if (n != 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace

void set_thread_count(std::size_t n) {
  std::lock_guard dispatch(g_dispatch_mu);
  std::lock_guard lock(g_config_mu);
  g_requested = n;
  g_pool.reset();
}

std::size_t thread_count() {
  std::lock_guard lock(g_config_mu);
  return resolve(g_requested);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  // A busy pool (another session, or a nested call) means this caller runs
  // serially. Output per index is the same either way.
  std::unique_lock dispatch(g_dispatch_mu, std::try_to_lock);
  if (!dispatch.owns_lock()) {
    body(0, n);
    return;
  }
  Pool* pool = nullptr;
  {
    std::lock_guard lock(g_config_mu);
    const std::size_t want = resolve(g_requested);
    if (!g_pool || g_pool->threads() != want) g_pool = std::make_unique<Pool>(want);
    pool = g_pool.get();
  }
  if (pool->threads() == 1 || n == 1) {
    body(0, n);
    return;
  }
  pool->run(n, body);
}

}  // namespace omt::parallel
