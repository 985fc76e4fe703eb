#pragma once

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mlsim {

/// Fixed set of persistent worker threads that execute one task per worker and
/// then meet at a barrier. run() returns only after every worker has finished,
/// and rethrows the first worker exception.
class WorkerPool {
 public:
  explicit WorkerPool(unsigned num_workers);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  unsigned size() const { return num_workers_; }

  /// Runs task(worker_index) on every worker. Worker 0 runs on the caller.
  void run(const std::function<void(unsigned)>& task);

 private:
  void thread_main(unsigned index);

  unsigned num_workers_;
  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(unsigned)>* task_ = nullptr;
  std::uint64_t generation_ = 0;
  unsigned pending_ = 0;
  bool stopping_ = false;
  std::exception_ptr error_;
};

}  // namespace mlsim
