#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sdfrec {

// Process-wide worker pool. Work is split into fixed-size chunks whose
// boundaries depend only on the range, never on the worker count, so any
// value written by a parallel loop is identical for 1..N threads.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    // Number of workers actually running loops (>= 1).
    int threads() const { return (int)workers_.size() + 1; }

    // Global cap; takes effect on next construction. Call before first use.
    static void set_threads(int n) {
        requested() = n < 1 ? 1 : n;
    }

    // Runs fn(begin, end) over [0, count) split into chunks of `grain`.
    // Chunk boundaries are a pure function of (count, grain).
    void for_chunks(long count, long grain, const std::function<void(long, long)>& fn) {
        if (count <= 0) return;
        if (grain < 1) grain = 1;
        long nchunks = (count + grain - 1) / grain;
        if (nchunks == 1 || workers_.empty()) {
            for (long c = 0; c < nchunks; ++c)
                fn(c * grain, std::min(count, (c + 1) * grain));
            return;
        }
        std::unique_lock<std::mutex> lock(mu_);
        job_count_ = count;
        job_grain_ = grain;
        next_chunk_.store(0, std::memory_order_relaxed);
        pending_ = nchunks;
        job_fn_ = &fn;
        ++epoch_;
        cv_.notify_all();
        lock.unlock();

        run_chunks(count, grain);  // caller participates

        lock.lock();
        done_cv_.wait(lock, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

private:
    ThreadPool() {
        int n = requested();
        if (n == 0) {
            unsigned hc = std::thread::hardware_concurrency();
            n = hc == 0 ? 1 : (int)hc;
        }
        for (int i = 0; i < n - 1; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }
    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            stop_ = true;
            cv_.notify_all();
        }
        for (auto& w : workers_) w.join();
    }

    static int& requested() {
        static int n = 0;  // 0 = auto
        return n;
    }

    void run_chunks(long count, long grain) {
        long nchunks = (count + grain - 1) / grain;
        const std::function<void(long, long)>* fn = job_fn_;
        for (;;) {
            long c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (c >= nchunks) break;
            (*fn)(c * grain, std::min(count, (c + 1) * grain));
            std::lock_guard<std::mutex> lock(mu_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    void worker_loop() {
        long seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lock(mu_);
            cv_.wait(lock, [&] { return stop_ || epoch_ != seen; });
            if (stop_) return;
            seen = epoch_;
            long count = job_count_, grain = job_grain_;
            lock.unlock();
            run_chunks(count, grain);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(long, long)>* job_fn_ = nullptr;
    std::atomic<long> next_chunk_{0};
    long job_count_ = 0, job_grain_ = 0, pending_ = 0, epoch_ = 0;
    bool stop_ = false;
};

// Parallel loop with deterministic chunking. Safe only when chunks write
// disjoint outputs.
inline void parallel_for(long count, long grain, const std::function<void(long, long)>& fn) {
    ThreadPool::instance().for_chunks(count, grain, fn);
}

}  // namespace sdfrec
