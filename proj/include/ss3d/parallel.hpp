#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "ss3d/core.hpp"

namespace ss3d {

// Persistent worker pool with static range partitioning. Work items write to
// disjoint output ranges, so results do not depend on the thread count.
// Reductions use fixed-size chunks combined in index order for the same
// reason (see chunked_sum).
class ThreadPool {
public:
    explicit ThreadPool(int threads) {
        threads = std::max(1, threads);
        for (int i = 0; i < threads - 1; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int thread_count() const { return static_cast<int>(workers_.size()) + 1; }

    // Runs fn(lo, hi) over a static split of [0, n). Blocks until done.
    void run(i64 n, i64 grain, const std::function<void(i64, i64)>& fn) {
        if (n <= 0) return;
        int parts = thread_count();
        if (grain > 0) parts = static_cast<int>(std::min<i64>(parts, (n + grain - 1) / grain));
        parts = std::max(1, parts);
        if (parts == 1) {
            fn(0, n);
            return;
        }
        std::atomic<int> remaining(parts - 1);
        {
            std::lock_guard<std::mutex> lock(mu_);
            task_ = &fn;
            task_n_ = n;
            task_parts_ = parts;
            next_part_ = 1;  // part 0 runs on the calling thread
            remaining_ = &remaining;
            ++generation_;
        }
        cv_.notify_all();
        run_part(fn, 0, n, parts, 0);
        while (remaining.load(std::memory_order_acquire) > 0) std::this_thread::yield();
        std::lock_guard<std::mutex> lock(mu_);
        task_ = nullptr;
    }

private:
    static void run_part(const std::function<void(i64, i64)>& fn, i64 /*unused*/, i64 n,
                         int parts, int part) {
        i64 lo = n * part / parts;
        i64 hi = n * (part + 1) / parts;
        if (lo < hi) fn(lo, hi);
    }

    void worker_loop() {
        u64 seen = 0;
        while (true) {
            const std::function<void(i64, i64)>* task = nullptr;
            i64 n = 0;
            int parts = 0, part = -1;
            std::atomic<int>* remaining = nullptr;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_.wait(lock, [&] { return stop_ || (task_ && generation_ != seen && next_part_ < task_parts_); });
                if (stop_) return;
                seen = generation_;
                task = task_;
                n = task_n_;
                parts = task_parts_;
                part = next_part_++;
                remaining = remaining_;
            }
            while (part < parts) {
                run_part(*task, 0, n, parts, part);
                remaining->fetch_sub(1, std::memory_order_release);
                std::lock_guard<std::mutex> lock(mu_);
                if (!task_ || generation_ != seen || next_part_ >= task_parts_) break;
                part = next_part_++;
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_;
    bool stop_ = false;
    const std::function<void(i64, i64)>* task_ = nullptr;
    i64 task_n_ = 0;
    int task_parts_ = 0;
    int next_part_ = 0;
    std::atomic<int>* remaining_ = nullptr;
    u64 generation_ = 0;
};

namespace runtime {

inline int& thread_setting() {
    static int n = static_cast<int>(std::thread::hardware_concurrency());
    return n;
}

inline void set_threads(int n) { thread_setting() = std::max(1, n); }

inline ThreadPool& pool() {
    static ThreadPool* p = nullptr;
    static int built_for = -1;
    if (!p || built_for != thread_setting()) {
        delete p;
        p = new ThreadPool(thread_setting());
        built_for = thread_setting();
    }
    return *p;
}

}  // namespace runtime

inline void parallel_for(i64 n, i64 grain, const std::function<void(i64, i64)>& fn) {
    runtime::pool().run(n, grain, fn);
}

// Deterministic sum: fixed 8192-element chunks, partials combined in chunk
// order. Bit-identical for any thread count.
inline Real chunked_sum(std::span<const Real> v) {
    constexpr i64 kChunk = 8192;
    i64 n = static_cast<i64>(v.size());
    if (n == 0) return 0.0;
    i64 nchunks = (n + kChunk - 1) / kChunk;
    if (nchunks == 1) {
        Real s = 0;
        for (Real x : v) s += x;
        return s;
    }
    std::vector<Real> partial(nchunks);
    parallel_for(nchunks, 1, [&](i64 lo, i64 hi) {
        for (i64 c = lo; c < hi; ++c) {
            Real s = 0;
            i64 end = std::min<i64>(n, (c + 1) * kChunk);
            for (i64 i = c * kChunk; i < end; ++i) s += v[i];
            partial[c] = s;
        }
    });
    Real total = 0;
    for (Real p : partial) total += p;
    return total;
}

}  // namespace ss3d
