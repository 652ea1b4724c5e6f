#pragma once

// Index-parallel loops whose results do not depend on the thread count: work item
// k always writes slot k, and callers combine slots in index order.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace nmvm {

/// Worker count from NMVM_THREADS, else the hardware concurrency (at least 1).
inline unsigned thread_count() {
    if (const char* env = std::getenv("NMVM_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<unsigned>(std::min(v, 1024L));
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(k) for k in [0, count). The exception from the lowest failing index is rethrown.
template <class F>
void parallel_for(std::size_t count, F&& fn) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), count));
    if (workers <= 1) {
        for (std::size_t k = 0; k < count; ++k) fn(k);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::size_t err_index = count;
    std::exception_ptr err;
    auto work = [&] {
        for (std::size_t k = next++; k < count; k = next++) {
            try {
                fn(k);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (k < err_index) {
                    err_index = k;
                    err = std::current_exception();
                }
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned t = 1; t < workers; ++t) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace nmvm
