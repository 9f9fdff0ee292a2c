#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace viewret {

inline std::atomic<std::size_t>& thread_setting()
{
    static std::atomic<std::size_t> value{1};
    return value;
}

inline void set_thread_count(std::size_t n) { thread_setting() = std::max<std::size_t>(1, n); }

inline std::size_t thread_count() { return thread_setting(); }

/// Calls fn(i) for i in [0, n). Each index must write only its own outputs;
/// any cross-index reduction is the caller's job and must happen afterwards in
/// index order, which keeps results independent of the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    fn(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace viewret
