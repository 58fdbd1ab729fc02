#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace hiflow {

namespace detail {
inline int& thread_override() {
    static int value = 0;
    return value;
}
}  // namespace detail

/// Worker threads available to kernels. Defaults to 1; HIFLOW_THREADS raises the cap.
inline int max_threads() {
    if (detail::thread_override() > 0) return detail::thread_override();
    static const int from_env = [] {
        const char* env = std::getenv("HIFLOW_THREADS");
        if (env == nullptr) return 1;
        try {
            return std::max(1, std::stoi(env));
        } catch (...) {
            return 1;
        }
    }();
    return from_env;
}

inline void set_max_threads(int n) { detail::thread_override() = std::max(0, n); }

/// Runs fn(begin, end) over disjoint chunks of [0, n). Chunks write disjoint outputs,
/// so results do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 1) {
    const auto threads = static_cast<std::size_t>(max_threads());
    if (threads <= 1 || n <= min_chunk) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t workers = std::min(threads, (n + min_chunk - 1) / min_chunk);
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(std::size_t{0}, std::min(n, chunk));
    for (auto& t : pool) t.join();
}

}  // namespace hiflow
