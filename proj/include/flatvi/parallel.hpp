#ifndef FLATVI_PARALLEL_HPP_
#define FLATVI_PARALLEL_HPP_

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace flatvi {

/// Worker count: FLATVI_THREADS when set to a positive integer, otherwise
/// the hardware concurrency.
inline std::size_t thread_budget()
{
    if (const char *env = std::getenv("FLATVI_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (...) {
        }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) over contiguous chunks. Each index must write
/// only its own output slot; callers reduce afterwards in index order so the
/// result does not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn &&fn)
{
    const std::size_t workers = std::min(thread_budget(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto &t : pool) t.join();
    for (auto &e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace flatvi

#endif  // FLATVI_PARALLEL_HPP_
