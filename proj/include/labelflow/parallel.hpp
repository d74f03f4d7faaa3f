#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace labelflow {

/// Splits [0, n) into contiguous blocks, one per worker. `body(begin, end)`
/// must only write to slots owned by its block, which keeps results
/// independent of the thread count. The first exception (by block order) is
/// rethrown on the calling thread.
template <class Body>
void parallel_for_blocks(std::size_t n, int threads, Body&& body) {
    const std::size_t workers =
        std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
    if (workers <= 1) {
        if (n > 0) body(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) {
            const std::size_t b = w * chunk;
            const std::size_t e = std::min(n, b + chunk);
            if (b >= e) continue;
            pool.emplace_back([&body, &errors, w, b, e] {
                try {
                    body(b, e);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        try {
            body(std::size_t{0}, std::min(n, chunk));
        } catch (...) {
            errors[0] = std::current_exception();
        }
    }
    for (auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
}

}  // namespace labelflow
