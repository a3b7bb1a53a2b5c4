// Copyright Contributors to the ColonSplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace colonsplat {

// Static-partition fork/join helper. Work item i is always processed by the
// same worker for a given (n, workers) pair, so per-worker partial results
// reduced in worker order are reproducible run to run.
class ThreadPool {
public:
    // workers == 0 selects the hardware concurrency.
    explicit ThreadPool(int workers = 0)
    {
        if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
        mWorkers = std::max(1, workers);
    }

    int workers() const { return mWorkers; }

    // fn(begin, end, worker) over a contiguous slice of [0, n).
    template <typename Fn>
    void parallel_for(std::int64_t n, Fn&& fn) const
    {
        if (n <= 0) return;
        const int w = static_cast<int>(std::min<std::int64_t>(mWorkers, n));
        if (w == 1) {
            fn(std::int64_t(0), n, 0);
            return;
        }
        const std::int64_t chunk = (n + w - 1) / w;
        std::vector<std::thread> threads;
        threads.reserve(w);
        std::vector<std::exception_ptr> errors(w);
        for (int k = 0; k < w; ++k) {
            const std::int64_t b = std::min<std::int64_t>(k * chunk, n);
            const std::int64_t e = std::min<std::int64_t>(b + chunk, n);
            threads.emplace_back([&, k, b, e] {
                try {
                    if (b < e) fn(b, e, k);
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
        for (auto& err : errors)
            if (err) std::rethrow_exception(err);
    }

private:
    int mWorkers = 1;
};

} // namespace colonsplat
