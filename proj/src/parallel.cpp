#include "bsde/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace bsde::par {

namespace {
std::atomic<int> g_threads{1};
}

void set_threads(int n) {
    if (n < 1) throw std::invalid_argument("thread count must be >= 1");
    g_threads.store(n, std::memory_order_relaxed);
}

int threads() { return g_threads.load(std::memory_order_relaxed); }

std::size_t block_size(std::size_t m) {
    // Fixed function of m alone.  Small jobs: one block; large jobs: 16k paths
    // per block keeps per-block partial buffers cache-friendly while bounding
    // the number of ordered commits.
    if (m <= 16384) return m == 0 ? 1 : m;
    return 16384;
}

std::size_t block_count(std::size_t m) {
    const std::size_t bs = block_size(m);
    return (m + bs - 1) / bs;
}

namespace {

// Shared driver: workers pull block indices from a counter; `body` is given
// (slot, block, begin, end).  Runs inline when only one worker is configured.
void run_workers(std::size_t m,
                 const std::function<void(std::size_t, std::size_t, std::size_t, std::size_t)>& body) {
    if (m == 0) return;
    const std::size_t bs = block_size(m);
    const std::size_t nb = (m + bs - 1) / bs;
    const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads())), nb);

    if (nw == 1) {
        for (std::size_t b = 0; b < nb; ++b)
            body(0, b, b * bs, std::min(m, (b + 1) * bs));
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr err;
    std::mutex err_mu;
    auto worker = [&](std::size_t slot) {
        for (;;) {
            const std::size_t b = next.fetch_add(1, std::memory_order_relaxed);
            if (b >= nb) return;
            try {
                body(slot, b, b * bs, std::min(m, (b + 1) * bs));
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(nw - 1);
    for (std::size_t w = 1; w < nw; ++w) pool.emplace_back(worker, w);
    worker(0);
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

} // namespace

void for_blocks(std::size_t m,
                const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    run_workers(m, [&](std::size_t, std::size_t b, std::size_t begin, std::size_t end) {
        fn(b, begin, end);
    });
}

void ordered_blocks(std::size_t m,
                    const std::function<void(std::size_t, std::size_t, std::size_t, std::size_t)>& compute,
                    const std::function<void(std::size_t, std::size_t)>& commit) {
    // Each worker computes a block into its slot's scratch, then waits until
    // all earlier blocks are committed before committing its own.  Commit
    // order is therefore 0, 1, 2, ... regardless of scheduling.  On error the
    // abort flag releases any waiters so the exception can propagate.
    std::mutex mu;
    std::condition_variable cv;
    std::size_t turn = 0;
    bool aborted = false;

    run_workers(m, [&](std::size_t slot, std::size_t b, std::size_t begin, std::size_t end) {
        try {
            compute(slot, b, begin, end);
        } catch (...) {
            {
                std::lock_guard<std::mutex> lk(mu);
                aborted = true;
            }
            cv.notify_all();
            throw;
        }
        std::unique_lock<std::mutex> lk(mu);
        cv.wait(lk, [&] { return aborted || turn == b; });
        if (aborted) return;
        try {
            commit(slot, b);
        } catch (...) {
            aborted = true;
            lk.unlock();
            cv.notify_all();
            throw;
        }
        ++turn;
        cv.notify_all();
    });
}

} // namespace bsde::par
