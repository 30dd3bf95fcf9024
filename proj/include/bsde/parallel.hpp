#pragma once
// Deterministic block-parallel helpers.
//
// Every reduction over simulated paths is decomposed into fixed-size blocks
// whose boundaries depend only on the path count, never on the thread count.
// Workers claim blocks dynamically, but anything order-sensitive (summing
// partial Gram matrices, partition tallies, means) is committed strictly in
// block order.  Consequence: results are bit-identical for any --threads
// value, which the test suite asserts.

#include <cstddef>
#include <functional>

namespace bsde::par {

// Global worker count (1 = fully sequential).  Thread-safe to read.
void set_threads(int n);
int threads();

// Fixed block length for M paths: independent of thread count, bounded so
// per-block partial buffers stay small.  Exposed for tests.
std::size_t block_size(std::size_t m);
std::size_t block_count(std::size_t m);

// Runs fn(block_index, begin, end) over [0, m) split into block_size(m)
// chunks, possibly concurrently.  fn must only write to disjoint per-path or
// per-block state.  Exceptions are captured and rethrown on the caller.
void for_blocks(std::size_t m,
                const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

// Ordered reduction.  compute(slot, b, begin, end) runs concurrently; slot is
// the worker index in [0, threads()), so callers keep one scratch buffer per
// slot.  commit(slot, b) is invoked strictly in increasing block order (the
// worker that computed b performs the commit once block b-1 is committed),
// which makes floating-point accumulation order independent of threading.
void ordered_blocks(std::size_t m,
                    const std::function<void(std::size_t, std::size_t, std::size_t, std::size_t)>& compute,
                    const std::function<void(std::size_t, std::size_t)>& commit);

} // namespace bsde::par
