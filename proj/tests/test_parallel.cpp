// Deterministic block-parallel helpers: fixed block geometry, full coverage,
// strict commit ordering, and bit-identical reductions for any thread count.
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "bsde/parallel.hpp"

using namespace bsde;

namespace {

struct ThreadGuard {
    int saved;
    ThreadGuard() : saved(par::threads()) {}
    ~ThreadGuard() { par::set_threads(saved); }
};

// Deliberately order-sensitive float reduction over blocks.
double ordered_sum(std::size_t m) {
    std::vector<double> partial(std::size_t(par::threads()), 0.0);
    double total = 0.0;
    par::ordered_blocks(
        m,
        [&](std::size_t slot, std::size_t, std::size_t b0, std::size_t b1) {
            double s = 0.0;
            for (std::size_t i = b0; i < b1; ++i) s += 1.0 / double(i + 1);
            partial[slot] = s;
        },
        [&](std::size_t slot, std::size_t) { total += partial[slot]; });
    return total;
}

} // namespace

TEST_SUITE("parallel") {

TEST_CASE("block geometry depends only on the path count") {
    ThreadGuard g;
    for (std::size_t m : {std::size_t(1), std::size_t(100), std::size_t(16384),
                          std::size_t(16385), std::size_t(1000000)}) {
        par::set_threads(1);
        std::size_t bs1 = par::block_size(m), bc1 = par::block_count(m);
        par::set_threads(7);
        CHECK(par::block_size(m) == bs1);
        CHECK(par::block_count(m) == bc1);
        CHECK(bs1 >= 1);
        CHECK(bc1 == (m + bs1 - 1) / bs1);
    }
}

TEST_CASE("for_blocks covers every index exactly once") {
    ThreadGuard g;
    par::set_threads(4);
    for (std::size_t m : {std::size_t(0), std::size_t(1), std::size_t(5),
                          std::size_t(3 * 16384 + 3)}) {
        std::vector<std::atomic<int>> hits(m);
        par::for_blocks(m, [&](std::size_t, std::size_t b0, std::size_t b1) {
            for (std::size_t i = b0; i < b1; ++i) hits[i].fetch_add(1);
        });
        for (std::size_t i = 0; i < m; ++i) CHECK(hits[i].load() == 1);
    }
}

TEST_CASE("commit runs strictly in block order") {
    ThreadGuard g;
    par::set_threads(8);
    const std::size_t m = 20 * 16384;
    std::vector<std::size_t> order;
    par::ordered_blocks(
        m, [](std::size_t, std::size_t, std::size_t, std::size_t) {},
        [&](std::size_t, std::size_t b) { order.push_back(b); });
    REQUIRE(order.size() == par::block_count(m));
    for (std::size_t b = 0; b < order.size(); ++b) CHECK(order[b] == b);
}

TEST_CASE("ordered reduction is bit-identical for any thread count") {
    ThreadGuard g;
    const std::size_t m = 5 * 16384 + 123;
    par::set_threads(1);
    const double want = ordered_sum(m);
    for (int t : {2, 3, 8}) {
        par::set_threads(t);
        CHECK(ordered_sum(m) == want);
    }
}

TEST_CASE("worker exceptions surface on the caller") {
    ThreadGuard g;
    par::set_threads(4);
    auto boom = [&](std::size_t, std::size_t b0, std::size_t) {
        if (b0 >= 16384) throw std::runtime_error("boom");
    };
    CHECK_THROWS_AS(par::for_blocks(4 * 16384, boom), std::runtime_error);
}

TEST_CASE("thread count validation") {
    ThreadGuard g;
    CHECK_THROWS_AS(par::set_threads(0), std::invalid_argument);
    CHECK_THROWS_AS(par::set_threads(-2), std::invalid_argument);
    par::set_threads(3);
    CHECK(par::threads() == 3);
}

} // TEST_SUITE
