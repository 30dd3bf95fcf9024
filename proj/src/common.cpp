#include "bsde/common.hpp"

#include <atomic>
#include <cstdio>
#include <unistd.h>

namespace bsde {

namespace {
std::atomic<std::size_t> g_budget{0}; // 0 = use default
}

std::size_t mem_budget_default() {
    const long pages = sysconf(_SC_PHYS_PAGES);
    const long psize = sysconf(_SC_PAGE_SIZE);
    if (pages <= 0 || psize <= 0) return std::size_t(4) << 30;
    const std::size_t phys = static_cast<std::size_t>(pages) * static_cast<std::size_t>(psize);
    return phys / 5 * 4; // 80%
}

std::size_t mem_budget() {
    const std::size_t b = g_budget.load(std::memory_order_relaxed);
    return b ? b : mem_budget_default();
}

void set_mem_budget(std::size_t bytes) { g_budget.store(bytes, std::memory_order_relaxed); }

void check_budget(std::size_t bytes, const std::string& what) {
    const std::size_t budget = mem_budget();
    if (bytes <= budget) return;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%s needs %.2f GiB but the memory budget is %.2f GiB; "
                  "reduce the path count, lower the level, or raise --mem-budget",
                  what.c_str(), bytes / 1073741824.0, budget / 1073741824.0);
    throw BudgetError(buf, bytes, budget);
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace bsde
