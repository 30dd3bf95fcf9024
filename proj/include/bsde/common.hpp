#pragma once
// Shared small types: error hierarchy, memory budget, numeric helpers.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace bsde {

// All library errors derive from this so callers can catch one type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid user input: bad config keys, out-of-range parameters, ...
struct ConfigError : Error {
    using Error::Error;
};

// An allocation plan would exceed the configured memory budget.  Raised
// before any large allocation happens so the process never thrashes.
struct BudgetError : Error {
    std::size_t required_bytes = 0;
    std::size_t budget_bytes = 0;
    BudgetError(const std::string& msg, std::size_t required, std::size_t budget)
        : Error(msg), required_bytes(required), budget_bytes(budget) {}
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Memory budget shared by everything that allocates per-path storage.
// Default is set at startup to ~80% of physical RAM (see mem_budget_default).
std::size_t mem_budget();                 // current budget in bytes
void set_mem_budget(std::size_t bytes);   // 0 restores the default
std::size_t mem_budget_default();         // 80% of physical RAM
// Throws BudgetError with a remediation hint if `bytes` exceeds the budget.
void check_budget(std::size_t bytes, const std::string& what);

// 64-bit FNV-1a, used to fingerprint resolved experiment plans.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull);
std::string to_hex(std::uint64_t v);

} // namespace bsde
