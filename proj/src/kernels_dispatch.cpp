// Runtime kernel selection.  Compiled without advanced ISA flags so the
// detection logic itself runs anywhere.

#include "bsde/common.hpp"
#include "bsde/kernels.hpp"

#include <atomic>

namespace bsde::kern {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

const Table* pick_auto() {
    if (avx2_table.name != nullptr && cpu_has_avx2()) return &avx2_table;
    return &scalar_table;
}

std::atomic<const Table*> g_active{nullptr};

} // namespace

const Table& active() {
    const Table* t = g_active.load(std::memory_order_acquire);
    if (!t) {
        t = pick_auto();
        g_active.store(t, std::memory_order_release);
    }
    return *t;
}

void select(const std::string& name) {
    if (name == "auto") {
        g_active.store(pick_auto(), std::memory_order_release);
    } else if (name == "scalar") {
        g_active.store(&scalar_table, std::memory_order_release);
    } else if (name == "avx2") {
        if (avx2_table.name == nullptr)
            throw ConfigError("avx2 kernels were not compiled into this binary");
        if (!cpu_has_avx2())
            throw ConfigError("this CPU does not support avx2+fma");
        g_active.store(&avx2_table, std::memory_order_release);
    } else {
        throw ConfigError("unknown kernel variant '" + name + "' (use auto|scalar|avx2)");
    }
}

std::string available() {
    std::string s = "scalar";
    if (avx2_table.name != nullptr && cpu_has_avx2()) s += ",avx2";
    return s;
}

} // namespace bsde::kern
