#include <cstdlib>
#include <cstring>

#include "cpunet/kernels.hpp"

namespace cpunet::kernels {

#ifdef CPUNET_HAVE_AVX2
const KernelTable& avx2_kernels() noexcept;
#endif

const KernelTable* avx2_table() noexcept {
#ifdef CPUNET_HAVE_AVX2
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    if (supported) return &avx2_kernels();
#endif
    return nullptr;
}

namespace {

const KernelTable* select_default() noexcept {
    const char* forced = std::getenv("CPUNET_KERNELS");
    if (forced != nullptr && std::strcmp(forced, "scalar") == 0) return &scalar_table();
    if (const KernelTable* simd = avx2_table()) return simd;
    return &scalar_table();
}

const KernelTable*& slot() noexcept {
    static const KernelTable* current = select_default();
    return current;
}

}  // namespace

const KernelTable& active() noexcept { return *slot(); }

void set_active(const KernelTable& table) noexcept { slot() = &table; }

}  // namespace cpunet::kernels
