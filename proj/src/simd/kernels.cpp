#include "voplab/simd/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace voplab::simd {

namespace {

template <typename T>
T scalar_dot(const T* x, const T* y, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <typename T>
void scalar_axpy(T a, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void scalar_add(const T* x, const T* y, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <typename T>
void scalar_mul(const T* x, const T* y, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <typename T>
void scalar_scale(T a, const T* x, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

template <typename T>
T scalar_sum(const T* x, std::size_t n) {
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
void scalar_gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) scalar_axpy(a[i * k + p], b + p * n, c + i * n, n);
    }
}

template <typename T>
std::vector<T>& scratch() {
    thread_local std::vector<T> buf;
    return buf;
}

// out[c, r] = in[r, c]
template <typename T>
void transpose_into(const T* in, std::size_t rows, std::size_t cols, std::vector<T>& out) {
    out.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
    }
}

Isa initial_isa() {
    return detect_isa();
}

std::atomic<Isa>& active_slot() {
    static std::atomic<Isa> slot{initial_isa()};
    return slot;
}

template <typename T>
const KernelTable<T>& table_for(Isa isa) {
    static const KernelTable<T> scalar = detail::scalar_table<T>();
#if defined(__x86_64__) || defined(_M_X64)
    static const KernelTable<T> avx2 = detail::avx2_table<T>();
    if (isa == Isa::avx2) return avx2;
#endif
#if defined(__aarch64__)
    static const KernelTable<T> neon = detail::neon_table<T>();
    if (isa == Isa::neon) return neon;
#endif
    (void)isa;
    return scalar;
}

}  // namespace

namespace detail {
template <typename T>
KernelTable<T> scalar_table() {
    return KernelTable<T>{Isa::scalar,    &scalar_dot<T>,   &scalar_axpy<T>, &scalar_add<T>,
                          &scalar_mul<T>, &scalar_scale<T>, &scalar_sum<T>, &scalar_gemm<T>};
}
template KernelTable<float> scalar_table<float>();
template KernelTable<double> scalar_table<double>();
}  // namespace detail

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "unknown";
}

Isa parse_isa(std::string_view name) {
    if (name == "scalar") return Isa::scalar;
    if (name == "avx2") return Isa::avx2;
    if (name == "neon") return Isa::neon;
    throw std::invalid_argument("unknown SIMD ISA '" + std::string(name) + "'");
}

bool isa_available(Isa isa) {
    switch (isa) {
        case Isa::scalar: return true;
        case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            return detail::cpu_has_avx2_fma();
#else
            return false;
#endif
        case Isa::neon:
#if defined(__aarch64__)
            return true;
#else
            return false;
#endif
    }
    return false;
}

Isa detect_isa() {
    if (const char* env = std::getenv("VOPLAB_SIMD"); env != nullptr && *env != '\0') {
        try {
            Isa requested = parse_isa(env);
            if (isa_available(requested)) return requested;
        } catch (const std::invalid_argument&) {
            // fall through to autodetection
        }
    }
    if (isa_available(Isa::avx2)) return Isa::avx2;
    if (isa_available(Isa::neon)) return Isa::neon;
    return Isa::scalar;
}

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
    if (!isa_available(isa)) {
        throw std::invalid_argument("SIMD ISA '" + std::string(isa_name(isa)) +
                                    "' is not available on this machine");
    }
    active_slot().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& kernels() {
    return table_for<T>(active_isa());
}

template <typename T>
const KernelTable<T>& kernels(Isa isa) {
    if (!isa_available(isa)) {
        throw std::invalid_argument("SIMD ISA '" + std::string(isa_name(isa)) +
                                    "' is not available on this machine");
    }
    return table_for<T>(isa);
}

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    kernels<T>().gemm(a, b, c, m, k, n);
}

template <typename T>
void gemm_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
    auto& bt = scratch<T>();
    transpose_into(b, n, k, bt);
    gemm(a, bt.data(), c, m, k, n, accumulate);
}

template <typename T>
void gemm_at(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
    auto& at = scratch<T>();
    transpose_into(a, k, m, at);
    gemm(at.data(), b, c, m, k, n, accumulate);
}

template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();
template const KernelTable<float>& kernels<float>(Isa);
template const KernelTable<double>& kernels<double>(Isa);
template void gemm<float>(const float*, const float*, float*, std::size_t, std::size_t,
                          std::size_t, bool);
template void gemm<double>(const double*, const double*, double*, std::size_t, std::size_t,
                           std::size_t, bool);
template void gemm_bt<float>(const float*, const float*, float*, std::size_t, std::size_t,
                             std::size_t, bool);
template void gemm_bt<double>(const double*, const double*, double*, std::size_t,
                              std::size_t, std::size_t, bool);
template void gemm_at<float>(const float*, const float*, float*, std::size_t, std::size_t,
                             std::size_t, bool);
template void gemm_at<double>(const double*, const double*, double*, std::size_t,
                              std::size_t, std::size_t, bool);

}  // namespace voplab::simd
