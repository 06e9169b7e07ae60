#pragma once

// Inner-loop arithmetic used by the tensor core.
//
// Every primitive has a portable scalar reference implementation plus
// vectorized variants (AVX2+FMA on x86-64, NEON on AArch64). The variant is
// chosen once at startup from CPU capabilities; VOPLAB_SIMD=scalar|avx2|neon
// overrides the choice. All variants are equivalence-tested against the
// scalar reference.
//
// Reduction order is a function of the vector length only, never of pointer
// alignment, so results are reproducible for a fixed build and ISA.

#include <cstddef>
#include <string>
#include <string_view>

namespace voplab::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);
Isa parse_isa(std::string_view name);

template <typename T>
struct KernelTable {
    Isa isa;
    // sum_i x[i] * y[i]
    T (*dot)(const T* x, const T* y, std::size_t n);
    // y[i] += a * x[i]
    void (*axpy)(T a, const T* x, T* y, std::size_t n);
    // out[i] = x[i] + y[i]
    void (*add)(const T* x, const T* y, T* out, std::size_t n);
    // out[i] = x[i] * y[i]
    void (*mul)(const T* x, const T* y, T* out, std::size_t n);
    // out[i] = a * x[i]
    void (*scale)(T a, const T* x, T* out, std::size_t n);
    // sum_i x[i]
    T (*sum)(const T* x, std::size_t n);
    // C[m,n] += A[m,k] · B[k,n], row-major. Each C[i,j] accumulates over k in
    // order, independent of m, n and of i, j.
    void (*gemm)(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n);
};

bool isa_available(Isa isa);

// Best ISA for this CPU, honoring VOPLAB_SIMD when it names an available ISA.
Isa detect_isa();

Isa active_isa();

// Switch the process-wide kernel table. Throws std::invalid_argument when the
// ISA is not available on this CPU/build.
void set_active_isa(Isa isa);

template <typename T>
const KernelTable<T>& kernels();

template <typename T>
const KernelTable<T>& kernels(Isa isa);

// Dense row-major products built on the active table.
//   gemm:    C[m,n]  (+)=  A[m,k] · B[k,n]
//   gemm_bt: C[m,n]  (+)=  A[m,k] · B[n,k]ᵀ
//   gemm_at: C[m,n]  (+)=  A[k,m]ᵀ · B[k,n]
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          bool accumulate);
template <typename T>
void gemm_bt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);
template <typename T>
void gemm_at(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

namespace detail {
template <typename T>
KernelTable<T> scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
template <typename T>
KernelTable<T> avx2_table();
bool cpu_has_avx2_fma();
#endif
#if defined(__aarch64__)
template <typename T>
KernelTable<T> neon_table();
#endif
}  // namespace detail

}  // namespace voplab::simd
