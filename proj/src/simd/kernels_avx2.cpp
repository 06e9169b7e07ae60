// Compiled with -mavx2 -mfma. Only reached after cpu_has_avx2_fma().
#include "voplab/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

namespace voplab::simd::detail {

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

float dot_f32(const float* x, const float* y, std::size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    }
    float acc = hsum(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double dot_f64(const double* x, const double* y, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void add_f32(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void add_f64(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_f32(const float* x, const float* y, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void mul_f64(const double* x, const double* y, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_f32(float a, const float* x, float* out, std::size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

void scale_f64(double a, const double* x, double* out, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = a * x[i];
}

float sum_f32(const float* x, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double sum_f64(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

template <typename T>
struct Vec;

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t width = 8;
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg broadcast(float x) { return _mm256_set1_ps(x); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
};

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t width = 4;
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg broadcast(double x) { return _mm256_set1_pd(x); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
};

// R rows of C += A·B. Every element is a fused multiply-add chain over p,
// whether it lands in a vector block or the scalar tail.
template <typename T, std::size_t R>
void gemm_block(const T* a, const T* b, T* c, std::size_t k, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) {
        typename V::reg acc[R][2];
#pragma GCC unroll 4
        for (std::size_t r = 0; r < R; ++r) {
            acc[r][0] = V::load(c + r * n + j);
            acc[r][1] = V::load(c + r * n + j + W);
        }
        for (std::size_t p = 0; p < k; ++p) {
            const auto b0 = V::load(b + p * n + j);
            const auto b1 = V::load(b + p * n + j + W);
#pragma GCC unroll 4
            for (std::size_t r = 0; r < R; ++r) {
                const auto av = V::broadcast(a[r * k + p]);
                acc[r][0] = V::fma(av, b0, acc[r][0]);
                acc[r][1] = V::fma(av, b1, acc[r][1]);
            }
        }
#pragma GCC unroll 4
        for (std::size_t r = 0; r < R; ++r) {
            V::store(c + r * n + j, acc[r][0]);
            V::store(c + r * n + j + W, acc[r][1]);
        }
    }
    for (; j + W <= n; j += W) {
        typename V::reg acc[R];
#pragma GCC unroll 4
        for (std::size_t r = 0; r < R; ++r) acc[r] = V::load(c + r * n + j);
        for (std::size_t p = 0; p < k; ++p) {
            const auto b0 = V::load(b + p * n + j);
#pragma GCC unroll 4
            for (std::size_t r = 0; r < R; ++r) acc[r] = V::fma(V::broadcast(a[r * k + p]), b0, acc[r]);
        }
#pragma GCC unroll 4
        for (std::size_t r = 0; r < R; ++r) V::store(c + r * n + j, acc[r]);
    }
    for (; j < n; ++j) {
        for (std::size_t r = 0; r < R; ++r) {
            T acc = c[r * n + j];
            for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[r * k + p], b[p * n + j], acc);
            c[r * n + j] = acc;
        }
    }
}

template <typename T>
void gemm_avx2(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) gemm_block<T, 4>(a + i * k, b, c + i * n, k, n);
    for (; i < m; ++i) gemm_block<T, 1>(a + i * k, b, c + i * n, k, n);
}

}  // namespace

bool cpu_has_avx2_fma() {
#if defined(__GNUC__) || defined(__clang__)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

template <>
KernelTable<float> avx2_table<float>() {
    return KernelTable<float>{Isa::avx2, &dot_f32, &axpy_f32, &add_f32, &mul_f32, &scale_f32, &sum_f32,
                              &gemm_avx2<float>};
}

template <>
KernelTable<double> avx2_table<double>() {
    return KernelTable<double>{Isa::avx2, &dot_f64, &axpy_f64, &add_f64, &mul_f64, &scale_f64, &sum_f64,
                               &gemm_avx2<double>};
}

}  // namespace voplab::simd::detail

#endif
