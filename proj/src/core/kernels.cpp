#include "trideform/core/kernels.hpp"

#include <cstring>
#include <immintrin.h>

#include "trideform/core/error.hpp"

namespace trideform::kern {

namespace scalar {

float dot(const float* a, const float* b, std::size_t n) {
    float s = 0.0f;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

float sum(const float* a, std::size_t n) {
    float s = 0.0f;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

float sum_sq(const float* a, std::size_t n) {
    float s = 0.0f;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * a[i];
    return s;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale(float alpha, float* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void gemv(const float* w, const float* x, const float* bias, float* y,
          std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        float s = bias ? bias[r] : 0.0f;
        const float* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
        y[r] = s;
    }
}

void gemv_t(const float* w, const float* x, float* y, std::size_t rows, std::size_t cols) {
    for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0f;
    for (std::size_t r = 0; r < rows; ++r) axpy(x[r], w + r * cols, y, cols);
}

void ger_acc(const float* x, const float* y, float* a, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) axpy(x[r], y, a + r * cols, cols);
}

void wsum4(const float* t0, const float* t1, const float* t2, const float* t3,
           const float w[4], float* acc, std::size_t c) {
    // Balanced add tree, matching the AVX2 variant bit for bit.
    for (std::size_t i = 0; i < c; ++i)
        acc[i] += (w[0] * t0[i] + w[1] * t1[i]) + (w[2] * t2[i] + w[3] * t3[i]);
}

void wscatter4(float* t0, float* t1, float* t2, float* t3, const float w[4],
               const float* g, std::size_t c) {
    for (std::size_t i = 0; i < c; ++i) {
        t0[i] += w[0] * g[i];
        t1[i] += w[1] * g[i];
        t2[i] += w[2] * g[i];
        t3[i] += w[3] * g[i];
    }
}

void dense_batch(const float* w, const float* bias, const float* x, float* y,
                 std::size_t out_dim, std::size_t in_dim, std::size_t n) {
    for (std::size_t o = 0; o < out_dim; ++o) {
        float* yrow = y + o * n;
        const float b = bias ? bias[o] : 0.0f;
        for (std::size_t s = 0; s < n; ++s) yrow[s] = b;
        for (std::size_t i = 0; i < in_dim; ++i) axpy(w[o * in_dim + i], x + i * n, yrow, n);
    }
}

void dense_batch_bwd(const float* w, const float* dy, float* dx,
                     std::size_t out_dim, std::size_t in_dim, std::size_t n) {
    for (std::size_t i = 0; i < in_dim; ++i) {
        float* row = dx + i * n;
        for (std::size_t s = 0; s < n; ++s) row[s] = 0.0f;
        for (std::size_t o = 0; o < out_dim; ++o) axpy(w[o * in_dim + i], dy + o * n, row, n);
    }
}

void dense_batch_wgrad(const float* dy, const float* x, float* dw, float* db,
                       std::size_t out_dim, std::size_t in_dim, std::size_t n) {
    for (std::size_t o = 0; o < out_dim; ++o) {
        const float* dyrow = dy + o * n;
        for (std::size_t i = 0; i < in_dim; ++i) dw[o * in_dim + i] += dot(dyrow, x + i * n, n);
        if (db) db[o] += sum(dyrow, n);
    }
}

void leaky_relu(const float* x, float* y, float slope, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

void leaky_relu_bwd(const float* x, const float* dy, float* dx, float slope, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > 0.0f ? dy[i] : slope * dy[i];
}

}  // namespace scalar

// AVX2 variants avoid FMA so elementwise ops stay bit-identical to scalar.
namespace avx2 {

#define TD_AVX2 __attribute__((target("avx2")))

TD_AVX2 static inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
}

TD_AVX2 float dot(const float* a, const float* b, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    float s = hsum256(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

TD_AVX2 float sum(const float* a, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(a + i));
    float s = hsum256(acc);
    for (; i < n; ++i) s += a[i];
    return s;
}

TD_AVX2 float sum_sq(const float* a, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(a + i);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(v, v));
    }
    float s = hsum256(acc);
    for (; i < n; ++i) s += a[i] * a[i];
    return s;
}

TD_AVX2 void axpy(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i),
                                              _mm256_mul_ps(va, _mm256_loadu_ps(x + i))));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

TD_AVX2 void scale(float alpha, float* x, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

TD_AVX2 void gemv(const float* w, const float* x, const float* bias, float* y,
                  std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
        y[r] = (bias ? bias[r] : 0.0f) + dot(w + r * cols, x, cols);
}

TD_AVX2 void gemv_t(const float* w, const float* x, float* y, std::size_t rows,
                    std::size_t cols) {
    for (std::size_t c = 0; c < cols; ++c) y[c] = 0.0f;
    for (std::size_t r = 0; r < rows; ++r) axpy(x[r], w + r * cols, y, cols);
}

TD_AVX2 void ger_acc(const float* x, const float* y, float* a, std::size_t rows,
                     std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) axpy(x[r], y, a + r * cols, cols);
}

TD_AVX2 void wsum4(const float* t0, const float* t1, const float* t2, const float* t3,
                   const float w[4], float* acc, std::size_t c) {
    const __m256 w0 = _mm256_set1_ps(w[0]), w1 = _mm256_set1_ps(w[1]);
    const __m256 w2 = _mm256_set1_ps(w[2]), w3 = _mm256_set1_ps(w[3]);
    std::size_t i = 0;
    for (; i + 8 <= c; i += 8) {
        __m256 v = _mm256_add_ps(
            _mm256_add_ps(_mm256_mul_ps(w0, _mm256_loadu_ps(t0 + i)),
                          _mm256_mul_ps(w1, _mm256_loadu_ps(t1 + i))),
            _mm256_add_ps(_mm256_mul_ps(w2, _mm256_loadu_ps(t2 + i)),
                          _mm256_mul_ps(w3, _mm256_loadu_ps(t3 + i))));
        _mm256_storeu_ps(acc + i, _mm256_add_ps(_mm256_loadu_ps(acc + i), v));
    }
    for (; i < c; ++i)
        acc[i] += (w[0] * t0[i] + w[1] * t1[i]) + (w[2] * t2[i] + w[3] * t3[i]);
}

TD_AVX2 void wscatter4(float* t0, float* t1, float* t2, float* t3, const float w[4],
                       const float* g, std::size_t c) {
    axpy(w[0], g, t0, c);
    axpy(w[1], g, t1, c);
    axpy(w[2], g, t2, c);
    axpy(w[3], g, t3, c);
}

TD_AVX2 void dense_batch(const float* w, const float* bias, const float* x, float* y,
                         std::size_t out_dim, std::size_t in_dim, std::size_t n) {
    for (std::size_t o = 0; o < out_dim; ++o) {
        float* yrow = y + o * n;
        const __m256 vb = _mm256_set1_ps(bias ? bias[o] : 0.0f);
        std::size_t s = 0;
        for (; s + 8 <= n; s += 8) _mm256_storeu_ps(yrow + s, vb);
        for (; s < n; ++s) yrow[s] = bias ? bias[o] : 0.0f;
        for (std::size_t i = 0; i < in_dim; ++i) axpy(w[o * in_dim + i], x + i * n, yrow, n);
    }
}

TD_AVX2 void dense_batch_bwd(const float* w, const float* dy, float* dx,
                             std::size_t out_dim, std::size_t in_dim, std::size_t n) {
    for (std::size_t i = 0; i < in_dim; ++i) {
        float* row = dx + i * n;
        std::memset(row, 0, n * sizeof(float));
        for (std::size_t o = 0; o < out_dim; ++o) axpy(w[o * in_dim + i], dy + o * n, row, n);
    }
}

TD_AVX2 void dense_batch_wgrad(const float* dy, const float* x, float* dw, float* db,
                               std::size_t out_dim, std::size_t in_dim, std::size_t n) {
    for (std::size_t o = 0; o < out_dim; ++o) {
        const float* dyrow = dy + o * n;
        for (std::size_t i = 0; i < in_dim; ++i) dw[o * in_dim + i] += dot(dyrow, x + i * n, n);
        if (db) db[o] += sum(dyrow, n);
    }
}

TD_AVX2 void leaky_relu(const float* x, float* y, float slope, std::size_t n) {
    const __m256 vs = _mm256_set1_ps(slope);
    const __m256 vz = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        __m256 mask = _mm256_cmp_ps(v, vz, _CMP_GT_OQ);
        _mm256_storeu_ps(y + i, _mm256_blendv_ps(_mm256_mul_ps(vs, v), v, mask));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : slope * x[i];
}

TD_AVX2 void leaky_relu_bwd(const float* x, const float* dy, float* dx, float slope,
                            std::size_t n) {
    const __m256 vs = _mm256_set1_ps(slope);
    const __m256 vz = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 g = _mm256_loadu_ps(dy + i);
        __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), vz, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_blendv_ps(_mm256_mul_ps(vs, g), g, mask));
    }
    for (; i < n; ++i) dx[i] = x[i] > 0.0f ? dy[i] : slope * dy[i];
}

#undef TD_AVX2

}  // namespace avx2

namespace {

const Ops kScalarOps = {
    "scalar",
    scalar::dot, scalar::sum, scalar::sum_sq, scalar::axpy, scalar::scale,
    scalar::gemv, scalar::gemv_t, scalar::ger_acc,
    scalar::wsum4, scalar::wscatter4,
    scalar::dense_batch, scalar::dense_batch_bwd, scalar::dense_batch_wgrad,
    scalar::leaky_relu, scalar::leaky_relu_bwd,
};

const Ops kAvx2Ops = {
    "avx2",
    avx2::dot, avx2::sum, avx2::sum_sq, avx2::axpy, avx2::scale,
    avx2::gemv, avx2::gemv_t, avx2::ger_acc,
    avx2::wsum4, avx2::wscatter4,
    avx2::dense_batch, avx2::dense_batch_bwd, avx2::dense_batch_wgrad,
    avx2::leaky_relu, avx2::leaky_relu_bwd,
};

const Ops* g_active = nullptr;

const Ops* pick_auto() { return avx2_available() ? &kAvx2Ops : &kScalarOps; }

}  // namespace

bool avx2_available() { return __builtin_cpu_supports("avx2"); }

const Ops& scalar_ops() { return kScalarOps; }

const Ops* avx2_ops() { return avx2_available() ? &kAvx2Ops : nullptr; }

const Ops& ops() {
    if (!g_active) g_active = pick_auto();
    return *g_active;
}

void set_backend(Backend b) {
    switch (b) {
        case Backend::kAuto: g_active = pick_auto(); break;
        case Backend::kScalar: g_active = &kScalarOps; break;
        case Backend::kAvx2:
            if (!avx2_available()) throw ValidationError("kernel backend avx2 not supported on this CPU");
            g_active = &kAvx2Ops;
            break;
    }
}

bool set_backend_by_name(std::string_view name) {
    if (name == "auto") set_backend(Backend::kAuto);
    else if (name == "scalar") set_backend(Backend::kScalar);
    else if (name == "avx2") set_backend(Backend::kAvx2);
    else return false;
    return true;
}

const char* backend_name() { return ops().name; }

}  // namespace trideform::kern
