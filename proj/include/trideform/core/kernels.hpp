#pragma once

#include <cstddef>
#include <string_view>

namespace trideform::kern {

// Hot-loop primitives with scalar and AVX2 variants selected at runtime.
// Elementwise ops (axpy, scale, gemv_t, ger_acc, wsum4, wscatter4,
// dense_batch*, leaky_relu*) accumulate per output element in the same order
// in every backend and are bit-exact across backends. Reductions (dot, sum,
// sum_sq, gemv, dense_batch_wgrad) reassociate and agree only to tolerance.
struct Ops {
    const char* name;

    float (*dot)(const float* a, const float* b, std::size_t n);
    float (*sum)(const float* a, std::size_t n);
    float (*sum_sq)(const float* a, std::size_t n);
    void (*axpy)(float alpha, const float* x, float* y, std::size_t n);   // y += alpha x
    void (*scale)(float alpha, float* x, std::size_t n);                  // x *= alpha

    // W row-major [rows, cols].
    void (*gemv)(const float* w, const float* x, const float* bias, float* y,
                 std::size_t rows, std::size_t cols);                     // y = Wx (+bias)
    void (*gemv_t)(const float* w, const float* x, float* y,
                   std::size_t rows, std::size_t cols);                   // y = W^T x
    void (*ger_acc)(const float* x, const float* y, float* a,
                    std::size_t rows, std::size_t cols);                  // A += x y^T

    // acc += w[0] t0 + w[1] t1 + w[2] t2 + w[3] t3, each t a C-vector.
    void (*wsum4)(const float* t0, const float* t1, const float* t2, const float* t3,
                  const float w[4], float* acc, std::size_t c);
    // tk += w[k] g for each corner, each t a C-vector.
    void (*wscatter4)(float* t0, float* t1, float* t2, float* t3,
                      const float w[4], const float* g, std::size_t c);

    // Feature-major batch layout: x is [in_dim, n], y is [out_dim, n],
    // row i of x holds feature i of all n samples contiguously.
    void (*dense_batch)(const float* w, const float* bias, const float* x, float* y,
                        std::size_t out_dim, std::size_t in_dim, std::size_t n);
    void (*dense_batch_bwd)(const float* w, const float* dy, float* dx,
                            std::size_t out_dim, std::size_t in_dim, std::size_t n);
    void (*dense_batch_wgrad)(const float* dy, const float* x, float* dw, float* db,
                              std::size_t out_dim, std::size_t in_dim, std::size_t n);

    void (*leaky_relu)(const float* x, float* y, float slope, std::size_t n);
    void (*leaky_relu_bwd)(const float* x, const float* dy, float* dx, float slope,
                           std::size_t n);
};

enum class Backend { kAuto, kScalar, kAvx2 };

const Ops& ops();                       // active backend
const Ops& scalar_ops();
const Ops* avx2_ops();                  // nullptr when the CPU lacks AVX2
bool avx2_available();
void set_backend(Backend b);            // kAvx2 on an unsupported CPU throws
bool set_backend_by_name(std::string_view name);  // "auto" | "scalar" | "avx2"
const char* backend_name();

}  // namespace trideform::kern
