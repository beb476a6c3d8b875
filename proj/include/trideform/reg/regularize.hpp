#pragma once

#include <functional>
#include <vector>

#include "trideform/core/rng.hpp"

namespace trideform {

// Stochastic probe configuration for the Frobenius-norm estimators.
struct ProbeSpec {
    double sigma = 0.1;
    int n_probes = 1;
    RngStream rng;

    void validate() const;
};

struct RegWeights {
    float alpha = 0.0f;          // alignment strength
    float lambda_jac = 0.01f;    // weight of the Jacobian-norm penalty
    float lambda_norm = 10.0f;   // weight of the style-norm penalty
    float eta = 10.0f;           // editing-loss norm weight
    float alpha_dropout = 0.5f;  // probability of forcing alpha = 0 per step

    void validate() const;
};

using VecFn = std::function<std::vector<double>(const std::vector<double>&)>;

// Sum of squared entries; shape-independent.
double exact_frob_sq(const std::vector<double>& j);

// mean over probes of |J v|^2 with v ~ N(0, I), via an exact jvp.
// Probe k draws from rng.substream(k); the reduction order is fixed.
double hutchinson_frob_sq(const VecFn& jvp_fn, int in_dim, const ProbeSpec& probes);

// mean over probes of |f(x + eps) - f(x)|^2 / sigma^2, eps ~ N(0, sigma^2 I).
double fd_frob_sq(const VecFn& f, const std::vector<double>& x, const ProbeSpec& probes);

// The Jacobian penalty: fd_frob_sq of the alignment map at r.
double r_jac(const VecFn& alignment_fn, const std::vector<double>& r, const ProbeSpec& probes);

// (|w_r| - |w|)^2
double r_norm(const std::vector<float>& w_r, const std::vector<float>& w);

// Largest singular value by power iteration on J^T J; row-major [rows, cols].
double spectral_norm(const std::vector<double>& j, int rows, int cols, int iters);

// 1 - cos(dx, dt) + eta * r_norm(w_t, w)
double edit_loss(const std::vector<float>& delta_x, const std::vector<float>& delta_t,
                 const std::vector<float>& w_t, const std::vector<float>& w, double eta);

}  // namespace trideform
