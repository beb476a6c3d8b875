#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trideform/core/rng.hpp"

namespace trideform {

enum class Act { kLinear, kLeakyRelu, kSoftplus };

const char* act_name(Act a);
Act act_from_name(const std::string& name);

double act_value(Act a, double s);
double act_deriv(Act a, double s);

struct Dense {
    int in = 0, out = 0;
    std::vector<float> w;  // row-major [out, in]
    std::vector<float> b;  // [out]
};

Dense make_dense(int in, int out);
void he_init(Dense& d, RngStream& rng);

// Single-vector dense primitives (double accumulation over float params).
std::vector<double> dense_apply(const Dense& d, std::span<const double> x);         // W x + b
std::vector<double> dense_apply_linear(const Dense& d, std::span<const double> x);  // W x
std::vector<double> dense_transpose_apply(const Dense& d, std::span<const double> u);  // W' u

// Sequential dense net. `hidden` is applied after every layer except the
// last, whose output is linear. Parameters are float32; single-vector
// evaluation accumulates in double so test oracles at 1e-6 hold.
struct Mlp {
    std::vector<Dense> layers;
    Act hidden = Act::kLeakyRelu;

    int in_dim() const { return layers.empty() ? 0 : layers.front().in; }
    int out_dim() const { return layers.empty() ? 0 : layers.back().out; }
    void validate() const;
};

Mlp make_mlp(const std::vector<int>& dims, Act hidden, RngStream& rng);
void zero_fill(Dense& d);
std::size_t param_count(const Mlp& m);

struct MlpGrads {
    std::vector<std::vector<float>> dw, db;

    void init(const Mlp& m);
    void init(const std::vector<Dense>& layers);
    void zero();
};

struct MlpCache {
    std::vector<std::vector<double>> x;  // layer inputs; x[0] is the net input
    std::vector<std::vector<double>> s;  // pre-activations per layer
};

// Caches for the forward-tangent pass: primal pre-activations plus the
// tangent input of every layer.
struct MlpJvpCache {
    std::vector<std::vector<double>> s;
    std::vector<std::vector<double>> tx;
};

std::vector<double> mlp_forward(const Mlp& m, std::span<const double> x,
                                MlpCache* cache = nullptr);
// Reverse pass; returns the input adjoint and accumulates parameter grads.
std::vector<double> mlp_backward(const Mlp& m, const MlpCache& cache,
                                 std::span<const double> dy, MlpGrads* grads);
// Exact forward-mode directional derivative J(x) v.
std::vector<double> mlp_jvp(const Mlp& m, std::span<const double> x, std::span<const double> v,
                            MlpJvpCache* cache = nullptr);
// Reverse pass through the tangent computation with activation masks held
// fixed: exact a.e. for piecewise-linear hidden activations. Returns the
// adjoint of the tangent input. Bias gradients are identically zero on this
// path and are left untouched. Throws for softplus hidden layers.
std::vector<double> mlp_jvp_backward(const Mlp& m, const MlpJvpCache& cache,
                                     std::span<const double> d_tangent_out, MlpGrads* grads);

// float convenience wrappers
std::vector<float> mlp_forward_f(const Mlp& m, std::span<const float> x);

// Serialization: one tensor pair per layer under `prefix`, structure in the
// returned manifest fragment.
nlohmann::json mlp_manifest(const Mlp& m);
void save_mlp_tensors(const std::string& dir, const std::string& prefix, const Mlp& m);
Mlp load_mlp(const std::string& dir, const std::string& prefix, const nlohmann::json& manifest);

}  // namespace trideform
