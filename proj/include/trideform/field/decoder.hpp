#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trideform/field/mlp.hpp"

namespace trideform {

struct FieldSample {
    std::vector<float> feature;  // length c_f
    float density = 0;           // softplus(raw), always >= 0
};

// MLP from a sampled plane feature (c_in) to c_f feature channels plus one
// raw density, decoded through softplus.
struct DecoderNet {
    Mlp mlp;
    int c_in = 0, c_f = 0;

    void validate() const;
};

DecoderNet make_decoder(int c_in, const std::vector<int>& hidden_dims, int c_f, Act hidden_act,
                        RngStream& rng);

FieldSample decode(const DecoderNet& net, std::span<const float> fprime);

// Batched paths in float over feature-major layout [dim, n]: the renderer and
// training loop feed every sample of an image through these. Per-sample
// results do not depend on batch composition.
struct DecoderBatchCache {
    std::size_t n = 0;
    std::vector<std::vector<float>> x;  // layer inputs, x[0] = input copy
    std::vector<std::vector<float>> s;  // pre-activations
};

void decoder_forward_batch(const DecoderNet& net, const float* x, std::size_t n, float* features,
                           float* density, DecoderBatchCache* cache);
// d_features [c_f, n], d_density [n]; writes the input adjoint into dx
// [c_in, n] and accumulates parameter grads.
void decoder_backward_batch(const DecoderNet& net, const DecoderBatchCache& cache,
                            const float* d_features, const float* d_density, float* dx,
                            MlpGrads* grads);
// Forward tangent through the cached primal: tx [c_in, n] to t_features /
// t_density.
void decoder_jvp_batch(const DecoderNet& net, const DecoderBatchCache& cache, const float* tx,
                       float* t_features, float* t_density);

nlohmann::json decoder_manifest(const DecoderNet& net);
void save_decoder_tensors(const std::string& dir, const std::string& prefix,
                          const DecoderNet& net);
DecoderNet load_decoder(const std::string& dir, const std::string& prefix,
                        const nlohmann::json& manifest);

}  // namespace trideform
