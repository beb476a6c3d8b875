#pragma once

#include <string>
#include <vector>

#include "trideform/field/mlp.hpp"

namespace trideform {

using LatentVector = std::vector<float>;  // z ~ N(0, I)
using StyleVector = std::vector<float>;   // w = M_G(z)

struct Embedding {
    std::vector<float> values;
    bool normalized = false;

    void validate() const;  // normalized => unit L2 within 1e-5
};

Embedding normalize_embedding(std::vector<float> values);

// Residual dense network with a zero-initialized final linear layer, used
// for T_G, T_D and the editing network: at zero init the output is
// identically zero, so the conditional path collapses onto the
// unconditional one.
//
// layers: [0] input projection d_in -> width (lrelu),
//         [1..4] two residual blocks h + W2 lrelu(W1 h + b1) + b2,
//         [5] output projection width -> d_out (zero at init).
struct AlignmentNet {
    int d_in = 0, d_out = 0, width = 0;
    std::vector<Dense> layers;
    bool zero_marker = false;  // final layer untouched since zero_init

    void validate() const;
};

AlignmentNet make_alignment_net(int d_in, int d_out, RngStream& rng, int width = 64);
void zero_init(AlignmentNet& net);

struct AlignCache {
    std::vector<double> x, s_in, h0;
    std::vector<double> block_in[2], s_a[2], u[2];
    std::vector<double> h_final;
};

std::vector<float> align_forward(const AlignmentNet& net, const std::vector<float>& x,
                                 AlignCache* cache = nullptr);
// Returns d_x; accumulates parameter gradients (layer order as above).
std::vector<float> align_backward(const AlignmentNet& net, const AlignCache& cache,
                                  const std::vector<float>& d_out, MlpGrads* grads);

std::size_t align_param_count(const AlignmentNet& net);

void save_alignment(const std::string& dir, const std::string& prefix, const AlignmentNet& net);
nlohmann::json alignment_manifest(const AlignmentNet& net);
AlignmentNet load_alignment(const std::string& dir, const std::string& prefix,
                            const nlohmann::json& manifest);

// w = M_G(z); a MappingNet is a plain dense stack.
using MappingNet = Mlp;
MappingNet make_mapping_net(int d_z, int d_w, RngStream& rng);
StyleVector map_latent(const MappingNet& m, const LatentVector& z);

// w + alpha * T_G(w || r). The cache overload records the forward pass for
// align_backward; alpha = 0 short-circuits and leaves the cache untouched.
StyleVector align_style(const StyleVector& w, const Embedding& r, float alpha,
                        const AlignmentNet& t_g);
StyleVector align_style(const StyleVector& w, const Embedding& r, float alpha,
                        const AlignmentNet& t_g, AlignCache* cache);

// v_r = v + alpha * T_D(v || r); returns u . v_r
double discriminate(const std::vector<float>& u, const std::vector<float>& v, const Embedding& r,
                    float alpha, const AlignmentNet& t_d);

// w + alpha * E_t(w)
StyleVector edit_style(const StyleVector& w, const AlignmentNet& e_t, float alpha);

}  // namespace trideform
