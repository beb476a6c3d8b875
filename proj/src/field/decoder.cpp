#include "trideform/field/decoder.hpp"

#include <cmath>
#include <cstring>

#include "trideform/core/error.hpp"
#include "trideform/core/kernels.hpp"

namespace trideform {

namespace {

constexpr float kLeakSlopeF = 0.2f;

float softplus_f(float x) { return x > 20.0f ? x : std::log1p(std::exp(x)); }
float sigmoid_f(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace

void DecoderNet::validate() const {
    mlp.validate();
    if (mlp.in_dim() != c_in || mlp.out_dim() != c_f + 1)
        throw ValidationError("DecoderNet: mlp dims disagree with c_in/c_f");
}

DecoderNet make_decoder(int c_in, const std::vector<int>& hidden_dims, int c_f, Act hidden_act,
                        RngStream& rng) {
    std::vector<int> dims = {c_in};
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(c_f + 1);
    DecoderNet net;
    net.mlp = make_mlp(dims, hidden_act, rng);
    net.c_in = c_in;
    net.c_f = c_f;
    return net;
}

FieldSample decode(const DecoderNet& net, std::span<const float> fprime) {
    net.validate();
    if (static_cast<int>(fprime.size()) != net.c_in)
        throw ValidationError("decode: input dim mismatch");
    std::vector<double> x(fprime.begin(), fprime.end());
    const std::vector<double> y = mlp_forward(net.mlp, x);
    FieldSample out;
    out.feature.assign(y.begin(), y.begin() + net.c_f);
    const double raw = y[net.c_f];
    out.density = static_cast<float>(raw > 20 ? raw : std::log1p(std::exp(raw)));
    return out;
}

void decoder_forward_batch(const DecoderNet& net, const float* x, std::size_t n, float* features,
                           float* density, DecoderBatchCache* cache) {
    net.validate();
    const auto& k = kern::ops();
    if (cache) {
        cache->n = n;
        cache->x.clear();
        cache->s.clear();
    }

    std::vector<float> cur(x, x + static_cast<std::size_t>(net.c_in) * n);
    for (std::size_t l = 0; l < net.mlp.layers.size(); ++l) {
        const Dense& d = net.mlp.layers[l];
        if (cache) cache->x.push_back(cur);
        std::vector<float> s(static_cast<std::size_t>(d.out) * n);
        k.dense_batch(d.w.data(), d.b.data(), cur.data(), s.data(), d.out, d.in, n);
        if (cache) cache->s.push_back(s);
        if (l + 1 < net.mlp.layers.size()) {
            if (net.mlp.hidden == Act::kLeakyRelu) {
                k.leaky_relu(s.data(), s.data(), kLeakSlopeF, s.size());
            } else if (net.mlp.hidden == Act::kSoftplus) {
                for (float& v : s) v = softplus_f(v);
            }
        }
        cur = std::move(s);
    }

    // Split: first c_f rows are features, last row is raw density.
    std::memcpy(features, cur.data(), static_cast<std::size_t>(net.c_f) * n * sizeof(float));
    const float* raw = cur.data() + static_cast<std::size_t>(net.c_f) * n;
    for (std::size_t i = 0; i < n; ++i) density[i] = softplus_f(raw[i]);
}

void decoder_backward_batch(const DecoderNet& net, const DecoderBatchCache& cache,
                            const float* d_features, const float* d_density, float* dx,
                            MlpGrads* grads) {
    net.validate();
    if (cache.s.size() != net.mlp.layers.size())
        throw ValidationError("decoder_backward_batch: cache mismatch");
    const auto& k = kern::ops();
    const std::size_t n = cache.n;

    const std::size_t L = net.mlp.layers.size();
    std::vector<float> adj(static_cast<std::size_t>(net.c_f + 1) * n);
    std::memcpy(adj.data(), d_features, static_cast<std::size_t>(net.c_f) * n * sizeof(float));
    const float* raw = cache.s.back().data() + static_cast<std::size_t>(net.c_f) * n;
    float* d_raw = adj.data() + static_cast<std::size_t>(net.c_f) * n;
    for (std::size_t i = 0; i < n; ++i) d_raw[i] = d_density[i] * sigmoid_f(raw[i]);

    for (int l = static_cast<int>(L) - 1; l >= 0; --l) {
        const Dense& d = net.mlp.layers[l];
        if (grads)
            k.dense_batch_wgrad(adj.data(), cache.x[l].data(), grads->dw[l].data(),
                                grads->db[l].data(), d.out, d.in, n);
        std::vector<float> dprev(static_cast<std::size_t>(d.in) * n);
        k.dense_batch_bwd(d.w.data(), adj.data(), dprev.data(), d.out, d.in, n);
        if (l > 0) {
            const std::vector<float>& s_prev = cache.s[l - 1];
            if (net.mlp.hidden == Act::kLeakyRelu) {
                k.leaky_relu_bwd(s_prev.data(), dprev.data(), dprev.data(), kLeakSlopeF,
                                 dprev.size());
            } else if (net.mlp.hidden == Act::kSoftplus) {
                for (std::size_t i = 0; i < dprev.size(); ++i)
                    dprev[i] *= sigmoid_f(s_prev[i]);
            }
        }
        adj = std::move(dprev);
    }
    std::memcpy(dx, adj.data(), static_cast<std::size_t>(net.c_in) * n * sizeof(float));
}

void decoder_jvp_batch(const DecoderNet& net, const DecoderBatchCache& cache, const float* tx,
                       float* t_features, float* t_density) {
    net.validate();
    if (cache.s.size() != net.mlp.layers.size())
        throw ValidationError("decoder_jvp_batch: cache mismatch");
    const auto& k = kern::ops();
    const std::size_t n = cache.n;

    std::vector<float> tan(tx, tx + static_cast<std::size_t>(net.c_in) * n);
    for (std::size_t l = 0; l < net.mlp.layers.size(); ++l) {
        const Dense& d = net.mlp.layers[l];
        std::vector<float> ts(static_cast<std::size_t>(d.out) * n);
        k.dense_batch(d.w.data(), nullptr, tan.data(), ts.data(), d.out, d.in, n);
        if (l + 1 < net.mlp.layers.size()) {
            const std::vector<float>& s = cache.s[l];
            if (net.mlp.hidden == Act::kLeakyRelu) {
                k.leaky_relu_bwd(s.data(), ts.data(), ts.data(), kLeakSlopeF, ts.size());
            } else if (net.mlp.hidden == Act::kSoftplus) {
                for (std::size_t i = 0; i < ts.size(); ++i) ts[i] *= sigmoid_f(s[i]);
            }
        }
        tan = std::move(ts);
    }

    std::memcpy(t_features, tan.data(), static_cast<std::size_t>(net.c_f) * n * sizeof(float));
    const float* raw = cache.s.back().data() + static_cast<std::size_t>(net.c_f) * n;
    const float* t_raw = tan.data() + static_cast<std::size_t>(net.c_f) * n;
    for (std::size_t i = 0; i < n; ++i) t_density[i] = t_raw[i] * sigmoid_f(raw[i]);
}

nlohmann::json decoder_manifest(const DecoderNet& net) {
    net.validate();
    nlohmann::json j;
    j["c_in"] = net.c_in;
    j["c_f"] = net.c_f;
    j["mlp"] = mlp_manifest(net.mlp);
    return j;
}

void save_decoder_tensors(const std::string& dir, const std::string& prefix,
                          const DecoderNet& net) {
    save_mlp_tensors(dir, prefix, net.mlp);
}

DecoderNet load_decoder(const std::string& dir, const std::string& prefix,
                        const nlohmann::json& manifest) {
    if (!manifest.contains("c_in") || !manifest.contains("c_f") || !manifest.contains("mlp"))
        throw FormatError("load_decoder: manifest missing c_in/c_f/mlp");
    DecoderNet net;
    net.c_in = manifest.at("c_in").get<int>();
    net.c_f = manifest.at("c_f").get<int>();
    net.mlp = load_mlp(dir, prefix, manifest.at("mlp"));
    net.validate();
    return net;
}

}  // namespace trideform
