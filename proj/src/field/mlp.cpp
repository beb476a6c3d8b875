#include "trideform/field/mlp.hpp"

#include <cmath>

#include "trideform/core/error.hpp"
#include "trideform/core/tensor.hpp"

namespace trideform {

const char* act_name(Act a) {
    switch (a) {
        case Act::kLinear: return "linear";
        case Act::kLeakyRelu: return "lrelu";
        case Act::kSoftplus: return "softplus";
    }
    return "?";
}

Act act_from_name(const std::string& name) {
    if (name == "linear") return Act::kLinear;
    if (name == "lrelu") return Act::kLeakyRelu;
    if (name == "softplus") return Act::kSoftplus;
    throw ValidationError("unknown activation tag: " + name);
}

namespace {
constexpr double kLeakSlope = 0.2;
}

double act_value(Act a, double s) {
    switch (a) {
        case Act::kLinear: return s;
        case Act::kLeakyRelu: return s > 0 ? s : kLeakSlope * s;
        case Act::kSoftplus: return s > 20 ? s : std::log1p(std::exp(s));
    }
    return s;
}

double act_deriv(Act a, double s) {
    switch (a) {
        case Act::kLinear: return 1.0;
        case Act::kLeakyRelu: return s > 0 ? 1.0 : kLeakSlope;
        case Act::kSoftplus: return 1.0 / (1.0 + std::exp(-s));
    }
    return 1.0;
}

Dense make_dense(int in, int out) {
    if (in <= 0 || out <= 0) throw ValidationError("make_dense: dims must be positive");
    Dense d;
    d.in = in;
    d.out = out;
    d.w.assign(static_cast<std::size_t>(in) * out, 0.0f);
    d.b.assign(out, 0.0f);
    return d;
}

void he_init(Dense& d, RngStream& rng) {
    const float scale = std::sqrt(2.0f / static_cast<float>(d.in));
    auto v = gaussian(rng, d.w.size());
    for (std::size_t i = 0; i < d.w.size(); ++i) d.w[i] = scale * v[i];
    std::fill(d.b.begin(), d.b.end(), 0.0f);
}

void zero_fill(Dense& d) {
    std::fill(d.w.begin(), d.w.end(), 0.0f);
    std::fill(d.b.begin(), d.b.end(), 0.0f);
}

void Mlp::validate() const {
    if (layers.empty()) throw ValidationError("Mlp: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Dense& d = layers[i];
        if (d.w.size() != static_cast<std::size_t>(d.in) * d.out ||
            d.b.size() != static_cast<std::size_t>(d.out))
            throw ValidationError("Mlp: layer parameter sizes inconsistent");
        if (i > 0 && layers[i - 1].out != d.in)
            throw ValidationError("Mlp: consecutive layer dims do not chain");
    }
}

Mlp make_mlp(const std::vector<int>& dims, Act hidden, RngStream& rng) {
    if (dims.size() < 2) throw ValidationError("make_mlp: need at least in/out dims");
    Mlp m;
    m.hidden = hidden;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Dense d = make_dense(dims[i], dims[i + 1]);
        he_init(d, rng);
        m.layers.push_back(std::move(d));
    }
    return m;
}

std::size_t param_count(const Mlp& m) {
    std::size_t n = 0;
    for (const Dense& d : m.layers) n += d.w.size() + d.b.size();
    return n;
}

void MlpGrads::init(const Mlp& m) { init(m.layers); }

void MlpGrads::init(const std::vector<Dense>& layers) {
    dw.clear();
    db.clear();
    for (const Dense& d : layers) {
        dw.emplace_back(d.w.size(), 0.0f);
        db.emplace_back(d.b.size(), 0.0f);
    }
}

void MlpGrads::zero() {
    for (auto& v : dw) std::fill(v.begin(), v.end(), 0.0f);
    for (auto& v : db) std::fill(v.begin(), v.end(), 0.0f);
}

std::vector<double> dense_apply(const Dense& d, std::span<const double> x) {
    std::vector<double> s(d.out);
    for (int o = 0; o < d.out; ++o) {
        double acc = d.b[o];
        const float* row = d.w.data() + static_cast<std::size_t>(o) * d.in;
        for (int i = 0; i < d.in; ++i) acc += static_cast<double>(row[i]) * x[i];
        s[o] = acc;
    }
    return s;
}

std::vector<double> dense_apply_linear(const Dense& d, std::span<const double> x) {
    std::vector<double> s(d.out);
    for (int o = 0; o < d.out; ++o) {
        double acc = 0.0;
        const float* row = d.w.data() + static_cast<std::size_t>(o) * d.in;
        for (int i = 0; i < d.in; ++i) acc += static_cast<double>(row[i]) * x[i];
        s[o] = acc;
    }
    return s;
}

std::vector<double> dense_transpose_apply(const Dense& d, std::span<const double> u) {
    std::vector<double> out(d.in, 0.0);
    for (int o = 0; o < d.out; ++o) {
        const float* row = d.w.data() + static_cast<std::size_t>(o) * d.in;
        for (int i = 0; i < d.in; ++i) out[i] += static_cast<double>(row[i]) * u[o];
    }
    return out;
}

std::vector<double> mlp_forward(const Mlp& m, std::span<const double> x, MlpCache* cache) {
    m.validate();
    if (static_cast<int>(x.size()) != m.in_dim())
        throw ValidationError("mlp_forward: input dim mismatch");
    if (cache) {
        cache->x.clear();
        cache->s.clear();
    }
    std::vector<double> cur(x.begin(), x.end());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        if (cache) cache->x.push_back(cur);
        std::vector<double> s = dense_apply(m.layers[l], cur);
        if (cache) cache->s.push_back(s);
        if (l + 1 < m.layers.size())
            for (double& v : s) v = act_value(m.hidden, v);
        cur = std::move(s);
    }
    return cur;
}

std::vector<double> mlp_backward(const Mlp& m, const MlpCache& cache, std::span<const double> dy,
                                 MlpGrads* grads) {
    if (static_cast<int>(dy.size()) != m.out_dim())
        throw ValidationError("mlp_backward: adjoint dim mismatch");
    if (cache.x.size() != m.layers.size())
        throw ValidationError("mlp_backward: cache does not match net");

    std::vector<double> adj(dy.begin(), dy.end());
    for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
        const Dense& d = m.layers[l];
        // Through the activation (last layer is linear).
        if (l + 1 < static_cast<int>(m.layers.size()))
            for (int o = 0; o < d.out; ++o) adj[o] *= act_deriv(m.hidden, cache.s[l][o]);
        if (grads) {
            for (int o = 0; o < d.out; ++o) {
                float* dw = grads->dw[l].data() + static_cast<std::size_t>(o) * d.in;
                for (int i = 0; i < d.in; ++i)
                    dw[i] += static_cast<float>(adj[o] * cache.x[l][i]);
                grads->db[l][o] += static_cast<float>(adj[o]);
            }
        }
        adj = dense_transpose_apply(d, adj);
    }
    return adj;
}

std::vector<double> mlp_jvp(const Mlp& m, std::span<const double> x, std::span<const double> v,
                            MlpJvpCache* cache) {
    m.validate();
    if (x.size() != v.size() || static_cast<int>(x.size()) != m.in_dim())
        throw ValidationError("mlp_jvp: dim mismatch");
    if (cache) {
        cache->s.clear();
        cache->tx.clear();
    }
    std::vector<double> cur(x.begin(), x.end());
    std::vector<double> tan(v.begin(), v.end());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        if (cache) cache->tx.push_back(tan);
        std::vector<double> s = dense_apply(m.layers[l], cur);
        std::vector<double> ts = dense_apply_linear(m.layers[l], tan);
        if (cache) cache->s.push_back(s);
        if (l + 1 < m.layers.size()) {
            for (std::size_t o = 0; o < s.size(); ++o) {
                ts[o] *= act_deriv(m.hidden, s[o]);
                s[o] = act_value(m.hidden, s[o]);
            }
        }
        cur = std::move(s);
        tan = std::move(ts);
    }
    return tan;
}

std::vector<double> mlp_jvp_backward(const Mlp& m, const MlpJvpCache& cache,
                                     std::span<const double> d_tangent_out, MlpGrads* grads) {
    if (m.layers.size() > 1 && m.hidden == Act::kSoftplus)
        throw ValidationError("mlp_jvp_backward: needs a piecewise-linear hidden activation");
    if (static_cast<int>(d_tangent_out.size()) != m.out_dim())
        throw ValidationError("mlp_jvp_backward: adjoint dim mismatch");
    if (cache.s.size() != m.layers.size())
        throw ValidationError("mlp_jvp_backward: cache does not match net");

    std::vector<double> adj(d_tangent_out.begin(), d_tangent_out.end());
    for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
        const Dense& d = m.layers[l];
        if (l + 1 < static_cast<int>(m.layers.size()))
            for (int o = 0; o < d.out; ++o) adj[o] *= act_deriv(m.hidden, cache.s[l][o]);
        if (grads) {
            // Weight adjoint pairs with the *tangent* layer input; tangents
            // never see the bias, so db stays untouched.
            for (int o = 0; o < d.out; ++o) {
                float* dw = grads->dw[l].data() + static_cast<std::size_t>(o) * d.in;
                for (int i = 0; i < d.in; ++i)
                    dw[i] += static_cast<float>(adj[o] * cache.tx[l][i]);
            }
        }
        adj = dense_transpose_apply(d, adj);
    }
    return adj;
}

std::vector<float> mlp_forward_f(const Mlp& m, std::span<const float> x) {
    std::vector<double> xd(x.begin(), x.end());
    std::vector<double> y = mlp_forward(m, xd);
    return {y.begin(), y.end()};
}

nlohmann::json mlp_manifest(const Mlp& m) {
    m.validate();
    nlohmann::json j;
    j["hidden"] = act_name(m.hidden);
    nlohmann::json dims = nlohmann::json::array();
    dims.push_back(m.layers.front().in);
    for (const Dense& d : m.layers) dims.push_back(d.out);
    j["dims"] = dims;
    return j;
}

void save_mlp_tensors(const std::string& dir, const std::string& prefix, const Mlp& m) {
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const Dense& d = m.layers[l];
        write_tensor(dir + "/" + prefix + "_w" + std::to_string(l) + ".ntc",
                     TensorBlob({d.out, d.in}, d.w));
        write_tensor(dir + "/" + prefix + "_b" + std::to_string(l) + ".ntc",
                     TensorBlob({d.out}, d.b));
    }
}

Mlp load_mlp(const std::string& dir, const std::string& prefix, const nlohmann::json& manifest) {
    if (!manifest.contains("hidden") || !manifest.contains("dims"))
        throw FormatError("load_mlp: manifest missing hidden/dims for " + prefix);
    Mlp m;
    m.hidden = act_from_name(manifest.at("hidden").get<std::string>());
    const auto dims = manifest.at("dims").get<std::vector<int>>();
    if (dims.size() < 2) throw FormatError("load_mlp: bad dims for " + prefix);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const TensorBlob w = read_tensor(dir + "/" + prefix + "_w" + std::to_string(l) + ".ntc");
        const TensorBlob b = read_tensor(dir + "/" + prefix + "_b" + std::to_string(l) + ".ntc");
        if (w.shape != std::vector<int64_t>{dims[l + 1], dims[l]} ||
            b.shape != std::vector<int64_t>{dims[l + 1]})
            throw CorruptionError("load_mlp: tensor shape disagrees with manifest for " + prefix);
        Dense d = make_dense(dims[l], dims[l + 1]);
        d.w = w.data;
        d.b = b.data;
        m.layers.push_back(std::move(d));
    }
    m.validate();
    return m;
}

}  // namespace trideform
