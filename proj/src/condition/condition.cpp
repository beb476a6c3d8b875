#include "trideform/condition/condition.hpp"

#include <cmath>

#include "trideform/core/error.hpp"
#include "trideform/core/tensor.hpp"

namespace trideform {

void Embedding::validate() const {
    if (values.empty()) throw ValidationError("Embedding: empty");
    if (normalized) {
        double s = 0;
        for (float v : values) s += static_cast<double>(v) * v;
        if (std::abs(std::sqrt(s) - 1.0) > 1e-5)
            throw ValidationError("Embedding: marked normalized but norm is off by > 1e-5");
    }
}

Embedding normalize_embedding(std::vector<float> values) {
    double s = 0;
    for (float v : values) s += static_cast<double>(v) * v;
    const double n = std::sqrt(s);
    if (!(n > 0)) throw DegenerateInputError("normalize_embedding: zero or non-finite norm");
    for (float& v : values) v = static_cast<float>(v / n);
    return Embedding{std::move(values), true};
}

void AlignmentNet::validate() const {
    if (d_in <= 0 || d_out <= 0 || width <= 0)
        throw ValidationError("AlignmentNet: dims must be positive");
    if (layers.size() != 6) throw ValidationError("AlignmentNet: expected 6 dense layers");
    const int want_in[6] = {d_in, width, width, width, width, width};
    const int want_out[6] = {width, width, width, width, width, d_out};
    for (int l = 0; l < 6; ++l) {
        const Dense& d = layers[l];
        if (d.in != want_in[l] || d.out != want_out[l])
            throw ValidationError("AlignmentNet: layer dims inconsistent");
        if (d.w.size() != static_cast<std::size_t>(d.in) * d.out ||
            d.b.size() != static_cast<std::size_t>(d.out))
            throw ValidationError("AlignmentNet: parameter sizes inconsistent");
    }
}

AlignmentNet make_alignment_net(int d_in, int d_out, RngStream& rng, int width) {
    AlignmentNet net;
    net.d_in = d_in;
    net.d_out = d_out;
    net.width = width;
    net.layers.push_back(make_dense(d_in, width));
    for (int k = 0; k < 4; ++k) net.layers.push_back(make_dense(width, width));
    net.layers.push_back(make_dense(width, d_out));
    for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) he_init(net.layers[l], rng);
    zero_init(net);
    return net;
}

void zero_init(AlignmentNet& net) {
    net.validate();
    zero_fill(net.layers.back());
    net.zero_marker = true;
}

namespace {
constexpr double kLeak = 0.2;
inline double lrelu(double s) { return s > 0 ? s : kLeak * s; }
inline double lrelu_d(double s) { return s > 0 ? 1.0 : kLeak; }

void add_grads(const Dense& d, std::span<const double> adj, std::span<const double> x,
               std::vector<float>& dw, std::vector<float>& db) {
    for (int o = 0; o < d.out; ++o) {
        float* row = dw.data() + static_cast<std::size_t>(o) * d.in;
        for (int i = 0; i < d.in; ++i) row[i] += static_cast<float>(adj[o] * x[i]);
        db[o] += static_cast<float>(adj[o]);
    }
}
}  // namespace

std::vector<float> align_forward(const AlignmentNet& net, const std::vector<float>& x,
                                 AlignCache* cache) {
    net.validate();
    if (static_cast<int>(x.size()) != net.d_in)
        throw ValidationError("align_forward: input dim mismatch");

    std::vector<double> xd(x.begin(), x.end());
    std::vector<double> s_in = dense_apply(net.layers[0], xd);
    std::vector<double> h(s_in.size());
    for (std::size_t i = 0; i < h.size(); ++i) h[i] = lrelu(s_in[i]);
    if (cache) {
        cache->x = xd;
        cache->s_in = s_in;
        cache->h0 = h;
    }
    for (int k = 0; k < 2; ++k) {
        std::vector<double> s_a = dense_apply(net.layers[1 + 2 * k], h);
        std::vector<double> u(s_a.size());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = lrelu(s_a[i]);
        std::vector<double> t = dense_apply(net.layers[2 + 2 * k], u);
        if (cache) {
            cache->block_in[k] = h;
            cache->s_a[k] = std::move(s_a);
            cache->u[k] = u;
        }
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += t[i];
    }
    if (cache) cache->h_final = h;
    std::vector<double> out = dense_apply(net.layers[5], h);
    return {out.begin(), out.end()};
}

std::vector<float> align_backward(const AlignmentNet& net, const AlignCache& cache,
                                  const std::vector<float>& d_out, MlpGrads* grads) {
    if (static_cast<int>(d_out.size()) != net.d_out)
        throw ValidationError("align_backward: adjoint dim mismatch");
    if (grads && grads->dw.size() != net.layers.size())
        throw ValidationError("align_backward: grads not sized for this net");

    std::vector<double> adj(d_out.begin(), d_out.end());
    if (grads) add_grads(net.layers[5], adj, cache.h_final, grads->dw[5], grads->db[5]);
    std::vector<double> d_h = dense_transpose_apply(net.layers[5], adj);

    for (int k = 1; k >= 0; --k) {
        // h_out = h_in + Wb lrelu(Wa h_in + ba) + bb; d_h is the adjoint of
        // h_out and flows unchanged through the skip.
        std::vector<double> d_u = dense_transpose_apply(net.layers[2 + 2 * k], d_h);
        if (grads) add_grads(net.layers[2 + 2 * k], d_h, cache.u[k], grads->dw[2 + 2 * k],
                             grads->db[2 + 2 * k]);
        for (std::size_t i = 0; i < d_u.size(); ++i) d_u[i] *= lrelu_d(cache.s_a[k][i]);
        if (grads) add_grads(net.layers[1 + 2 * k], d_u, cache.block_in[k],
                             grads->dw[1 + 2 * k], grads->db[1 + 2 * k]);
        std::vector<double> d_skip = dense_transpose_apply(net.layers[1 + 2 * k], d_u);
        for (std::size_t i = 0; i < d_h.size(); ++i) d_h[i] += d_skip[i];
    }

    for (std::size_t i = 0; i < d_h.size(); ++i) d_h[i] *= lrelu_d(cache.s_in[i]);
    if (grads) add_grads(net.layers[0], d_h, cache.x, grads->dw[0], grads->db[0]);
    std::vector<double> d_x = dense_transpose_apply(net.layers[0], d_h);
    return {d_x.begin(), d_x.end()};
}

std::size_t align_param_count(const AlignmentNet& net) {
    std::size_t n = 0;
    for (const Dense& d : net.layers) n += d.w.size() + d.b.size();
    return n;
}

nlohmann::json alignment_manifest(const AlignmentNet& net) {
    net.validate();
    return {{"d_in", net.d_in},
            {"d_out", net.d_out},
            {"width", net.width},
            {"zero_init", net.zero_marker}};
}

void save_alignment(const std::string& dir, const std::string& prefix, const AlignmentNet& net) {
    net.validate();
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const Dense& d = net.layers[l];
        write_tensor(dir + "/" + prefix + "_w" + std::to_string(l) + ".ntc",
                     TensorBlob({d.out, d.in}, d.w));
        write_tensor(dir + "/" + prefix + "_b" + std::to_string(l) + ".ntc",
                     TensorBlob({d.out}, d.b));
    }
}

AlignmentNet load_alignment(const std::string& dir, const std::string& prefix,
                            const nlohmann::json& manifest) {
    for (const char* key : {"d_in", "d_out", "width", "zero_init"})
        if (!manifest.contains(key))
            throw FormatError("load_alignment: manifest missing " + std::string(key));
    AlignmentNet net;
    net.d_in = manifest.at("d_in").get<int>();
    net.d_out = manifest.at("d_out").get<int>();
    net.width = manifest.at("width").get<int>();
    net.zero_marker = manifest.at("zero_init").get<bool>();
    const int want_in[6] = {net.d_in, net.width, net.width, net.width, net.width, net.width};
    const int want_out[6] = {net.width, net.width, net.width, net.width, net.width, net.d_out};
    for (int l = 0; l < 6; ++l) {
        const TensorBlob w = read_tensor(dir + "/" + prefix + "_w" + std::to_string(l) + ".ntc");
        const TensorBlob b = read_tensor(dir + "/" + prefix + "_b" + std::to_string(l) + ".ntc");
        if (w.shape != std::vector<int64_t>{want_out[l], want_in[l]} ||
            b.shape != std::vector<int64_t>{want_out[l]})
            throw CorruptionError("load_alignment: tensor shape disagrees with manifest");
        Dense d = make_dense(want_in[l], want_out[l]);
        d.w = w.data;
        d.b = b.data;
        net.layers.push_back(std::move(d));
    }
    net.validate();
    return net;
}

MappingNet make_mapping_net(int d_z, int d_w, RngStream& rng) {
    return make_mlp({d_z, 64, 64, d_w}, Act::kLeakyRelu, rng);
}

StyleVector map_latent(const MappingNet& m, const LatentVector& z) {
    if (static_cast<int>(z.size()) != m.in_dim())
        throw ValidationError("map_latent: latent dim mismatch");
    return mlp_forward_f(m, z);
}

namespace {
std::vector<float> concat(const std::vector<float>& a, const std::vector<float>& b) {
    std::vector<float> x;
    x.reserve(a.size() + b.size());
    x.insert(x.end(), a.begin(), a.end());
    x.insert(x.end(), b.begin(), b.end());
    return x;
}
}  // namespace

StyleVector align_style(const StyleVector& w, const Embedding& r, float alpha,
                        const AlignmentNet& t_g) {
    return align_style(w, r, alpha, t_g, nullptr);
}

StyleVector align_style(const StyleVector& w, const Embedding& r, float alpha,
                        const AlignmentNet& t_g, AlignCache* cache) {
    if (!(alpha >= 0.0f && alpha <= 1.0f))
        throw ValidationError("align_style: alpha must lie in [0,1]");
    if (static_cast<int>(w.size()) != t_g.d_out ||
        static_cast<int>(w.size() + r.values.size()) != t_g.d_in)
        throw ValidationError("align_style: dimension mismatch");
    if (alpha == 0.0f) return w;  // unconditional path, bit-identical by construction
    const std::vector<float> d = align_forward(t_g, concat(w, r.values), cache);
    StyleVector out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const float step = alpha * d[i];
        // Adding an exact zero would still flip the sign of -0.0f; skip it so
        // a zero-init net leaves w bit-identical at every alpha.
        out[i] = step == 0.0f ? w[i] : w[i] + step;
    }
    return out;
}

double discriminate(const std::vector<float>& u, const std::vector<float>& v, const Embedding& r,
                    float alpha, const AlignmentNet& t_d) {
    if (!(alpha >= 0.0f && alpha <= 1.0f))
        throw ValidationError("discriminate: alpha must lie in [0,1]");
    if (u.size() != v.size()) throw ValidationError("discriminate: u/v dimension mismatch");
    if (static_cast<int>(v.size()) != t_d.d_out ||
        static_cast<int>(v.size() + r.values.size()) != t_d.d_in)
        throw ValidationError("discriminate: dimension mismatch");
    std::vector<float> d;
    if (alpha != 0.0f) d = align_forward(t_d, concat(v, r.values));
    double acc = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double vr = static_cast<double>(v[i]) +
                          (d.empty() ? 0.0 : static_cast<double>(alpha) * d[i]);
        acc += static_cast<double>(u[i]) * vr;
    }
    return acc;
}

StyleVector edit_style(const StyleVector& w, const AlignmentNet& e_t, float alpha) {
    if (!(alpha >= 0.0f && alpha <= 1.0f))
        throw ValidationError("edit_style: alpha must lie in [0,1]");
    if (static_cast<int>(w.size()) != e_t.d_out || static_cast<int>(w.size()) != e_t.d_in)
        throw ValidationError("edit_style: dimension mismatch");
    if (alpha == 0.0f) return w;
    const std::vector<float> d = align_forward(e_t, w);
    StyleVector out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const float step = alpha * d[i];
        out[i] = step == 0.0f ? w[i] : w[i] + step;
    }
    return out;
}

}  // namespace trideform
