#include "trideform/train/discrim.hpp"

#include <cmath>
#include <filesystem>

#include "trideform/core/error.hpp"
#include "trideform/core/json_util.hpp"
#include "trideform/core/kernels.hpp"
#include "trideform/core/tensor.hpp"

namespace trideform {

namespace {

constexpr float kSlope = 0.2f;

ConvLayer make_conv_layer(int c_in, int c_out, int h_in, int w_in, RngStream& rng) {
    ConvLayer l;
    l.c_in = c_in;
    l.c_out = c_out;
    l.h_in = h_in;
    l.w_in = w_in;
    l.h_out = (h_in - 1) / 2 + 1;
    l.w_out = (w_in - 1) / 2 + 1;
    l.k = make_dense(c_in * 9, c_out);
    he_init(l.k, rng);
    const int n_out = l.h_out * l.w_out;
    l.idx.assign(9 * static_cast<std::size_t>(n_out), -1);
    for (int oy = 0; oy < l.h_out; ++oy) {
        for (int ox = 0; ox < l.w_out; ++ox) {
            const int j = oy * l.w_out + ox;
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const int iy = oy * 2 - 1 + ky;
                    const int ix = ox * 2 - 1 + kx;
                    if (iy < 0 || iy >= h_in || ix < 0 || ix >= w_in) continue;
                    l.idx[static_cast<std::size_t>(ky * 3 + kx) * n_out + j] = iy * w_in + ix;
                }
            }
        }
    }
    return l;
}

void gather_cols(const ConvLayer& l, const float* x, float* cols) {
    const std::size_t n_out = static_cast<std::size_t>(l.h_out) * l.w_out;
    const std::size_t hw_in = static_cast<std::size_t>(l.h_in) * l.w_in;
    for (int ci = 0; ci < l.c_in; ++ci) {
        const float* src = x + ci * hw_in;
        for (int kk = 0; kk < 9; ++kk) {
            const int* map = l.idx.data() + kk * n_out;
            float* dst = cols + (static_cast<std::size_t>(ci) * 9 + kk) * n_out;
            for (std::size_t j = 0; j < n_out; ++j) dst[j] = map[j] >= 0 ? src[map[j]] : 0.0f;
        }
    }
}

void scatter_cols(const ConvLayer& l, const float* d_cols, float* d_x) {
    const std::size_t n_out = static_cast<std::size_t>(l.h_out) * l.w_out;
    const std::size_t hw_in = static_cast<std::size_t>(l.h_in) * l.w_in;
    for (int ci = 0; ci < l.c_in; ++ci) {
        float* dst = d_x + ci * hw_in;
        for (int kk = 0; kk < 9; ++kk) {
            const int* map = l.idx.data() + kk * n_out;
            const float* src = d_cols + (static_cast<std::size_t>(ci) * 9 + kk) * n_out;
            for (std::size_t j = 0; j < n_out; ++j)
                if (map[j] >= 0) dst[map[j]] += src[j];
        }
    }
}

}  // namespace

void ConvStem::validate() const {
    if (in_ch < 1 || res < 1 || d_v < 1) throw ValidationError("ConvStem: bad dimensions");
    int h = res, c = in_ch;
    for (const ConvLayer& l : convs) {
        if (l.c_in != c || l.h_in != h || l.w_in != h)
            throw ValidationError("ConvStem: conv layer shape chain broken");
        if (l.k.in != l.c_in * 9 || l.k.out != l.c_out)
            throw ValidationError("ConvStem: conv kernel shape mismatch");
        if (l.idx.size() != static_cast<std::size_t>(9) * l.h_out * l.w_out)
            throw ValidationError("ConvStem: conv index map size mismatch");
        h = l.h_out;
        c = l.c_out;
    }
    if (head.in != c * h * h || head.out != d_v)
        throw ValidationError("ConvStem: head dimensions do not match the conv stack");
}

ConvStem make_conv_stem(int res, int in_ch, int d_v, const std::vector<int>& widths,
                        RngStream& rng) {
    if (res < 1 || in_ch < 1 || d_v < 1) throw ValidationError("make_conv_stem: bad dimensions");
    ConvStem st;
    st.in_ch = in_ch;
    st.res = res;
    st.d_v = d_v;
    int h = res, c = in_ch;
    for (int w : widths) {
        if (w < 1) throw ValidationError("make_conv_stem: conv width must be positive");
        st.convs.push_back(make_conv_layer(c, w, h, h, rng));
        h = st.convs.back().h_out;
        c = w;
    }
    st.head = make_dense(c * h * h, d_v);
    he_init(st.head, rng);
    st.validate();
    return st;
}

void StemGrads::init(const ConvStem& st) {
    std::vector<Dense> shapes;
    for (const ConvLayer& l : st.convs) shapes.push_back(make_dense(l.k.in, l.k.out));
    shapes.push_back(make_dense(st.head.in, st.head.out));
    g.init(shapes);
}

std::vector<float> stem_forward(const ConvStem& st, const float* x, StemCache* cache) {
    const kern::Ops& k = kern::ops();
    StemCache local;
    StemCache& c = cache ? *cache : local;
    c.x.assign(st.convs.size() + 1, {});
    c.cols.assign(st.convs.size(), {});
    c.s.assign(st.convs.size(), {});
    c.x[0].assign(x, x + static_cast<std::size_t>(st.in_ch) * st.res * st.res);
    for (std::size_t li = 0; li < st.convs.size(); ++li) {
        const ConvLayer& l = st.convs[li];
        const std::size_t n_out = static_cast<std::size_t>(l.h_out) * l.w_out;
        c.cols[li].resize(static_cast<std::size_t>(l.c_in) * 9 * n_out);
        gather_cols(l, c.x[li].data(), c.cols[li].data());
        c.s[li].resize(static_cast<std::size_t>(l.c_out) * n_out);
        k.dense_batch(l.k.w.data(), l.k.b.data(), c.cols[li].data(), c.s[li].data(), l.c_out,
                      l.k.in, n_out);
        c.x[li + 1].resize(c.s[li].size());
        k.leaky_relu(c.s[li].data(), c.x[li + 1].data(), kSlope, c.s[li].size());
    }
    std::vector<float> u(st.d_v);
    k.gemv(st.head.w.data(), c.x.back().data(), st.head.b.data(), u.data(), st.d_v, st.head.in);
    return u;
}

std::vector<float> stem_backward(const ConvStem& st, const StemCache& cache,
                                 std::span<const float> d_u, StemGrads* grads) {
    if (static_cast<int>(d_u.size()) != st.d_v)
        throw ValidationError("stem_backward: adjoint dim mismatch");
    const kern::Ops& k = kern::ops();
    const int n_convs = static_cast<int>(st.convs.size());
    if (grads) {
        k.ger_acc(d_u.data(), cache.x.back().data(), grads->g.dw[n_convs].data(), st.d_v,
                  st.head.in);
        k.axpy(1.0f, d_u.data(), grads->g.db[n_convs].data(), st.d_v);
    }
    std::vector<float> d_x(st.head.in);
    k.gemv_t(st.head.w.data(), d_u.data(), d_x.data(), st.d_v, st.head.in);
    for (int li = n_convs - 1; li >= 0; --li) {
        const ConvLayer& l = st.convs[li];
        const std::size_t n_out = static_cast<std::size_t>(l.h_out) * l.w_out;
        std::vector<float> d_s(d_x.size());
        k.leaky_relu_bwd(cache.s[li].data(), d_x.data(), d_s.data(), kSlope, d_s.size());
        if (grads)
            k.dense_batch_wgrad(d_s.data(), cache.cols[li].data(), grads->g.dw[li].data(),
                                grads->g.db[li].data(), l.c_out, l.k.in, n_out);
        std::vector<float> d_cols(static_cast<std::size_t>(l.k.in) * n_out);
        k.dense_batch_bwd(l.k.w.data(), d_s.data(), d_cols.data(), l.c_out, l.k.in, n_out);
        d_x.assign(static_cast<std::size_t>(l.c_in) * l.h_in * l.w_in, 0.0f);
        scatter_cols(l, d_cols.data(), d_x.data());
    }
    return d_x;
}

std::vector<float> stem_jvp(const ConvStem& st, const StemCache& cache, const float* tx,
                            StemJvpCache* jc) {
    const kern::Ops& k = kern::ops();
    StemJvpCache local;
    StemJvpCache& j = jc ? *jc : local;
    j.t_x.assign(st.convs.size() + 1, {});
    j.t_cols.assign(st.convs.size(), {});
    j.t_x[0].assign(tx, tx + static_cast<std::size_t>(st.in_ch) * st.res * st.res);
    for (std::size_t li = 0; li < st.convs.size(); ++li) {
        const ConvLayer& l = st.convs[li];
        const std::size_t n_out = static_cast<std::size_t>(l.h_out) * l.w_out;
        j.t_cols[li].resize(static_cast<std::size_t>(l.k.in) * n_out);
        gather_cols(l, j.t_x[li].data(), j.t_cols[li].data());
        std::vector<float> t_s(static_cast<std::size_t>(l.c_out) * n_out);
        k.dense_batch(l.k.w.data(), nullptr, j.t_cols[li].data(), t_s.data(), l.c_out, l.k.in,
                      n_out);
        j.t_x[li + 1].resize(t_s.size());
        // The tangent passes through the activation mask of the cached primal.
        k.leaky_relu_bwd(cache.s[li].data(), t_s.data(), j.t_x[li + 1].data(), kSlope,
                         t_s.size());
    }
    std::vector<float> t_u(st.d_v);
    k.gemv(st.head.w.data(), j.t_x.back().data(), nullptr, t_u.data(), st.d_v, st.head.in);
    return t_u;
}

std::vector<float> stem_jvp_backward(const ConvStem& st, const StemCache& cache,
                                     const StemJvpCache& jc, std::span<const float> d_tu,
                                     StemGrads* grads) {
    if (static_cast<int>(d_tu.size()) != st.d_v)
        throw ValidationError("stem_jvp_backward: adjoint dim mismatch");
    const kern::Ops& k = kern::ops();
    const int n_convs = static_cast<int>(st.convs.size());
    if (grads)
        k.ger_acc(d_tu.data(), jc.t_x.back().data(), grads->g.dw[n_convs].data(), st.d_v,
                  st.head.in);
    std::vector<float> d_tx(st.head.in);
    k.gemv_t(st.head.w.data(), d_tu.data(), d_tx.data(), st.d_v, st.head.in);
    for (int li = n_convs - 1; li >= 0; --li) {
        const ConvLayer& l = st.convs[li];
        const std::size_t n_out = static_cast<std::size_t>(l.h_out) * l.w_out;
        std::vector<float> d_ts(d_tx.size());
        k.leaky_relu_bwd(cache.s[li].data(), d_tx.data(), d_ts.data(), kSlope, d_ts.size());
        if (grads)
            k.dense_batch_wgrad(d_ts.data(), jc.t_cols[li].data(), grads->g.dw[li].data(),
                                nullptr, l.c_out, l.k.in, n_out);
        std::vector<float> d_cols(static_cast<std::size_t>(l.k.in) * n_out);
        k.dense_batch_bwd(l.k.w.data(), d_ts.data(), d_cols.data(), l.c_out, l.k.in, n_out);
        d_tx.assign(static_cast<std::size_t>(l.c_in) * l.h_in * l.w_in, 0.0f);
        scatter_cols(l, d_cols.data(), d_tx.data());
    }
    return d_tx;
}

void DiscriminatorBundle::validate() const {
    s_d.validate();
    m_d.validate();
    t_d.validate();
    if (m_d.in_dim() != 12)
        throw ValidationError("DiscriminatorBundle: camera mapping must take a 12-dim code");
    if (m_d.out_dim() != s_d.d_v)
        throw ValidationError("DiscriminatorBundle: u and v dimensions must be equal");
    if (t_d.d_out != s_d.d_v || t_d.d_in <= t_d.d_out)
        throw ValidationError("DiscriminatorBundle: T_D dims must be (d_v + d_r) -> d_v");
}

DiscriminatorBundle make_discriminator(int res, int d_v, int d_r, RngStream& rng) {
    if (d_r <= 0) throw ValidationError("make_discriminator: d_r must be positive");
    DiscriminatorBundle d;
    d.s_d = make_conv_stem(res, 6, d_v, {16, 32, 64}, rng);
    d.m_d = make_mlp({12, 64, d_v}, Act::kLeakyRelu, rng);
    d.t_d = make_alignment_net(d_v + d_r, d_v, rng);
    d.validate();
    return d;
}

std::vector<float> camera_code(const Camera& cam) {
    std::vector<float> code(12);
    for (int i = 0; i < 9; ++i) code[i] = cam.R.m[i];
    code[9] = cam.t.x;
    code[10] = cam.t.y;
    code[11] = cam.t.z;
    return code;
}

double discriminate_image(const DiscriminatorBundle& d, const float* x, const Camera& cam,
                          const Embedding& r, float alpha) {
    const std::vector<float> u = stem_forward(d.s_d, x, nullptr);
    const std::vector<float> v = mlp_forward_f(d.m_d, camera_code(cam));
    return discriminate(u, v, r, alpha, d.t_d);
}

void save_discriminator(const std::string& dir, const DiscriminatorBundle& d) {
    d.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json widths = nlohmann::json::array();
    for (std::size_t i = 0; i < d.s_d.convs.size(); ++i) {
        const ConvLayer& l = d.s_d.convs[i];
        widths.push_back(l.c_out);
        const std::string base = dir + "/conv" + std::to_string(i);
        write_tensor(base + "_w.ntc", TensorBlob({l.k.out, l.k.in}, l.k.w));
        write_tensor(base + "_b.ntc", TensorBlob({l.k.out}, l.k.b));
    }
    write_tensor(dir + "/head_w.ntc", TensorBlob({d.s_d.head.out, d.s_d.head.in}, d.s_d.head.w));
    write_tensor(dir + "/head_b.ntc", TensorBlob({d.s_d.head.out}, d.s_d.head.b));
    save_mlp_tensors(dir, "md", d.m_d);
    save_alignment(dir, "td", d.t_d);
    nlohmann::json man;
    man["kind"] = "discriminator";
    man["res"] = d.s_d.res;
    man["in_ch"] = d.s_d.in_ch;
    man["d_v"] = d.s_d.d_v;
    man["widths"] = widths;
    man["m_d"] = mlp_manifest(d.m_d);
    man["t_d"] = alignment_manifest(d.t_d);
    save_json_file(dir + "/manifest.json", man);
}

DiscriminatorBundle load_discriminator(const std::string& dir) {
    const nlohmann::json man = load_json_file(dir + "/manifest.json");
    if (get_req<std::string>(man, "discriminator manifest", "kind") != "discriminator")
        throw FormatError("load_discriminator: manifest kind is not 'discriminator'");
    check_keys(man, "discriminator manifest", {"kind", "res", "in_ch", "d_v", "widths", "m_d",
                                               "t_d"});
    DiscriminatorBundle d;
    ConvStem& st = d.s_d;
    st.res = get_req<int>(man, "discriminator manifest", "res");
    st.in_ch = get_req<int>(man, "discriminator manifest", "in_ch");
    st.d_v = get_req<int>(man, "discriminator manifest", "d_v");
    const auto widths = get_req<std::vector<int>>(man, "discriminator manifest", "widths");
    RngStream dummy(0, 0);
    int h = st.res, c = st.in_ch;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        ConvLayer l = make_conv_layer(c, widths[i], h, h, dummy);
        const std::string base = dir + "/conv" + std::to_string(i);
        const TensorBlob w = read_tensor(base + "_w.ntc");
        const TensorBlob b = read_tensor(base + "_b.ntc");
        if (w.shape != std::vector<int64_t>{l.k.out, l.k.in} ||
            b.shape != std::vector<int64_t>{l.k.out})
            throw CorruptionError("load_discriminator: conv tensor shape disagrees with manifest");
        l.k.w = w.data;
        l.k.b = b.data;
        st.convs.push_back(std::move(l));
        h = st.convs.back().h_out;
        c = widths[i];
    }
    const TensorBlob hw = read_tensor(dir + "/head_w.ntc");
    const TensorBlob hb = read_tensor(dir + "/head_b.ntc");
    if (hw.shape != std::vector<int64_t>{st.d_v, c * h * h} ||
        hb.shape != std::vector<int64_t>{st.d_v})
        throw CorruptionError("load_discriminator: head tensor shape disagrees with manifest");
    st.head = make_dense(c * h * h, st.d_v);
    st.head.w = hw.data;
    st.head.b = hb.data;
    d.m_d = load_mlp(dir, "md", man.at("m_d"));
    d.t_d = load_alignment(dir, "td", man.at("t_d"));
    d.validate();
    return d;
}

}  // namespace trideform
