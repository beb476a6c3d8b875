#include "trideform/train/bundles.hpp"

#include <filesystem>

#include "trideform/core/error.hpp"
#include "trideform/core/json_util.hpp"
#include "trideform/core/tensor.hpp"

namespace trideform {

void PlaneSpec::validate() const {
    if (res < 2 || channels < 1) throw ValidationError("PlaneSpec: res >= 2, channels >= 1");
    if (!(lo.x < hi.x && lo.y < hi.y && lo.z < hi.z))
        throw ValidationError("PlaneSpec: box must have positive extent");
}

void GeneratorBundle::validate() const {
    planes.validate();
    m_g.validate();
    decoder.validate();
    t_g.validate();
    if (s_g.in != d_w() || static_cast<std::size_t>(s_g.out) != planes.feature_count())
        throw ValidationError("GeneratorBundle: style projection does not reshape to the planes");
    if (s_g.w.size() != static_cast<std::size_t>(s_g.in) * s_g.out ||
        s_g.b.size() != static_cast<std::size_t>(s_g.out))
        throw ValidationError("GeneratorBundle: style projection parameter sizes inconsistent");
    if (decoder.c_in != planes.channels)
        throw ValidationError("GeneratorBundle: decoder input must match plane channels");
    if (t_g.d_out != d_w() || t_g.d_in <= t_g.d_out)
        throw ValidationError("GeneratorBundle: T_G dims must be (d_w + d_r) -> d_w");
}

GeneratorBundle make_generator(int d_z, int d_w, int d_r, const PlaneSpec& planes, int c_f,
                               RngStream& rng) {
    planes.validate();
    if (d_r <= 0) throw ValidationError("make_generator: d_r must be positive");
    GeneratorBundle g;
    g.planes = planes;
    g.m_g = make_mapping_net(d_z, d_w, rng);
    g.s_g = make_dense(d_w, static_cast<int>(planes.feature_count()));
    he_init(g.s_g, rng);
    g.decoder = make_decoder(planes.channels, {32}, c_f, Act::kLeakyRelu, rng);
    // Out-of-box samples decode a zero feature vector; a negative raw-density
    // bias keeps that (and the initial field) near-transparent instead of
    // filling space with softplus(0) fog.
    g.decoder.mlp.layers.back().b[c_f] = -4.0f;
    g.t_g = make_alignment_net(d_w + d_r, d_w, rng);
    g.validate();
    return g;
}

TriPlaneField apply_style(const GeneratorBundle& g, const StyleVector& w) {
    if (static_cast<int>(w.size()) != g.s_g.in)
        throw ValidationError("apply_style: style dim mismatch");
    TriPlaneField tp = TriPlaneField::zeros(g.planes.res, g.planes.channels, g.planes.lo,
                                            g.planes.hi);
    const int in = g.s_g.in;
    for (std::size_t o = 0; o < tp.data.size(); ++o) {
        const float* row = g.s_g.w.data() + o * in;
        double acc = g.s_g.b[o];
        for (int i = 0; i < in; ++i) acc += static_cast<double>(row[i]) * w[i];
        tp.data[o] = static_cast<float>(acc);
    }
    return tp;
}

std::vector<float> apply_style_backward(const GeneratorBundle& g, const StyleVector& w,
                                        const float* d_planes, std::vector<float>* dw_sg,
                                        std::vector<float>* db_sg) {
    if (static_cast<int>(w.size()) != g.s_g.in)
        throw ValidationError("apply_style_backward: style dim mismatch");
    const int in = g.s_g.in;
    const std::size_t out = g.planes.feature_count();
    if (dw_sg && dw_sg->size() != out * in)
        throw ValidationError("apply_style_backward: weight grad buffer size");
    if (db_sg && db_sg->size() != out)
        throw ValidationError("apply_style_backward: bias grad buffer size");
    std::vector<double> acc(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
        const float d = d_planes[o];
        if (d == 0.0f) continue;
        const float* row = g.s_g.w.data() + o * in;
        for (int i = 0; i < in; ++i) acc[i] += static_cast<double>(row[i]) * d;
        if (dw_sg) {
            float* dst = dw_sg->data() + o * in;
            for (int i = 0; i < in; ++i) dst[i] += d * w[i];
        }
        if (db_sg) (*db_sg)[o] += d;
    }
    return {acc.begin(), acc.end()};
}

RenderedImage render_style(const GeneratorBundle& g, const StyleVector& w_r, const Camera& cam,
                           const SurfaceField* sf, const QuadratureSpec& quad, int threads) {
    const TriPlaneField tp = apply_style(g, w_r);
    return render_image(tp, g.decoder, sf, cam, quad, threads);
}

RenderedImage generate_image(const GeneratorBundle& g, const LatentVector& z, const Embedding& r,
                             float alpha, const Camera& cam, const SurfaceField* sf,
                             const QuadratureSpec& quad, int threads) {
    const StyleVector w = map_latent(g.m_g, z);
    const StyleVector w_r = align_style(w, r, alpha, g.t_g);
    return render_style(g, w_r, cam, sf, quad, threads);
}

namespace {
nlohmann::json plane_json(const PlaneSpec& p) {
    return {{"res", p.res},
            {"channels", p.channels},
            {"lo", {p.lo.x, p.lo.y, p.lo.z}},
            {"hi", {p.hi.x, p.hi.y, p.hi.z}}};
}

PlaneSpec plane_from_json(const nlohmann::json& j) {
    check_keys(j, "plane spec", {"res", "channels", "lo", "hi"});
    PlaneSpec p;
    p.res = get_req<int>(j, "plane spec", "res");
    p.channels = get_req<int>(j, "plane spec", "channels");
    const auto lo = get_req<std::vector<float>>(j, "plane spec", "lo");
    const auto hi = get_req<std::vector<float>>(j, "plane spec", "hi");
    if (lo.size() != 3 || hi.size() != 3)
        throw ValidationError("plane spec: lo/hi must have 3 entries");
    p.lo = Vec3(lo[0], lo[1], lo[2]);
    p.hi = Vec3(hi[0], hi[1], hi[2]);
    p.validate();
    return p;
}
}  // namespace

void save_generator(const std::string& dir, const GeneratorBundle& g) {
    g.validate();
    std::filesystem::create_directories(dir);
    save_mlp_tensors(dir, "mg", g.m_g);
    write_tensor(dir + "/sg_w.ntc", TensorBlob({g.s_g.out, g.s_g.in}, g.s_g.w));
    write_tensor(dir + "/sg_b.ntc", TensorBlob({g.s_g.out}, g.s_g.b));
    save_decoder_tensors(dir, "dec", g.decoder);
    save_alignment(dir, "tg", g.t_g);
    nlohmann::json man;
    man["kind"] = "generator";
    man["plane"] = plane_json(g.planes);
    man["m_g"] = mlp_manifest(g.m_g);
    man["decoder"] = decoder_manifest(g.decoder);
    man["t_g"] = alignment_manifest(g.t_g);
    save_json_file(dir + "/manifest.json", man);
}

GeneratorBundle load_generator(const std::string& dir) {
    const nlohmann::json man = load_json_file(dir + "/manifest.json");
    if (get_req<std::string>(man, "generator manifest", "kind") != "generator")
        throw FormatError("load_generator: manifest kind is not 'generator'");
    check_keys(man, "generator manifest", {"kind", "plane", "m_g", "decoder", "t_g"});
    GeneratorBundle g;
    g.planes = plane_from_json(man.at("plane"));
    g.m_g = load_mlp(dir, "mg", man.at("m_g"));
    g.decoder = load_decoder(dir, "dec", man.at("decoder"));
    g.t_g = load_alignment(dir, "tg", man.at("t_g"));
    const TensorBlob w = read_tensor(dir + "/sg_w.ntc");
    const TensorBlob b = read_tensor(dir + "/sg_b.ntc");
    const auto out = static_cast<int64_t>(g.planes.feature_count());
    if (w.shape != std::vector<int64_t>{out, g.m_g.out_dim()} ||
        b.shape != std::vector<int64_t>{out})
        throw CorruptionError("load_generator: style projection tensors disagree with manifest");
    g.s_g = make_dense(g.m_g.out_dim(), static_cast<int>(out));
    g.s_g.w = w.data;
    g.s_g.b = b.data;
    g.validate();
    return g;
}

}  // namespace trideform
