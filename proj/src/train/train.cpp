#include "trideform/train/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "trideform/core/error.hpp"
#include "trideform/core/kernels.hpp"

namespace trideform {

namespace {

// Purpose-keyed substreams of the per-step rng. Disabled features skip their
// stream entirely, so e.g. a stage-1 run and a stage-2 run with alpha == 0
// draw identical latents.
constexpr std::uint64_t kZKey = 1;
constexpr std::uint64_t kAlphaKey = 2;
constexpr std::uint64_t kProbeKey = 3;
constexpr std::uint64_t kDensityKey = 4;

constexpr double kProbeSigma = 0.1;  // r_jac probe scale

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }
double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double dot_f(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += double(a[i]) * b[i];
    return acc;
}

double norm_f(const std::vector<float>& a) {
    double acc = 0;
    for (float x : a) acc += double(x) * x;
    return std::sqrt(acc);
}

std::vector<double> to_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }
std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

struct GenGrads {
    MlpGrads m_g, decoder, t_g;
    std::vector<float> sg_w, sg_b;

    void init(const GeneratorBundle& g) {
        m_g.init(g.m_g);
        decoder.init(g.decoder.mlp);
        t_g.init(g.t_g.layers);
        sg_w.assign(g.s_g.w.size(), 0.0f);
        sg_b.assign(g.s_g.b.size(), 0.0f);
    }
    void zero() {
        m_g.zero();
        decoder.zero();
        t_g.zero();
        std::fill(sg_w.begin(), sg_w.end(), 0.0f);
        std::fill(sg_b.begin(), sg_b.end(), 0.0f);
    }
};

struct DiscGrads {
    StemGrads s_d;
    MlpGrads m_d, t_d;

    void init(const DiscriminatorBundle& d) {
        s_d.init(d.s_d);
        m_d.init(d.m_d);
        t_d.init(d.t_d.layers);
    }
    void zero() {
        s_d.zero();
        m_d.zero();
        t_d.zero();
    }
};

void scale_grads(MlpGrads& g, float s) {
    const kern::Ops& k = kern::ops();
    for (auto& v : g.dw) k.scale(s, v.data(), v.size());
    for (auto& v : g.db) k.scale(s, v.data(), v.size());
}

void merge_scaled(const MlpGrads& src, float s, MlpGrads& dst) {
    const kern::Ops& k = kern::ops();
    for (std::size_t i = 0; i < src.dw.size(); ++i) {
        k.axpy(s, src.dw[i].data(), dst.dw[i].data(), src.dw[i].size());
        k.axpy(s, src.db[i].data(), dst.db[i].data(), src.db[i].size());
    }
}

// Registration / update walks must visit tensors in the same order.
void register_mlp_like(AdamState& opt, const std::vector<Dense>& layers) {
    for (const Dense& l : layers) {
        opt.add_param(l.w.size());
        opt.add_param(l.b.size());
    }
}

void update_mlp_like(AdamState& opt, std::size_t& slot, float lr, std::vector<Dense>& layers,
                     const MlpGrads& g) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        opt.update(slot++, lr, layers[i].w.data(), g.dw[i].data(), layers[i].w.size());
        opt.update(slot++, lr, layers[i].b.data(), g.db[i].data(), layers[i].b.size());
    }
}

}  // namespace

std::size_t AdamState::add_param(std::size_t n) {
    m_.emplace_back(n, 0.0f);
    v_.emplace_back(n, 0.0f);
    return m_.size() - 1;
}

void AdamState::begin_step() { ++t_; }

void AdamState::update(std::size_t slot, float lr, float* p, const float* g, std::size_t n) {
    std::vector<float>& m = m_.at(slot);
    std::vector<float>& v = v_.at(slot);
    if (m.size() != n) throw ValidationError("AdamState: slot size mismatch");
    const double c1 = 1.0 - std::pow(double(beta1_), double(t_));
    const double c2 = 1.0 - std::pow(double(beta2_), double(t_));
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1_ * m[i] + (1.0f - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0f - beta2_) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        p[i] -= float(lr * mhat / (std::sqrt(vhat) + eps_));
    }
}

void GanOptimizers::init(const GeneratorBundle& g, const DiscriminatorBundle& d) {
    register_mlp_like(gen, g.m_g.layers);
    gen.add_param(g.s_g.w.size());
    gen.add_param(g.s_g.b.size());
    register_mlp_like(gen, g.decoder.mlp.layers);
    register_mlp_like(gen, g.t_g.layers);

    for (const ConvLayer& l : d.s_d.convs) {
        disc.add_param(l.k.w.size());
        disc.add_param(l.k.b.size());
    }
    disc.add_param(d.s_d.head.w.size());
    disc.add_param(d.s_d.head.b.size());
    register_mlp_like(disc, d.m_d.layers);
    register_mlp_like(disc, d.t_d.layers);
}

namespace {

void apply_gen(AdamState& opt, float lr, GeneratorBundle& g, const GenGrads& gr) {
    std::size_t slot = 0;
    opt.begin_step();
    update_mlp_like(opt, slot, lr, g.m_g.layers, gr.m_g);
    opt.update(slot++, lr, g.s_g.w.data(), gr.sg_w.data(), g.s_g.w.size());
    opt.update(slot++, lr, g.s_g.b.data(), gr.sg_b.data(), g.s_g.b.size());
    update_mlp_like(opt, slot, lr, g.decoder.mlp.layers, gr.decoder);
    update_mlp_like(opt, slot, lr, g.t_g.layers, gr.t_g);
}

void apply_disc(AdamState& opt, float lr, DiscriminatorBundle& d, const DiscGrads& gr) {
    std::size_t slot = 0;
    opt.begin_step();
    for (std::size_t i = 0; i < d.s_d.convs.size(); ++i) {
        Dense& k = d.s_d.convs[i].k;
        opt.update(slot++, lr, k.w.data(), gr.s_d.g.dw[i].data(), k.w.size());
        opt.update(slot++, lr, k.b.data(), gr.s_d.g.db[i].data(), k.b.size());
    }
    const std::size_t hi = d.s_d.convs.size();
    opt.update(slot++, lr, d.s_d.head.w.data(), gr.s_d.g.dw[hi].data(), d.s_d.head.w.size());
    opt.update(slot++, lr, d.s_d.head.b.data(), gr.s_d.g.db[hi].data(), d.s_d.head.b.size());
    update_mlp_like(opt, slot, lr, d.m_d.layers, gr.m_d);
    update_mlp_like(opt, slot, lr, d.t_d.layers, gr.t_d);
}

std::vector<float> concat_vr(const std::vector<float>& v, const std::vector<float>& r) {
    std::vector<float> x;
    x.reserve(v.size() + r.size());
    x.insert(x.end(), v.begin(), v.end());
    x.insert(x.end(), r.begin(), r.end());
    return x;
}

// v_r = v + alpha T_D(v ‖ r) with the same exact-zero skip as align_style.
std::vector<float> blend_vr(const std::vector<float>& v, const std::vector<float>& t,
                            float alpha) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const float step = alpha * t[i];
        out[i] = step == 0.0f ? v[i] : v[i] + step;
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw ValidationError("TrainConfig: stage must be 1 or 2");
    if (!(learning_rate > 0)) throw ValidationError("TrainConfig: learning rate must be > 0");
    if (steps < 0) throw ValidationError("TrainConfig: steps must be >= 0");
    if (batch_size < 1) throw ValidationError("TrainConfig: batch size must be >= 1");
    if (resolution < 8) throw ValidationError("TrainConfig: resolution must be >= 8");
    if (n_samples < 2) throw ValidationError("TrainConfig: n_samples must be >= 2");
    if (dataset_size < 1) throw ValidationError("TrainConfig: dataset size must be >= 1");
    if (d_z < 1 || d_w < 1 || d_r < 1 || d_v < 1)
        throw ValidationError("TrainConfig: latent dimensions must be positive");
    if (plane_res < 2 || plane_channels < 1) throw ValidationError("TrainConfig: bad plane spec");
    if (lambda_jac < 0 || lambda_norm < 0 || r1_weight < 0 || density_reg_weight < 0)
        throw ValidationError("TrainConfig: loss weights must be non-negative");
    if (!(alpha_dropout >= 0 && alpha_dropout <= 1))
        throw ValidationError("TrainConfig: alpha_dropout must lie in [0, 1]");
    if (density_points < 0 || !(density_delta > 0))
        throw ValidationError("TrainConfig: bad density regularizer settings");
    if (checkpoint_every < 0 || diag_every < 0 || budget_seconds < 0)
        throw ValidationError("TrainConfig: negative scheduling settings");
    if (stage == 2 && (stage1_checkpoint.empty() || embedding_cache.empty()))
        throw ValidationError(
            "TrainConfig: stage 2 requires stage1_checkpoint and embedding_cache");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    const std::string ctx = "train config";
    check_keys(j, ctx,
               {"stage",          "seed",           "steps",
                "batch_size",     "learning_rate",  "resolution",
                "n_samples",      "dataset_size",   "d_z",
                "d_w",            "d_r",            "d_v",
                "plane_res",      "plane_channels", "lambda_jac",
                "lambda_norm",    "alpha_dropout",  "r1_weight",
                "density_reg_weight", "density_points", "density_delta",
                "out_dir",        "stage1_checkpoint", "embedding_cache",
                "checkpoint_every", "diag_every",   "budget_seconds"});
    TrainConfig c;
    c.stage = get_or(j, ctx, "stage", c.stage);
    c.seed = get_or<std::uint64_t>(j, ctx, "seed", c.seed);
    c.steps = get_or(j, ctx, "steps", c.steps);
    c.batch_size = get_or(j, ctx, "batch_size", c.batch_size);
    c.learning_rate = get_or(j, ctx, "learning_rate", c.learning_rate);
    c.resolution = get_or(j, ctx, "resolution", c.resolution);
    c.n_samples = get_or(j, ctx, "n_samples", c.n_samples);
    c.dataset_size = get_or(j, ctx, "dataset_size", c.dataset_size);
    c.d_z = get_or(j, ctx, "d_z", c.d_z);
    c.d_w = get_or(j, ctx, "d_w", c.d_w);
    c.d_r = get_or(j, ctx, "d_r", c.d_r);
    c.d_v = get_or(j, ctx, "d_v", c.d_v);
    c.plane_res = get_or(j, ctx, "plane_res", c.plane_res);
    c.plane_channels = get_or(j, ctx, "plane_channels", c.plane_channels);
    c.lambda_jac = get_or(j, ctx, "lambda_jac", c.lambda_jac);
    c.lambda_norm = get_or(j, ctx, "lambda_norm", c.lambda_norm);
    c.alpha_dropout = get_or(j, ctx, "alpha_dropout", c.alpha_dropout);
    c.r1_weight = get_or(j, ctx, "r1_weight", c.r1_weight);
    c.density_reg_weight = get_or(j, ctx, "density_reg_weight", c.density_reg_weight);
    c.density_points = get_or(j, ctx, "density_points", c.density_points);
    c.density_delta = get_or(j, ctx, "density_delta", c.density_delta);
    c.out_dir = get_or<std::string>(j, ctx, "out_dir", c.out_dir);
    c.stage1_checkpoint = get_or<std::string>(j, ctx, "stage1_checkpoint", c.stage1_checkpoint);
    c.embedding_cache = get_or<std::string>(j, ctx, "embedding_cache", c.embedding_cache);
    c.checkpoint_every = get_or(j, ctx, "checkpoint_every", c.checkpoint_every);
    c.diag_every = get_or(j, ctx, "diag_every", c.diag_every);
    c.budget_seconds = get_or(j, ctx, "budget_seconds", c.budget_seconds);
    c.validate();
    return c;
}

nlohmann::json metrics_json(const StepMetrics& m) {
    nlohmann::json j;
    j["step"] = m.step;
    j["alpha"] = m.alpha;
    j["d_loss"] = m.d_loss;
    j["g_loss"] = m.g_loss;
    j["d_real"] = m.d_real;
    j["d_fake"] = m.d_fake;
    j["r1"] = m.r1;
    j["r_jac"] = m.r_jac;
    j["r_norm"] = m.r_norm;
    j["density"] = m.density;
    j["w_norm"] = m.w_norm;
    j["wr_dev"] = m.wr_dev;
    if (m.diversity >= 0) j["diversity"] = m.diversity;
    if (m.sensitivity >= 0) {
        if (std::isfinite(m.sensitivity))
            j["sensitivity"] = m.sensitivity;
        else
            j["sensitivity"] = "infinity";
    }
    return j;
}

TrainItem make_train_item(const ToyMorphModel& model, const SceneRecord& rec, const Embedding& r,
                          int n_samples) {
    rec.image.validate();
    rec.rdr.validate();
    if (rec.image.channels != 3 || rec.rdr.channels != 3)
        throw ValidationError("make_train_item: records must carry 3-channel image and rdr");
    if (rec.image.width != rec.rdr.width || rec.image.height != rec.rdr.height)
        throw ValidationError("make_train_item: image / rdr resolution mismatch");
    TrainItem it;
    it.r = r;
    const TriMesh obs = morph(model, rec.geo);
    const SurfaceField sf(obs, canonical_mesh(model));
    QuadratureSpec quad;
    quad.n_samples = n_samples;
    it.plan = build_sample_plan(make_rays(rec.cam), quad, &sf);
    it.cam12 = camera_code(rec.cam);
    const std::size_t hw = std::size_t(rec.image.width) * rec.image.height;
    it.real_in.resize(6 * hw);
    for (std::size_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c) {
            it.real_in[c * hw + i] = rec.image.pixels[i * 3 + c];
            // Sentinel background would swamp the stem; it becomes 0 here,
            // which no covered pixel hits exactly.
            const float v = rec.rdr.pixels[i * 3 + c];
            it.real_in[(3 + c) * hw + i] = v == kCoordSentinel ? 0.0f : v;
        }
    return it;
}

StepMetrics gan_step(GeneratorBundle& g, DiscriminatorBundle& d, std::span<const TrainItem> batch,
                     const TrainConfig& cfg, const RngStream& step_rng, GanOptimizers& opt,
                     StepArtifacts* artifacts) {
    if (batch.empty()) throw ValidationError("gan_step: empty batch");
    const std::size_t B = batch.size();
    const int d_w = g.d_w(), d_z = g.d_z(), d_v = d.d_v();
    const std::size_t hw = std::size_t(batch[0].plan.n_rays);
    for (const TrainItem& it : batch) {
        if (it.real_in.size() != 6 * hw || it.cam12.size() != 12 ||
            std::size_t(it.plan.n_rays) != hw)
            throw ValidationError("gan_step: inconsistent batch items");
        if (cfg.conditioning() && int(it.r.values.size()) != g.d_r())
            throw ValidationError("gan_step: embedding dim disagrees with T_G");
    }
    if (g.decoder.c_f != 3) throw ValidationError("gan_step: generator must render 3 channels");

    StepMetrics met;
    float alpha = 0.0f;
    if (cfg.conditioning()) {
        RngStream ar = step_rng.substream(kAlphaKey);
        alpha = ar.next_uniform() < cfg.alpha_dropout ? 0.0f : 1.0f;
    }
    met.alpha = alpha;
    const Embedding zero_r{std::vector<float>(std::size_t(g.d_r()), 0.0f), false};

    // ---- fake forward (generator params stay fixed through the D update) --
    RngStream zrng = step_rng.substream(kZKey);
    std::vector<LatentVector> zs(B);
    std::vector<StyleVector> ws(B), wrs(B);
    std::vector<MlpCache> mg_cache(B);
    std::vector<AlignCache> tg_cache(B);
    std::vector<TriPlaneField> planes(B);
    std::vector<DiffRenderWorkspace> rws(B);
    std::vector<std::vector<float>> fake_in(B);
    for (std::size_t i = 0; i < B; ++i) {
        zs[i] = gaussian(zrng, std::size_t(d_z));
        const std::vector<double> wd = mlp_forward(g.m_g, to_double(zs[i]), &mg_cache[i]);
        ws[i] = to_float(wd);
        const Embedding& r = cfg.conditioning() ? batch[i].r : zero_r;
        wrs[i] = align_style(ws[i], r, alpha, g.t_g, &tg_cache[i]);
        planes[i] = apply_style(g, wrs[i]);
        diff_render_forward(planes[i], g.decoder, batch[i].plan, rws[i]);
        fake_in[i].resize(6 * hw);
        std::memcpy(fake_in[i].data(), rws[i].features.data(), 3 * hw * sizeof(float));
        std::memcpy(fake_in[i].data() + 3 * hw, batch[i].real_in.data() + 3 * hw,
                    3 * hw * sizeof(float));
        if (artifacts) {
            artifacts->w.push_back(ws[i]);
            artifacts->w_r.push_back(wrs[i]);
            artifacts->fake_features.push_back(rws[i].features);
        }
    }

    // ---- discriminator update ---------------------------------------------
    DiscGrads dgr;
    StemGrads stem_tmp;
    dgr.init(d);
    stem_tmp.init(d.s_d);

    double d_loss = 0;
    for (std::size_t i = 0; i < B; ++i) {
        const Embedding& r = cfg.conditioning() ? batch[i].r : zero_r;
        StemCache sc;
        const std::vector<float> u = stem_forward(d.s_d, batch[i].real_in.data(), &sc);
        MlpCache vc;
        const std::vector<float> v = to_float(mlp_forward(d.m_d, to_double(batch[i].cam12), &vc));
        AlignCache tdc;
        std::vector<float> vr = v;
        if (alpha > 0)
            vr = blend_vr(v, align_forward(d.t_d, concat_vr(v, r.values), &tdc), alpha);

        const double d_real = dot_f(u, vr);
        met.d_real += d_real;
        d_loss += softplus(-d_real);
        const double dd = -sigmoid(-d_real);

        // One unscaled backward serves both the adversarial parameter grads
        // (linear in the adjoint; merged scaled below) and the R1 input
        // gradient gx.
        stem_tmp.zero();
        const std::vector<float> gx = stem_backward(d.s_d, sc, vr, &stem_tmp);
        merge_scaled(stem_tmp.g, float(dd), dgr.s_d.g);
        double p = 0;
        for (float x : gx) p += double(x) * x;
        met.r1 += p;
        d_loss += cfg.r1_weight * p;

        // d p / d theta = 2 * reverse-through-jvp with tangent gx;
        // d p / d v_r = 2 J gx = 2 t_u.
        std::vector<float> d_vr(std::size_t(d_v), 0.0f);
        if (cfg.r1_weight > 0) {
            StemJvpCache jc;
            const std::vector<float> t_u = stem_jvp(d.s_d, sc, gx.data(), &jc);
            std::vector<float> adj(vr);
            kern::ops().scale(2.0f * cfg.r1_weight, adj.data(), adj.size());
            stem_jvp_backward(d.s_d, sc, jc, adj, &dgr.s_d);
            for (int kk = 0; kk < d_v; ++kk)
                d_vr[kk] = float(dd * u[kk] + 2.0 * cfg.r1_weight * t_u[kk]);
        } else {
            for (int kk = 0; kk < d_v; ++kk) d_vr[kk] = float(dd * u[kk]);
        }

        StemCache scf;
        const std::vector<float> uf = stem_forward(d.s_d, fake_in[i].data(), &scf);
        const double d_fake = dot_f(uf, vr);
        met.d_fake += d_fake;
        d_loss += softplus(d_fake);
        const double ddf = sigmoid(d_fake);
        stem_tmp.zero();
        stem_backward(d.s_d, scf, vr, &stem_tmp);
        merge_scaled(stem_tmp.g, float(ddf), dgr.s_d.g);
        for (int kk = 0; kk < d_v; ++kk) d_vr[kk] += float(ddf * uf[kk]);

        std::vector<float> d_v_vec = d_vr;
        if (alpha > 0) {
            std::vector<float> d_t(d_vr);
            kern::ops().scale(alpha, d_t.data(), d_t.size());
            const std::vector<float> din = align_backward(d.t_d, tdc, d_t, &dgr.t_d);
            for (int kk = 0; kk < d_v; ++kk) d_v_vec[kk] += din[kk];
        }
        mlp_backward(d.m_d, vc, to_double(d_v_vec), &dgr.m_d);
    }
    met.d_loss = d_loss / double(B);
    met.d_real /= double(B);
    met.d_fake /= double(B);
    met.r1 /= double(B);
    if (!std::isfinite(met.d_loss))
        throw NumericError("gan_step: non-finite discriminator loss; diagnostics: " +
                           metrics_json(met).dump());
    scale_grads(dgr.s_d.g, 1.0f / float(B));
    scale_grads(dgr.m_d, 1.0f / float(B));
    scale_grads(dgr.t_d, 1.0f / float(B));
    apply_disc(opt.disc, cfg.learning_rate, d, dgr);

    // ---- generator update (against the updated discriminator) ------------
    GenGrads ggr;
    ggr.init(g);

    double g_loss = 0;
    std::vector<float> plane_grad(g.planes.feature_count());
    for (std::size_t i = 0; i < B; ++i) {
        const Embedding& r = cfg.conditioning() ? batch[i].r : zero_r;
        StemCache scf;
        const std::vector<float> uf = stem_forward(d.s_d, fake_in[i].data(), &scf);
        const std::vector<float> v = to_float(mlp_forward(d.m_d, to_double(batch[i].cam12)));
        std::vector<float> vr = v;
        if (alpha > 0) vr = blend_vr(v, align_forward(d.t_d, concat_vr(v, r.values)), alpha);
        const double d_fake = dot_f(uf, vr);
        g_loss += softplus(-d_fake);
        const double dd = -sigmoid(-d_fake);

        std::vector<float> adj(vr);
        kern::ops().scale(float(dd), adj.data(), adj.size());
        const std::vector<float> d_in = stem_backward(d.s_d, scf, adj, nullptr);

        std::fill(plane_grad.begin(), plane_grad.end(), 0.0f);
        diff_render_backward(planes[i], g.decoder, batch[i].plan, rws[i], d_in.data(),
                             plane_grad.data(), &ggr.decoder);

        if (cfg.density_points > 0) {
            RngStream drng = step_rng.substream(kDensityKey).substream(i);
            const double dens =
                density_reg_grad(planes[i], g.decoder, drng, cfg.density_points,
                                 cfg.density_delta, cfg.density_reg_weight, plane_grad.data(),
                                 &ggr.decoder);
            met.density += dens;
            g_loss += cfg.density_reg_weight * dens;
        }

        std::vector<float> d_wr =
            apply_style_backward(g, wrs[i], plane_grad.data(), &ggr.sg_w, &ggr.sg_b);

        const double a = norm_f(wrs[i]);
        const double b = norm_f(ws[i]);
        const double rn = (a - b) * (a - b);
        met.r_norm += rn;
        met.w_norm += b;
        met.wr_dev += b > 0 ? std::abs(a - b) / b : 0.0;
        g_loss += cfg.lambda_norm * rn;
        std::vector<float> d_w_extra(std::size_t(d_w), 0.0f);
        if (cfg.lambda_norm > 0 && a > 0 && b > 0) {
            const double coef = 2.0 * cfg.lambda_norm * (a - b);
            for (int kk = 0; kk < d_w; ++kk) {
                d_wr[kk] += float(coef * wrs[i][kk] / a);
                d_w_extra[kk] = float(-coef * ws[i][kk] / b);
            }
        }

        std::vector<float> d_w_vec = d_wr;
        if (alpha > 0) {
            std::vector<float> d_t(d_wr);
            kern::ops().scale(alpha, d_t.data(), d_t.size());
            const std::vector<float> din = align_backward(g.t_g, tg_cache[i], d_t, &ggr.t_g);
            for (int kk = 0; kk < d_w; ++kk) d_w_vec[kk] += din[kk];
        }
        for (int kk = 0; kk < d_w; ++kk) d_w_vec[kk] += d_w_extra[kk];

        // Jacobian penalty on T_G's sensitivity to r. w enters only as a
        // frozen input: the penalty shapes the alignment net, not the
        // mapping, so unconditional trajectories stay untouched.
        if (cfg.conditioning()) {
            RngStream prng = step_rng.substream(kProbeKey).substream(i);
            AlignCache c0, c1;
            std::vector<float> x0 = concat_vr(ws[i], r.values);
            const std::vector<float> t0 = align_forward(g.t_g, x0, &c0);
            const std::vector<float> eps = gaussian(prng, r.values.size());
            std::vector<float> x1 = x0;
            for (std::size_t kk = 0; kk < r.values.size(); ++kk)
                x1[std::size_t(d_w) + kk] += float(kProbeSigma) * eps[kk];
            const std::vector<float> t1 = align_forward(g.t_g, x1, &c1);
            double diff_sq = 0;
            for (int kk = 0; kk < d_w; ++kk) {
                const double dt = double(t1[kk]) - t0[kk];
                diff_sq += dt * dt;
            }
            const double rj = diff_sq / (kProbeSigma * kProbeSigma);
            met.r_jac += rj;
            g_loss += cfg.lambda_jac * rj;
            if (cfg.lambda_jac > 0 && diff_sq > 0) {
                std::vector<float> dvec(std::size_t(d_w), 0.0f);
                const double s = 2.0 * cfg.lambda_jac / (kProbeSigma * kProbeSigma);
                for (int kk = 0; kk < d_w; ++kk)
                    dvec[kk] = float(s * (double(t1[kk]) - t0[kk]));
                align_backward(g.t_g, c1, dvec, &ggr.t_g);
                for (float& x : dvec) x = -x;
                align_backward(g.t_g, c0, dvec, &ggr.t_g);
            }
        }

        mlp_backward(g.m_g, mg_cache[i], to_double(d_w_vec), &ggr.m_g);
    }
    met.g_loss = g_loss / double(B);
    met.r_jac /= double(B);
    met.r_norm /= double(B);
    met.density /= double(B);
    met.w_norm /= double(B);
    met.wr_dev /= double(B);
    if (!std::isfinite(met.g_loss))
        throw NumericError("gan_step: non-finite generator loss; diagnostics: " +
                           metrics_json(met).dump());
    scale_grads(ggr.m_g, 1.0f / float(B));
    scale_grads(ggr.decoder, 1.0f / float(B));
    scale_grads(ggr.t_g, 1.0f / float(B));
    kern::ops().scale(1.0f / float(B), ggr.sg_w.data(), ggr.sg_w.size());
    kern::ops().scale(1.0f / float(B), ggr.sg_b.data(), ggr.sg_b.size());
    apply_gen(opt.gen, cfg.learning_rate, g, ggr);
    return met;
}

double density_reg_grad(const TriPlaneField& tp, const DecoderNet& net, RngStream& rng,
                        int n_points, float delta, float scale, float* plane_grad,
                        MlpGrads* net_grads) {
    if (!(delta > 0)) throw ValidationError("density_reg: delta must be positive");
    if (n_points < 0) throw ValidationError("density_reg: n_points must be >= 0");
    if (n_points == 0) return 0.0;
    const Vec3 ext = tp.hi - tp.lo;
    if (!(ext.x > 2 * delta && ext.y > 2 * delta && ext.z > 2 * delta))
        throw ValidationError("density_reg: delta too large for the plane box");

    const std::size_t n2 = 2 * std::size_t(n_points);
    std::vector<Vec3> pts(n2);
    for (int i = 0; i < n_points; ++i) {
        // x from the delta-inset box so both ends of the probe segment stay
        // inside the field's support.
        const Vec3 lo = tp.lo + Vec3(delta, delta, delta);
        const Vec3 span = ext - Vec3(2 * delta, 2 * delta, 2 * delta);
        Vec3 x(lo.x + span.x * float(rng.next_uniform()),
               lo.y + span.y * float(rng.next_uniform()),
               lo.z + span.z * float(rng.next_uniform()));
        Vec3 u(float(rng.next_gaussian()), float(rng.next_gaussian()),
               float(rng.next_gaussian()));
        const float n = u.norm();
        u = n > 1e-9f ? u * (1.0f / n) : Vec3(1, 0, 0);
        pts[2 * i] = x;
        pts[2 * i + 1] = x + u * delta;
    }

    std::vector<float> feat_in(std::size_t(tp.channels) * n2);
    std::vector<float> col(std::size_t(tp.channels));
    for (std::size_t i = 0; i < n2; ++i) {
        sample_triplane(tp, pts[i], col.data());
        for (int c = 0; c < tp.channels; ++c) feat_in[std::size_t(c) * n2 + i] = col[c];
    }
    DecoderBatchCache cache;
    std::vector<float> features(std::size_t(net.c_f) * n2);
    std::vector<float> density(n2);
    decoder_forward_batch(net, feat_in.data(), n2, features.data(), density.data(), &cache);

    double mean = 0;
    for (int i = 0; i < n_points; ++i) {
        const double diff = double(density[2 * i]) - density[2 * i + 1];
        mean += diff * diff;
    }
    mean /= double(n_points);

    if (scale != 0.0f && (plane_grad || net_grads)) {
        std::vector<float> d_density(n2);
        for (int i = 0; i < n_points; ++i) {
            const double diff = double(density[2 * i]) - density[2 * i + 1];
            const float dd = float(scale * 2.0 * diff / double(n_points));
            d_density[2 * i] = dd;
            d_density[2 * i + 1] = -dd;
        }
        std::vector<float> d_features(std::size_t(net.c_f) * n2, 0.0f);
        std::vector<float> dx(std::size_t(tp.channels) * n2);
        decoder_backward_batch(net, cache, d_features.data(), d_density.data(), dx.data(),
                               net_grads);
        if (plane_grad) {
            std::vector<float> gcol(std::size_t(tp.channels));
            for (std::size_t i = 0; i < n2; ++i) {
                for (int c = 0; c < tp.channels; ++c) gcol[c] = dx[std::size_t(c) * n2 + i];
                scatter_triplane(tp, pts[i], gcol.data(), plane_grad);
            }
        }
    }
    return mean;
}

double density_reg(const TriPlaneField& tp, const DecoderNet& net, RngStream& rng, int n_points,
                   float delta) {
    return density_reg_grad(tp, net, rng, n_points, delta, 0.0f, nullptr, nullptr);
}

namespace {

double mean_pairwise_l2(const std::vector<std::vector<float>>& images) {
    const std::size_t n = images.size();
    double acc = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < images[i].size(); ++k) {
                const double di = double(images[i][k]) - images[j][k];
                s += di * di;
            }
            acc += std::sqrt(s);
            ++pairs;
        }
    return acc / double(pairs);
}

}  // namespace

double diversity(const GeneratorBundle& g, const Embedding& r, float alpha, int n_z,
                 const Camera& cam, const SurfaceField* sf, const QuadratureSpec& quad,
                 RngStream& rng) {
    if (n_z < 2) throw ValidationError("diversity: n_z must be >= 2");
    const SamplePlan plan = build_sample_plan(make_rays(cam), quad, sf);
    DiffRenderWorkspace ws;
    std::vector<std::vector<float>> images;
    images.reserve(n_z);
    for (int i = 0; i < n_z; ++i) {
        const LatentVector z = gaussian(rng, std::size_t(g.d_z()));
        const StyleVector w_r = align_style(map_latent(g.m_g, z), r, alpha, g.t_g);
        const TriPlaneField tp = apply_style(g, w_r);
        diff_render_forward(tp, g.decoder, plan, ws);
        images.push_back(ws.features);
    }
    return mean_pairwise_l2(images);
}

double sensitivity_ratio(const VecFn& f_r, const std::vector<double>& r, const VecFn& f_z,
                         const std::vector<double>& z, const ProbeSpec& probes) {
    probes.validate();
    ProbeSpec pr = probes;
    pr.rng = probes.rng.substream(1);
    ProbeSpec pz = probes;
    pz.rng = probes.rng.substream(2);
    const double num = fd_frob_sq(f_r, r, pr);
    const double den = fd_frob_sq(f_z, z, pz);
    if (den == 0.0) return std::numeric_limits<double>::infinity();
    return num / den;
}

double generator_sensitivity(const GeneratorBundle& g, const LatentVector& z, const Embedding& r,
                             const Camera& cam, const SurfaceField* sf,
                             const QuadratureSpec& quad, const ProbeSpec& probes) {
    if (int(z.size()) != g.d_z()) throw ValidationError("generator_sensitivity: z dim mismatch");
    if (int(r.values.size()) != g.d_r())
        throw ValidationError("generator_sensitivity: embedding dim mismatch");
    const SamplePlan plan = build_sample_plan(make_rays(cam), quad, sf);
    auto render = [&](const StyleVector& w_r) {
        DiffRenderWorkspace ws;
        const TriPlaneField tp = apply_style(g, w_r);
        diff_render_forward(tp, g.decoder, plan, ws);
        return to_double(ws.features);
    };
    const StyleVector w_fixed = map_latent(g.m_g, z);
    const VecFn f_r = [&](const std::vector<double>& rv) {
        const Embedding re{to_float(rv), false};
        return render(align_style(w_fixed, re, 1.0f, g.t_g));
    };
    const VecFn f_z = [&](const std::vector<double>& zv) {
        return render(align_style(map_latent(g.m_g, to_float(zv)), r, 1.0f, g.t_g));
    };
    return sensitivity_ratio(f_r, to_double(r.values), f_z, to_double(z), probes);
}

// ---- training loop --------------------------------------------------------

namespace {

struct Dataset {
    ToyMorphModel model;
    std::vector<SceneRecord> records;
};

Dataset build_dataset(const TrainConfig& cfg) {
    Dataset ds;
    ds.model = make_toy_head(cfg.seed);
    SceneSampler sampler;
    sampler.model = ds.model;
    sampler.width = cfg.resolution;
    sampler.height = cfg.resolution;
    sampler.n_samples = cfg.n_samples;
    RngStream rng(cfg.seed, 0xda7a);
    ds.records.reserve(cfg.dataset_size);
    for (int i = 0; i < cfg.dataset_size; ++i)
        ds.records.push_back(sample_scene(sampler, rng, i));
    return ds;
}

void save_checkpoint(const std::string& dir, const GeneratorBundle& g,
                     const DiscriminatorBundle& d) {
    save_generator(dir + "/generator", g);
    save_discriminator(dir + "/discriminator", d);
}

}  // namespace

TrainResult train_loop(const TrainConfig& cfg, const std::string& resume_ckpt) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    const Dataset ds = build_dataset(cfg);

    GeneratorBundle g;
    DiscriminatorBundle d;
    if (!resume_ckpt.empty()) {
        g = load_generator(resume_ckpt + "/generator");
        d = load_discriminator(resume_ckpt + "/discriminator");
    } else if (cfg.stage == 2) {
        if (!std::filesystem::exists(cfg.stage1_checkpoint + "/generator/manifest.json"))
            throw ValidationError("train_loop: stage 2 requires a stage-1 checkpoint (missing " +
                                  cfg.stage1_checkpoint + ")");
        g = load_generator(cfg.stage1_checkpoint + "/generator");
        d = load_discriminator(cfg.stage1_checkpoint + "/discriminator");
    } else {
        RngStream init_rng(cfg.seed, 0x171);
        PlaneSpec planes;
        planes.res = cfg.plane_res;
        planes.channels = cfg.plane_channels;
        g = make_generator(cfg.d_z, cfg.d_w, cfg.d_r, planes, 3, init_rng);
        d = make_discriminator(cfg.resolution, cfg.d_v, cfg.d_r, init_rng);
    }
    if (g.d_z() != cfg.d_z || g.d_w() != cfg.d_w || g.d_r() != cfg.d_r || d.d_v() != cfg.d_v ||
        d.d_r() != cfg.d_r || d.s_d.res != cfg.resolution)
        throw ValidationError("train_loop: checkpoint dimensions disagree with the config");

    std::vector<Embedding> rs(ds.records.size());
    if (cfg.stage == 2) {
        if (!std::filesystem::exists(cfg.embedding_cache + "/ids.json"))
            throw ValidationError("train_loop: stage 2 requires an embedding cache (missing " +
                                  cfg.embedding_cache + ")");
        const EmbeddingProvider cachep = load_embedding_cache(cfg.embedding_cache);
        if (cachep.dim != cfg.d_r)
            throw ValidationError("train_loop: embedding cache dim disagrees with d_r");
        for (std::size_t i = 0; i < ds.records.size(); ++i)
            rs[i] = embed_id(cachep, ds.records[i].id);
    } else {
        for (auto& r : rs) r = Embedding{std::vector<float>(std::size_t(cfg.d_r), 0.0f), false};
    }

    std::vector<TrainItem> items;
    items.reserve(ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        items.push_back(make_train_item(ds.model, ds.records[i], rs[i], cfg.n_samples));

    GanOptimizers opt;
    opt.init(g, d);

    const bool writing = !cfg.out_dir.empty();
    std::ofstream metrics_file;
    if (writing) {
        std::filesystem::create_directories(cfg.out_dir);
        metrics_file.open(cfg.out_dir + "/metrics.jsonl", std::ios::trunc);
        if (!metrics_file) throw ValidationError("train_loop: cannot write metrics log");
    }

    const int diag_every = cfg.diag_every > 0 ? cfg.diag_every : std::max(1, cfg.steps / 8);
    const Camera diag_cam = make_default_camera(cfg.resolution, cfg.resolution);
    QuadratureSpec quad;
    quad.n_samples = cfg.n_samples;
    RngStream zdiag_rng(cfg.seed, 0x5e46);
    const LatentVector z_diag = gaussian(zdiag_rng, std::size_t(cfg.d_z));
    const float alpha_diag = cfg.conditioning() ? 1.0f : 0.0f;

    TrainResult result;
    std::vector<TrainItem> batch;
    for (int s = 0; s < cfg.steps; ++s) {
        if (cfg.budget_seconds > 0 && elapsed() > cfg.budget_seconds) {
            result.budget_exceeded = true;
            break;
        }
        batch.clear();
        for (int k = 0; k < cfg.batch_size; ++k)
            batch.push_back(items[(std::size_t(s) * cfg.batch_size + k) % items.size()]);
        const RngStream step_rng = RngStream(cfg.seed, 0x57e1).substream(std::uint64_t(s));
        StepMetrics m = gan_step(g, d, batch, cfg, step_rng, opt);
        m.step = s;
        if (s % diag_every == 0 || s == cfg.steps - 1) {
            RngStream div_rng = RngStream(cfg.seed, 0xd117).substream(std::uint64_t(s));
            m.diversity = diversity(g, rs[0], alpha_diag, 4, diag_cam, nullptr, quad, div_rng);
            ProbeSpec probes;
            probes.rng = RngStream(cfg.seed, 0x5e45).substream(std::uint64_t(s));
            m.sensitivity = generator_sensitivity(g, z_diag, rs[0], diag_cam, nullptr, quad,
                                                  probes);
        }
        if (writing) metrics_file << metrics_json(m).dump() << "\n";
        result.metrics.push_back(m);
        result.steps_run = s + 1;
        if (writing && cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(cfg.out_dir + "/ckpt-" + std::to_string(s + 1), g, d);
    }
    if (writing) {
        save_checkpoint(cfg.out_dir + "/ckpt-final", g, d);
        result.checkpoint_dir = cfg.out_dir + "/ckpt-final";
    }
    return result;
}

// ---- collapse demo --------------------------------------------------------

void CollapseConfig::validate() const {
    if (out_dir.empty()) throw ValidationError("CollapseConfig: out_dir required");
    if (warmup_steps < 0) throw ValidationError("CollapseConfig: warmup_steps must be >= 0");
    if (!(lambda_on > 0)) throw ValidationError("CollapseConfig: lambda_on must be positive");
    if (noise_dim < 1 || noise_dim >= base.d_r)
        throw ValidationError("CollapseConfig: noise_dim must lie in [1, d_r)");
    if (n_eval_z < 2 || n_eval_r < 1) throw ValidationError("CollapseConfig: bad eval settings");
}

nlohmann::json collapse_report_json(const CollapseReport& r) {
    nlohmann::json j;
    j["diversity_unregularized"] = r.div_unreg;
    j["diversity_regularized"] = r.div_reg;
    if (std::isfinite(r.ratio))
        j["ratio"] = r.ratio;
    else
        j["ratio"] = "infinity";
    j["budget_exceeded"] = r.budget_exceeded;
    j["curves"] = r.curves;
    return j;
}

namespace {

ImageBuffer tile_grid(const std::vector<ImageBuffer>& tiles, int cols) {
    const int rows = int((tiles.size() + cols - 1) / cols);
    const int tw = tiles[0].width, th = tiles[0].height, c = tiles[0].channels;
    ImageBuffer grid(cols * tw, rows * th, c);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        const int gx = int(i) % cols, gy = int(i) / cols;
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x)
                for (int ch = 0; ch < c; ++ch)
                    grid.at(gx * tw + x, gy * th + y, ch) = tiles[i].at(x, y, ch);
    }
    return grid;
}

}  // namespace

CollapseReport collapse_demo(const CollapseConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const double budget = cfg.base.budget_seconds;
    auto remaining = [&] {
        if (budget <= 0) return 0.0;  // unlimited
        const double used =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return std::max(budget - used, 1e-3);
    };

    std::filesystem::create_directories(cfg.out_dir);
    const Dataset ds = build_dataset(cfg.base);

    // Per-sample-unique noisy embeddings: toy embedding of the record image
    // concatenated with a unit noise vector keyed by the sample index; each
    // half carries weight 1/2 so the result stays unit-norm.
    const EmbeddingProvider toy = make_toy_embedder(cfg.base.d_r - cfg.noise_dim, cfg.base.seed);
    std::vector<std::string> ids;
    std::vector<Embedding> embs;
    const float half = 1.0f / std::sqrt(2.0f);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const Embedding e = embed(toy, ds.records[i].image);
        RngStream nrng = RngStream(cfg.base.seed, 0x401e).substream(i);
        std::vector<float> noise = gaussian(nrng, std::size_t(cfg.noise_dim));
        const double nn = norm_f(noise);
        for (float& x : noise) x = float(x / nn);
        std::vector<float> vals;
        vals.reserve(std::size_t(cfg.base.d_r));
        for (float x : e.values) vals.push_back(half * x);
        for (float x : noise) vals.push_back(half * x);
        ids.push_back(ds.records[i].id);
        embs.push_back(Embedding{std::move(vals), true});
    }
    const std::string cache_dir = cfg.out_dir + "/cache";
    std::filesystem::create_directories(cache_dir);
    save_embedding_cache(cache_dir, ids, embs);

    CollapseReport report;

    TrainConfig warm = cfg.base;
    warm.stage = 1;
    warm.steps = cfg.warmup_steps;
    warm.out_dir = cfg.out_dir + "/warmup";
    warm.stage1_checkpoint.clear();
    warm.embedding_cache.clear();
    warm.budget_seconds = remaining();
    const TrainResult rw = train_loop(warm);
    report.budget_exceeded = report.budget_exceeded || rw.budget_exceeded;

    auto run = [&](float lam, const std::string& name) {
        TrainConfig c = cfg.base;
        c.stage = 2;
        c.lambda_jac = lam;
        c.out_dir = cfg.out_dir + "/" + name;
        c.stage1_checkpoint = warm.out_dir + "/ckpt-final";
        c.embedding_cache = cache_dir;
        c.budget_seconds = remaining();
        return train_loop(c);
    };
    const TrainResult r_unreg = run(0.0f, "unreg");
    const TrainResult r_reg = run(cfg.lambda_on, "reg");
    report.budget_exceeded =
        report.budget_exceeded || r_unreg.budget_exceeded || r_reg.budget_exceeded;

    const Camera cam = make_default_camera(cfg.base.resolution, cfg.base.resolution);
    QuadratureSpec quad;
    quad.n_samples = cfg.base.n_samples;
    const int n_r = std::min<int>(cfg.n_eval_r, int(embs.size()));
    auto eval_div = [&](const GeneratorBundle& gb) {
        double acc = 0;
        for (int i = 0; i < n_r; ++i) {
            RngStream rng = RngStream(cfg.base.seed, 0xe7a1).substream(std::uint64_t(i));
            acc += diversity(gb, embs[std::size_t(i)], 1.0f, cfg.n_eval_z, cam, nullptr, quad,
                             rng);
        }
        return acc / double(n_r);
    };
    auto make_grid = [&](const GeneratorBundle& gb) {
        std::vector<ImageBuffer> tiles;
        for (int i = 0; i < n_r; ++i) {
            RngStream rng = RngStream(cfg.base.seed, 0xe7a1).substream(std::uint64_t(i));
            for (int k = 0; k < cfg.n_eval_z; ++k) {
                const LatentVector z = gaussian(rng, std::size_t(gb.d_z()));
                tiles.push_back(
                    generate_image(gb, z, embs[std::size_t(i)], 1.0f, cam, nullptr, quad)
                        .feature);
            }
        }
        return tile_grid(tiles, cfg.n_eval_z);
    };

    const GeneratorBundle g_unreg = load_generator(cfg.out_dir + "/unreg/ckpt-final/generator");
    const GeneratorBundle g_reg = load_generator(cfg.out_dir + "/reg/ckpt-final/generator");
    report.div_unreg = eval_div(g_unreg);
    report.div_reg = eval_div(g_reg);
    if (report.div_unreg == 0.0 && report.div_reg == 0.0)
        report.ratio = 1.0;
    else if (report.div_unreg == 0.0)
        report.ratio = std::numeric_limits<double>::infinity();
    else
        report.ratio = report.div_reg / report.div_unreg;

    write_ppm(cfg.out_dir + "/grid_unreg.ppm", make_grid(g_unreg));
    write_ppm(cfg.out_dir + "/grid_reg.ppm", make_grid(g_reg));

    auto curve = [](const TrainResult& r) {
        nlohmann::json arr = nlohmann::json::array();
        for (const StepMetrics& m : r.metrics)
            if (m.diversity >= 0) arr.push_back({m.step, m.diversity});
        return arr;
    };
    report.curves["unregularized"] = curve(r_unreg);
    report.curves["regularized"] = curve(r_reg);
    save_json_file(cfg.out_dir + "/report.json", collapse_report_json(report));
    return report;
}

}  // namespace trideform
