#include "trideform/canonical/canonical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trideform/core/json_util.hpp"
#include "trideform/core/tensor.hpp"

namespace trideform {

GradientMode gradient_mode_from_name(const std::string& name) {
    if (name == "finite_difference") return GradientMode::kFiniteDifference;
    if (name == "reverse") return GradientMode::kReverse;
    throw ValidationError("unknown gradient mode: " + name);
}

const char* gradient_mode_name(GradientMode m) {
    return m == GradientMode::kFiniteDifference ? "finite_difference" : "reverse";
}

void InversionConfig::validate() const {
    if (max_steps < 1) throw ValidationError("InversionConfig: max_steps must be >= 1");
    if (!(step_size > 0)) throw ValidationError("InversionConfig: step_size must be positive");
    if (!(threshold >= 0)) throw ValidationError("InversionConfig: threshold must be >= 0");
    if (distance != "L2-v1")
        throw ValidationError("InversionConfig: unknown image-distance tag '" + distance + "'");
}

NeutralFrame make_neutral_frame(const ToyMorphModel& model, int width, int height,
                                float distance) {
    return NeutralFrame{make_default_camera(width, height, distance), canonical_params(model)};
}

namespace {

// Shared distance kernel over feature-major [c, w*h] layouts so the
// optimizer's inner loop and the public ImageBuffer interface score
// identically: sum of squared pixel differences plus 0.5x the same over
// forward-difference image gradients.
double l2v1_planes(const float* a, const float* b, int w, int h, int c) {
    const std::size_t np = static_cast<std::size_t>(w) * h;
    double pix = 0, grad = 0;
    for (std::size_t i = 0; i < np * c; ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        pix += d * d;
    }
    for (int ch = 0; ch < c; ++ch) {
        const float* pa = a + ch * np;
        const float* pb = b + ch * np;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x + 1 < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                const double ga = double(pa[i + 1]) - pa[i];
                const double gb = double(pb[i + 1]) - pb[i];
                grad += (ga - gb) * (ga - gb);
            }
        }
        for (int y = 0; y + 1 < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                const double ga = double(pa[i + w]) - pa[i];
                const double gb = double(pb[i + w]) - pb[i];
                grad += (ga - gb) * (ga - gb);
            }
        }
    }
    return pix + 0.5 * grad;
}

// dL/da for the kernel above, accumulated into d_a (feature-major).
void l2v1_planes_grad(const float* a, const float* b, int w, int h, int c, float* d_a) {
    const std::size_t np = static_cast<std::size_t>(w) * h;
    for (std::size_t i = 0; i < np * c; ++i)
        d_a[i] += 2.0f * (a[i] - b[i]);
    for (int ch = 0; ch < c; ++ch) {
        const float* pa = a + ch * np;
        const float* pb = b + ch * np;
        float* da = d_a + ch * np;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x + 1 < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                const float g = static_cast<float>((double(pa[i + 1]) - pa[i]) -
                                                   (double(pb[i + 1]) - pb[i]));
                da[i + 1] += g;
                da[i] -= g;
            }
        }
        for (int y = 0; y + 1 < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                const float g = static_cast<float>((double(pa[i + w]) - pa[i]) -
                                                   (double(pb[i + w]) - pb[i]));
                da[i + w] += g;
                da[i] -= g;
            }
        }
    }
}

std::vector<float> to_feature_major(const ImageBuffer& img) {
    const std::size_t np = static_cast<std::size_t>(img.width) * img.height;
    std::vector<float> out(np * img.channels);
    for (std::size_t i = 0; i < np; ++i)
        for (int ch = 0; ch < img.channels; ++ch)
            out[static_cast<std::size_t>(ch) * np + i] = img.pixels[i * img.channels + ch];
    return out;
}

}  // namespace

ImageDistance make_image_distance(const std::string& tag) {
    if (tag != "L2-v1") throw ValidationError("make_image_distance: unknown tag '" + tag + "'");
    return [](const ImageBuffer& a, const ImageBuffer& b) {
        a.validate();
        b.validate();
        if (a.width != b.width || a.height != b.height || a.channels != b.channels)
            throw ValidationError("image distance: shape mismatch");
        const std::vector<float> fa = to_feature_major(a);
        const std::vector<float> fb = to_feature_major(b);
        return l2v1_planes(fa.data(), fb.data(), a.width, a.height, a.channels);
    };
}

InversionResult invert(const GeneratorBundle& g, const ImageBuffer& target, const Camera& cam,
                       const SurfaceField* sf, const InversionConfig& cfg,
                       const QuadratureSpec& quad, const StyleVector* init, int threads) {
    (void)threads;  // inner loop is a single optimization stream
    g.validate();
    cfg.validate();
    cam.validate();
    quad.validate();
    target.validate();
    if (target.width != cam.width || target.height != cam.height)
        throw ValidationError("invert: target resolution does not match the camera");
    if (target.channels != g.decoder.c_f)
        throw ValidationError("invert: target channels do not match the generator");

    const RayBatch rays = make_rays(cam);
    const SamplePlan plan = build_sample_plan(rays, quad, sf);
    const std::vector<float> tgt = to_feature_major(target);
    const int d_w = g.d_w();

    DiffRenderWorkspace ws;
    TriPlaneField tp;
    auto eval_tp = [&](const TriPlaneField& field) {
        diff_render_forward(field, g.decoder, plan, ws);
        return l2v1_planes(ws.features.data(), tgt.data(), cam.width, cam.height,
                           g.decoder.c_f);
    };
    auto eval = [&](const StyleVector& wv) {
        tp = apply_style(g, wv);
        return eval_tp(tp);
    };

    InversionResult res;
    if (init) {
        if (static_cast<int>(init->size()) != d_w)
            throw ValidationError("invert: init style dim mismatch");
        res.w = *init;
    } else {
        RngStream rng(cfg.seed, 0x1417);
        LatentVector z(g.d_z());
        for (float& v : z) v = static_cast<float>(rng.next_gaussian());
        res.w = map_latent(g.m_g, z);
    }

    StyleVector wv = res.w;
    double best = eval(wv);
    if (!std::isfinite(best)) throw NumericError("invert: non-finite loss at initialization");
    res.residual = best;
    res.converged = best < cfg.threshold;

    std::vector<double> m(d_w, 0.0), v(d_w, 0.0);
    std::vector<float> d_features, plane_grad;
    std::vector<double> grad(d_w);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    for (int step = 0; step < cfg.max_steps && !res.converged; ++step) {
        if (cfg.gradient_mode == GradientMode::kFiniteDifference) {
            // The style projection is linear, so probing coordinate k only
            // shifts the planes by h times that weight column; tp already
            // holds the planes at the current wv.
            const float h = 1e-2f;
            TriPlaneField probe = tp;
            for (int k = 0; k < d_w; ++k) {
                for (std::size_t o = 0; o < tp.data.size(); ++o)
                    probe.data[o] = tp.data[o] + h * g.s_g.w[o * d_w + k];
                const double up = eval_tp(probe);
                for (std::size_t o = 0; o < tp.data.size(); ++o)
                    probe.data[o] = tp.data[o] - h * g.s_g.w[o * d_w + k];
                const double dn = eval_tp(probe);
                grad[k] = (up - dn) / (2.0 * double(h));
            }
        } else {
            eval(wv);  // refresh caches at the current point
            d_features.assign(ws.features.size(), 0.0f);
            l2v1_planes_grad(ws.features.data(), tgt.data(), cam.width, cam.height,
                             g.decoder.c_f, d_features.data());
            plane_grad.assign(tp.data.size(), 0.0f);
            diff_render_backward(tp, g.decoder, plan, ws, d_features.data(), plane_grad.data(),
                                 nullptr);
            const std::vector<float> gw =
                apply_style_backward(g, wv, plane_grad.data(), nullptr, nullptr);
            for (int k = 0; k < d_w; ++k) grad[k] = gw[k];
        }

        const double t = step + 1;
        for (int k = 0; k < d_w; ++k) {
            m[k] = b1 * m[k] + (1 - b1) * grad[k];
            v[k] = b2 * v[k] + (1 - b2) * grad[k] * grad[k];
            const double mh = m[k] / (1 - std::pow(b1, t));
            const double vh = v[k] / (1 - std::pow(b2, t));
            wv[k] -= static_cast<float>(cfg.step_size * mh / (std::sqrt(vh) + eps));
        }

        const double cur = eval(wv);
        if (!std::isfinite(cur))
            throw NumericError("invert: non-finite loss at step " + std::to_string(step + 1));
        if (cur < best) {
            best = cur;
            res.w = wv;
        }
        res.steps_taken = step + 1;
        res.trajectory.push_back(best);
        res.residual = best;
        if (best < cfg.threshold) res.converged = true;
    }
    return res;
}

RenderedImage canonical_render(const GeneratorBundle& g, const StyleVector& w,
                               const NeutralFrame& frame, const QuadratureSpec& quad,
                               int threads) {
    frame.camera.validate();
    return render_style(g, w, frame.camera, nullptr, quad, threads);
}

EmbeddingProvider make_toy_embedder(int dim, std::uint64_t seed) {
    if (dim < 1) throw ValidationError("make_toy_embedder: dim must be positive");
    EmbeddingProvider p;
    p.mode = EmbeddingProvider::Mode::kToy;
    p.dim = dim;
    p.seed = seed;
    RngStream rng(seed, 0xe3bed);
    const int in = 8 * 8 * 3;
    p.proj.resize(static_cast<std::size_t>(dim) * in);
    const float scale = 1.0f / std::sqrt(static_cast<float>(in));
    for (float& v : p.proj) v = scale * static_cast<float>(rng.next_gaussian());
    return p;
}

Embedding embed(const EmbeddingProvider& p, const ImageBuffer& image) {
    if (p.mode != EmbeddingProvider::Mode::kToy)
        throw ValidationError("embed: file-mode provider resolves embeddings by id");
    image.validate();
    if (image.width < 8 || image.height < 8)
        throw ValidationError("embed: toy embedder needs at least an 8x8 image");

    // 8x8 box-average downsample of the first three channels (missing
    // channels read as zero), then the fixed projection, then L2 normalize.
    double sums[8][8][3] = {};
    int counts[8][8] = {};
    for (int y = 0; y < image.height; ++y) {
        const int by = static_cast<int>((static_cast<int64_t>(y) * 8) / image.height);
        for (int x = 0; x < image.width; ++x) {
            const int bx = static_cast<int>((static_cast<int64_t>(x) * 8) / image.width);
            ++counts[by][bx];
            for (int c = 0; c < 3 && c < image.channels; ++c)
                sums[by][bx][c] += image.at(x, y, c);
        }
    }
    std::vector<double> flat(8 * 8 * 3, 0.0);
    for (int by = 0; by < 8; ++by)
        for (int bx = 0; bx < 8; ++bx)
            for (int c = 0; c < 3; ++c)
                flat[(static_cast<std::size_t>(by) * 8 + bx) * 3 + c] =
                    sums[by][bx][c] / counts[by][bx];

    std::vector<float> out(p.dim);
    const int in = 8 * 8 * 3;
    for (int o = 0; o < p.dim; ++o) {
        double acc = 0;
        const float* row = p.proj.data() + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) acc += static_cast<double>(row[i]) * flat[i];
        out[o] = static_cast<float>(acc);
    }
    return normalize_embedding(std::move(out));
}

Embedding embed_id(const EmbeddingProvider& p, const std::string& id) {
    if (p.mode != EmbeddingProvider::Mode::kFile)
        throw ValidationError("embed_id: toy-mode provider embeds images, not ids");
    const auto it = p.index.find(id);
    if (it == p.index.end()) throw LookupError("embed_id: id '" + id + "' not in cache");
    const float* row = p.table.data() + static_cast<std::size_t>(it->second) * p.dim;
    Embedding e{{row, row + p.dim}, p.normalized};
    return e;
}

void save_embedding_cache(const std::string& dir, const std::vector<std::string>& ids,
                          const std::vector<Embedding>& embeddings) {
    if (ids.empty() || ids.size() != embeddings.size())
        throw ValidationError("save_embedding_cache: need matching, non-empty ids/embeddings");
    const int dim = static_cast<int>(embeddings.front().values.size());
    const bool normalized = embeddings.front().normalized;
    for (const Embedding& e : embeddings) {
        if (static_cast<int>(e.values.size()) != dim)
            throw ValidationError("save_embedding_cache: inconsistent embedding dims");
        if (e.normalized != normalized)
            throw ValidationError("save_embedding_cache: mixed normalization flags");
    }
    {
        std::unordered_map<std::string, int> seen;
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (!seen.emplace(ids[i], 1).second)
                throw ValidationError("save_embedding_cache: duplicate id '" + ids[i] + "'");
    }
    std::vector<float> table;
    table.reserve(ids.size() * dim);
    for (const Embedding& e : embeddings)
        table.insert(table.end(), e.values.begin(), e.values.end());
    write_tensor(dir + "/embeddings.ntc",
                 TensorBlob({static_cast<int64_t>(ids.size()), dim}, table));
    nlohmann::json man;
    man["ids"] = ids;
    man["dim"] = dim;
    man["normalized"] = normalized;
    save_json_file(dir + "/ids.json", man);
}

EmbeddingProvider load_embedding_cache(const std::string& dir) {
    const nlohmann::json man = load_json_file(dir + "/ids.json");
    check_keys(man, "embedding cache manifest", {"ids", "dim", "normalized"});
    EmbeddingProvider p;
    p.mode = EmbeddingProvider::Mode::kFile;
    p.ids = get_req<std::vector<std::string>>(man, "embedding cache manifest", "ids");
    p.dim = get_req<int>(man, "embedding cache manifest", "dim");
    p.normalized = get_req<bool>(man, "embedding cache manifest", "normalized");
    if (p.ids.empty() || p.dim < 1)
        throw FormatError("load_embedding_cache: empty id list or bad dim");
    const TensorBlob t = read_tensor(dir + "/embeddings.ntc");
    if (t.shape != std::vector<int64_t>{static_cast<int64_t>(p.ids.size()), p.dim})
        throw CorruptionError("load_embedding_cache: tensor shape disagrees with id manifest");
    p.table = t.data;
    for (std::size_t i = 0; i < p.ids.size(); ++i)
        if (!p.index.emplace(p.ids[i], static_cast<int>(i)).second)
            throw CorruptionError("load_embedding_cache: duplicate id '" + p.ids[i] + "'");
    return p;
}

namespace {
double cosine(const Embedding& a, const Embedding& b) {
    if (a.values.size() != b.values.size())
        throw ValidationError("noise_analysis: embedding dims differ");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += static_cast<double>(a.values[i]) * b.values[i];
        na += static_cast<double>(a.values[i]) * a.values[i];
        nb += static_cast<double>(b.values[i]) * b.values[i];
    }
    if (na < 1e-24 || nb < 1e-24)
        throw DegenerateInputError("noise_analysis: zero-norm embedding");
    return dot / std::sqrt(na * nb);
}
}  // namespace

NoiseReport noise_analysis(const std::vector<Embedding>& images,
                           const std::vector<Embedding>& main_prompts,
                           const std::vector<Embedding>& noise_prompts) {
    if (images.empty()) throw ValidationError("noise_analysis: need at least one image");
    if (images.size() != main_prompts.size() || images.size() != noise_prompts.size())
        throw ValidationError("noise_analysis: images and prompts must align");

    NoiseReport r;
    r.per_image.resize(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        NoiseImageRow& row = r.per_image[i];
        row.cos_main = cosine(images[i], main_prompts[i]);
        row.cos_noise = cosine(images[i], noise_prompts[i]);
        row.flagged = row.cos_noise > row.cos_main;
    }
    r.noise_avg.resize(noise_prompts.size());
    double total = 0;
    for (std::size_t i = 0; i < noise_prompts.size(); ++i) {
        double s = 0;
        for (const Embedding& img : images) s += cosine(noise_prompts[i], img);
        r.noise_avg[i] = s / static_cast<double>(images.size());
        total += r.noise_avg[i];
    }
    r.mean_noise_avg = total / static_cast<double>(noise_prompts.size());
    return r;
}

nlohmann::json noise_report_json(const NoiseReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const NoiseImageRow& row : r.per_image)
        per.push_back({{"cos_main", row.cos_main},
                       {"cos_noise", row.cos_noise},
                       {"flagged", row.flagged}});
    return {{"per_image", per},
            {"noise_avg", r.noise_avg},
            {"mean_noise_avg", r.mean_noise_avg}};
}

}  // namespace trideform
