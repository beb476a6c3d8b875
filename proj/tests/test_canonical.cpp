#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "trideform/canonical/canonical.hpp"
#include "trideform/core/error.hpp"

using namespace trideform;

namespace {

// Small generator used across these tests: 8^3 planes with 4 channels,
// 2-channel output images.
GeneratorBundle small_generator(std::uint64_t seed, int d_w = 16) {
    PlaneSpec planes;
    planes.res = 8;
    planes.channels = 4;
    RngStream rng(seed, 0);
    return make_generator(d_w, d_w, 8, planes, 2, rng);
}

bool images_equal(const ImageBuffer& a, const ImageBuffer& b) {
    return a.width == b.width && a.height == b.height && a.channels == b.channels &&
           std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * sizeof(float)) == 0;
}

std::vector<float> gaussian_vec(RngStream& rng, int n) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.next_gaussian());
    return v;
}

}  // namespace

TEST_CASE("apply_style reshapes the linear projection onto the planes") {
    GeneratorBundle g = small_generator(40);
    CHECK(g.planes.feature_count() == 3u * 8 * 8 * 4);
    CHECK(g.s_g.out == 768);

    SUBCASE("zero style returns the projection bias") {
        TriPlaneField tp = apply_style(g, StyleVector(16, 0.0f));
        CHECK(tp.res == 8);
        CHECK(tp.channels == 4);
        CHECK(std::memcmp(tp.data.data(), g.s_g.b.data(), tp.data.size() * sizeof(float)) == 0);
    }
    SUBCASE("random style matches a double matvec oracle") {
        RngStream rng(41, 0);
        StyleVector w = gaussian_vec(rng, 16);
        TriPlaneField tp = apply_style(g, w);
        for (std::size_t o = 0; o < tp.data.size(); o += 37) {
            double acc = g.s_g.b[o];
            for (int i = 0; i < 16; ++i) acc += double(g.s_g.w[o * 16 + i]) * w[i];
            CHECK(double(tp.data[o]) == doctest::Approx(acc).epsilon(1e-6).scale(1.0));
        }
    }
    SUBCASE("style dim mismatch rejected") {
        CHECK_THROWS_AS(apply_style(g, StyleVector(15, 0.0f)), ValidationError);
    }
}

TEST_CASE("apply_style_backward is the exact adjoint of the linear map") {
    GeneratorBundle g = small_generator(42);
    RngStream rng(43, 0);
    StyleVector w = gaussian_vec(rng, 16);
    std::vector<float> d_planes = gaussian_vec(rng, static_cast<int>(g.planes.feature_count()));

    std::vector<float> dw_sg(g.s_g.w.size(), 0.0f), db_sg(g.s_g.b.size(), 0.0f);
    std::vector<float> d_w = apply_style_backward(g, w, d_planes.data(), &dw_sg, &db_sg);

    for (int k = 0; k < 16; ++k) {
        double want = 0;
        for (std::size_t o = 0; o < g.planes.feature_count(); ++o)
            want += double(d_planes[o]) * g.s_g.w[o * 16 + k];
        CHECK(double(d_w[k]) == doctest::Approx(want).epsilon(1e-5).scale(1e-3));
    }
    for (std::size_t o = 0; o < g.planes.feature_count(); o += 53) {
        CHECK(db_sg[o] == d_planes[o]);
        for (int k = 0; k < 16; k += 5)
            CHECK(double(dw_sg[o * 16 + k]) ==
                  doctest::Approx(double(d_planes[o]) * w[k]).epsilon(1e-6).scale(1e-6));
    }
}

TEST_CASE("pre-training conditional generation is bit-identical to unconditional") {
    GeneratorBundle g = small_generator(44);
    RngStream rng(45, 0);
    LatentVector z = gaussian_vec(rng, 16);
    Embedding r{gaussian_vec(rng, 8), false};
    Camera cam = make_default_camera(12, 12);
    QuadratureSpec quad;
    quad.n_samples = 8;

    const StyleVector w = map_latent(g.m_g, z);
    RenderedImage direct = render_style(g, w, cam, nullptr, quad);
    for (float alpha : {0.0f, 0.3f, 1.0f}) {
        RenderedImage img = generate_image(g, z, r, alpha, cam, nullptr, quad);
        CHECK(images_equal(img.feature, direct.feature));
        CHECK(images_equal(img.depth, direct.depth));
    }

    // Training T_G's head breaks the identity for alpha > 0 but not alpha = 0.
    RngStream rng2(46, 0);
    he_init(g.t_g.layers.back(), rng2);
    RenderedImage cond = generate_image(g, z, r, 1.0f, cam, nullptr, quad);
    RenderedImage uncond = generate_image(g, z, r, 0.0f, cam, nullptr, quad);
    CHECK(images_equal(uncond.feature, direct.feature));
    CHECK_FALSE(images_equal(cond.feature, direct.feature));
}

TEST_CASE("generator checkpoint round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "td_gen_ckpt";
    fs::remove_all(dir);

    GeneratorBundle g = small_generator(47);
    RngStream rng(48, 0);
    he_init(g.t_g.layers.back(), rng);  // exercise a non-zero T_G head
    g.t_g.zero_marker = false;
    save_generator(dir.string(), g);
    GeneratorBundle back = load_generator(dir.string());

    CHECK(back.d_z() == g.d_z());
    CHECK(back.d_w() == g.d_w());
    CHECK(back.d_r() == g.d_r());
    CHECK(back.planes.res == g.planes.res);
    CHECK(std::memcmp(back.s_g.w.data(), g.s_g.w.data(), g.s_g.w.size() * sizeof(float)) == 0);
    CHECK(back.t_g.zero_marker == g.t_g.zero_marker);

    RngStream rng2(49, 0);
    LatentVector z = gaussian_vec(rng2, 16);
    CHECK(map_latent(back.m_g, z) == map_latent(g.m_g, z));

    // A non-generator manifest in the same layout must be refused.
    nlohmann::json man = load_json_file((dir / "manifest.json").string());
    man["kind"] = "discriminator";
    save_json_file((dir / "manifest.json").string(), man);
    CHECK_THROWS_AS(load_generator(dir.string()), FormatError);

    fs::remove_all(dir);
}

TEST_CASE("neutral frame: frontal camera at 2.7 plus canonical morph") {
    ToyMorphModel model = make_toy_head(7, 12, 6, 8);
    NeutralFrame frame = make_neutral_frame(model, 24, 24);
    CHECK_NOTHROW(frame.camera.validate());
    CHECK(frame.camera.t.z == doctest::Approx(2.7));
    CHECK(frame.camera.t.x == 0.0f);
    CHECK(frame.camera.t.y == 0.0f);
    // Optical axis: camera-space +z maps to world -z, aimed at the origin.
    const Vec3 axis = frame.camera.R * Vec3(0, 0, 1);
    CHECK(axis.x == 0.0f);
    CHECK(axis.y == 0.0f);
    CHECK(axis.z == -1.0f);
    const MorphParams canon = canonical_params(model);
    CHECK(frame.morph.beta == canon.beta);
    CHECK(frame.morph.theta == canon.theta);
    CHECK(frame.morph.psi == canon.psi);
}

TEST_CASE("image distance: pixel L2 plus half gradient L2") {
    ImageDistance dist = make_image_distance("L2-v1");
    CHECK_THROWS_AS(make_image_distance("lpips"), ValidationError);

    ImageBuffer a(2, 2, 1), b(2, 2, 1);
    a.pixels = {1.0f, 3.0f, 0.0f, 2.0f};
    b.pixels = {0.0f, 1.0f, 1.0f, 1.0f};
    // diff = [1,2,-1,1]; pixel term 1+4+1+1 = 7.
    // x-gradients: a [2,2], b [1,0] -> (1)^2+(2)^2 = 5.
    // y-gradients: a [-1,-1], b [1,0] -> (-2)^2+(-1)^2 = 5.
    CHECK(dist(a, b) == doctest::Approx(7.0 + 0.5 * 10.0).epsilon(1e-12));
    CHECK(dist(a, a) == 0.0);

    ImageBuffer c(2, 3, 1);
    CHECK_THROWS_AS(dist(a, c), ValidationError);
}

TEST_CASE("inversion from the true style vector converges in zero steps") {
    GeneratorBundle g = small_generator(50);
    RngStream rng(51, 0);
    StyleVector w_star = map_latent(g.m_g, gaussian_vec(rng, 16));
    Camera cam = make_default_camera(12, 12);
    QuadratureSpec quad;
    quad.n_samples = 8;

    // Build the target exactly the way the optimizer's forward path does.
    const RayBatch rays = make_rays(cam);
    const SamplePlan plan = build_sample_plan(rays, quad, nullptr);
    DiffRenderWorkspace ws;
    diff_render_forward(apply_style(g, w_star), g.decoder, plan, ws);
    ImageBuffer target(12, 12, 2);
    const std::size_t np = 12 * 12;
    for (std::size_t i = 0; i < np; ++i)
        for (int c = 0; c < 2; ++c)
            target.pixels[i * 2 + c] = ws.features[c * np + i];

    InversionConfig cfg;
    cfg.max_steps = 5;
    const InversionResult res = invert(g, target, cam, nullptr, cfg, quad, &w_star);
    CHECK(res.residual == 0.0);
    CHECK(res.steps_taken == 0);
    CHECK(res.converged);
    CHECK(res.w == w_star);
}

TEST_CASE("inversion recovers a rendered target from a random start") {
    GeneratorBundle g = small_generator(52);
    RngStream rng(53, 0);
    StyleVector w_star = map_latent(g.m_g, gaussian_vec(rng, 16));

    ToyMorphModel model = make_toy_head(9, 8, 6, 6);
    NeutralFrame frame = make_neutral_frame(model, 16, 16);
    QuadratureSpec quad;
    quad.n_samples = 16;
    const ImageBuffer target = canonical_render(g, w_star, frame, quad).feature;

    InversionConfig cfg;
    cfg.max_steps = 600;
    cfg.step_size = 0.1f;
    cfg.gradient_mode = GradientMode::kReverse;
    cfg.threshold = 1e-6;
    cfg.seed = 3;
    const InversionResult res = invert(g, target, frame.camera, nullptr, cfg, quad);

    CHECK(std::isfinite(res.residual));
    CHECK(res.residual < 0.05);
    // Reported residuals are best-so-far, hence non-increasing.
    for (std::size_t i = 1; i < res.trajectory.size(); ++i)
        CHECK(res.trajectory[i] <= res.trajectory[i - 1]);

    const ImageBuffer recon = canonical_render(g, res.w, frame, quad).feature;
    CHECK(image_psnr(recon, target) > 30.0);
}

TEST_CASE("finite-difference mode makes comparable progress on a tiny fixture") {
    GeneratorBundle g = small_generator(54, 8);
    RngStream rng(55, 0);
    StyleVector w_star = map_latent(g.m_g, gaussian_vec(rng, 8));
    Camera cam = make_default_camera(8, 8);
    QuadratureSpec quad;
    quad.n_samples = 8;
    const ImageBuffer target = render_style(g, w_star, cam, nullptr, quad).feature;

    InversionConfig cfg;
    cfg.max_steps = 40;
    cfg.step_size = 0.05f;
    cfg.threshold = 0.0;
    cfg.seed = 5;

    cfg.gradient_mode = GradientMode::kFiniteDifference;
    const InversionResult fd = invert(g, target, cam, nullptr, cfg, quad);
    cfg.gradient_mode = GradientMode::kReverse;
    const InversionResult rev = invert(g, target, cam, nullptr, cfg, quad);

    // Both modes share the seeded start; FD is the mode under test here (the
    // reverse path gets its workout in the recovery case above).
    const double start = fd.trajectory.empty() ? 0.0 : fd.trajectory.front();
    CHECK(fd.residual < 0.5 * start);
    CHECK(rev.residual < start);
}

TEST_CASE("camera mismatch leaves the residual above threshold") {
    GeneratorBundle g = small_generator(56);
    RngStream rng(57, 0);
    StyleVector w_star = map_latent(g.m_g, gaussian_vec(rng, 16));
    Camera render_cam = make_default_camera(12, 12);
    // Same intrinsics, pushed-in distance: a geometry the optimizer cannot
    // explain away from the supplied viewpoint.
    Camera wrong_cam = make_default_camera(12, 12, 2.0f);
    QuadratureSpec quad;
    quad.n_samples = 8;
    const ImageBuffer target = render_style(g, w_star, render_cam, nullptr, quad).feature;

    InversionConfig cfg;
    cfg.max_steps = 15;
    cfg.gradient_mode = GradientMode::kReverse;
    cfg.threshold = 1e-4;
    const InversionResult res = invert(g, target, wrong_cam, nullptr, cfg, quad);
    CHECK_FALSE(res.converged);
    CHECK(res.residual > cfg.threshold);
}

TEST_CASE("invert validation") {
    GeneratorBundle g = small_generator(58);
    Camera cam = make_default_camera(12, 12);
    QuadratureSpec quad;
    quad.n_samples = 4;
    InversionConfig cfg;

    ImageBuffer wrong_res(10, 12, 2);
    CHECK_THROWS_AS(invert(g, wrong_res, cam, nullptr, cfg, quad), ValidationError);
    ImageBuffer wrong_ch(12, 12, 3);
    CHECK_THROWS_AS(invert(g, wrong_ch, cam, nullptr, cfg, quad), ValidationError);

    ImageBuffer ok(12, 12, 2);
    StyleVector bad_init(15, 0.0f);
    CHECK_THROWS_AS(invert(g, ok, cam, nullptr, cfg, quad, &bad_init), ValidationError);

    InversionConfig bad = cfg;
    bad.max_steps = 0;
    CHECK_THROWS_AS(invert(g, ok, cam, nullptr, bad, quad), ValidationError);
    bad = cfg;
    bad.step_size = 0.0f;
    CHECK_THROWS_AS(invert(g, ok, cam, nullptr, bad, quad), ValidationError);
    bad = cfg;
    bad.distance = "L1";
    CHECK_THROWS_AS(invert(g, ok, cam, nullptr, bad, quad), ValidationError);

    CHECK(gradient_mode_from_name("reverse") == GradientMode::kReverse);
    CHECK_THROWS_AS(gradient_mode_from_name("adjoint"), ValidationError);
    CHECK(std::string(gradient_mode_name(GradientMode::kFiniteDifference)) ==
          "finite_difference");
}

TEST_CASE("canonical_render equals render_image bit-exactly") {
    GeneratorBundle g = small_generator(59);
    RngStream rng(60, 0);
    StyleVector w = map_latent(g.m_g, gaussian_vec(rng, 16));
    ToyMorphModel model = make_toy_head(11, 8, 6, 6);
    NeutralFrame frame = make_neutral_frame(model, 10, 10);
    QuadratureSpec quad;
    quad.n_samples = 8;

    RenderedImage via_frame = canonical_render(g, w, frame, quad);
    RenderedImage direct =
        render_image(apply_style(g, w), g.decoder, nullptr, frame.camera, quad);
    CHECK(images_equal(via_frame.feature, direct.feature));
    CHECK(images_equal(via_frame.depth, direct.depth));

    StyleVector w2 = map_latent(g.m_g, gaussian_vec(rng, 16));
    RenderedImage other = canonical_render(g, w2, frame, quad);
    double l2 = 0;
    for (std::size_t i = 0; i < other.feature.pixels.size(); ++i) {
        const double d = double(other.feature.pixels[i]) - via_frame.feature.pixels[i];
        l2 += d * d;
    }
    CHECK(l2 > 0.0);
}

TEST_CASE("toy embedder") {
    EmbeddingProvider p = make_toy_embedder(16, 99);
    ImageBuffer img(20, 14, 3);
    RngStream rng(61, 0);
    for (float& v : img.pixels) v = static_cast<float>(rng.next_uniform());

    Embedding e1 = embed(p, img);
    Embedding e2 = embed(p, img);
    CHECK(e1.values == e2.values);
    CHECK(e1.normalized);
    double n = 0;
    for (float v : e1.values) n += double(v) * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));

    // Same seed, fresh provider: identical; different seed: different.
    EmbeddingProvider p_same = make_toy_embedder(16, 99);
    CHECK(embed(p_same, img).values == e1.values);
    EmbeddingProvider p_other = make_toy_embedder(16, 100);
    CHECK(embed(p_other, img).values != e1.values);

    ImageBuffer tiny(6, 6, 3);
    CHECK_THROWS_AS(embed(p, tiny), ValidationError);
    CHECK_THROWS_AS(embed_id(p, "x"), ValidationError);

    ImageBuffer black(16, 16, 3);
    CHECK_THROWS_AS(embed(p, black), DegenerateInputError);
}

TEST_CASE("embedding cache round trip and lookup") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "td_emb_cache";
    fs::remove_all(dir);
    fs::create_directories(dir);

    RngStream rng(62, 0);
    std::vector<std::string> ids = {"s0", "s1", "s2"};
    std::vector<Embedding> embs;
    for (int i = 0; i < 3; ++i) embs.push_back(normalize_embedding(gaussian_vec(rng, 8)));

    save_embedding_cache(dir.string(), ids, embs);
    EmbeddingProvider p = load_embedding_cache(dir.string());
    CHECK(p.dim == 8);
    CHECK(p.normalized);
    for (int i = 0; i < 3; ++i) {
        Embedding e = embed_id(p, ids[i]);
        CHECK(e.values == embs[i].values);
        CHECK(e.normalized);
    }
    CHECK_THROWS_AS(embed_id(p, "s3"), LookupError);
    CHECK_THROWS_AS(embed(p, ImageBuffer(16, 16, 3)), ValidationError);

    SUBCASE("inconsistent dims refused at save") {
        std::vector<Embedding> bad = embs;
        bad[1].values.pop_back();
        CHECK_THROWS_AS(save_embedding_cache(dir.string(), ids, bad), ValidationError);
        std::vector<Embedding> mixed = embs;
        mixed[2].normalized = false;
        CHECK_THROWS_AS(save_embedding_cache(dir.string(), ids, mixed), ValidationError);
        CHECK_THROWS_AS(save_embedding_cache(dir.string(), {"a", "a", "b"}, embs),
                        ValidationError);
    }
    SUBCASE("manifest/tensor disagreement refused at load") {
        nlohmann::json man = load_json_file((dir / "ids.json").string());
        man["ids"] = std::vector<std::string>{"s0", "s1"};
        save_json_file((dir / "ids.json").string(), man);
        CHECK_THROWS_AS(load_embedding_cache(dir.string()), CorruptionError);
    }

    fs::remove_all(dir);
}

TEST_CASE("noise analysis on a constructed similarity fixture") {
    // Orthonormal frame e0, e1, e2 in R^4.
    Embedding img{{1, 0, 0, 0}, true};
    auto mix = [](double c, int axis) {
        Embedding e{{0, 0, 0, 0}, true};
        e.values[0] = static_cast<float>(c);
        e.values[axis] = static_cast<float>(std::sqrt(1.0 - c * c));
        return e;
    };
    // Image 0: main sim 0.2 < noise sim 0.3 -> flagged.
    // Image 1 equals its main prompt (cos 1), noise sim 0.3 -> clean.
    std::vector<Embedding> images = {img, img};
    std::vector<Embedding> mains = {mix(0.2, 1), img};
    std::vector<Embedding> noises = {mix(0.3, 2), mix(0.3, 3)};

    NoiseReport r = noise_analysis(images, mains, noises);
    CHECK(r.per_image[0].cos_main == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(r.per_image[0].cos_noise == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(r.per_image[0].flagged);
    CHECK(r.per_image[1].cos_main == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_FALSE(r.per_image[1].flagged);
    // Both images equal e0, so each noise prompt averages to its e0 weight.
    CHECK(r.noise_avg[0] == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(r.noise_avg[1] == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(r.mean_noise_avg == doctest::Approx(0.3).epsilon(1e-6));

    nlohmann::json j = noise_report_json(r);
    CHECK(j.at("per_image").size() == 2);
    CHECK(j.at("per_image")[0].at("flagged").get<bool>());
    CHECK(j.at("noise_avg").size() == 2);

    SUBCASE("validation") {
        CHECK_THROWS_AS(noise_analysis({}, {}, {}), ValidationError);
        CHECK_THROWS_AS(noise_analysis(images, {mains[0]}, noises), ValidationError);
        std::vector<Embedding> zero = {Embedding{{0, 0, 0, 0}, false}, img};
        CHECK_THROWS_AS(noise_analysis(zero, mains, noises), DegenerateInputError);
    }
}

TEST_CASE("noise analysis is permutation-equivariant in the image list") {
    RngStream rng(63, 0);
    std::vector<Embedding> images, mains, noises;
    for (int i = 0; i < 5; ++i) {
        images.push_back(normalize_embedding(gaussian_vec(rng, 6)));
        mains.push_back(normalize_embedding(gaussian_vec(rng, 6)));
        noises.push_back(normalize_embedding(gaussian_vec(rng, 6)));
    }
    const NoiseReport base = noise_analysis(images, mains, noises);

    const int perm[5] = {3, 0, 4, 1, 2};
    std::vector<Embedding> pi, pm, pn;
    for (int i : perm) {
        pi.push_back(images[i]);
        pm.push_back(mains[i]);
        pn.push_back(noises[i]);
    }
    const NoiseReport shuffled = noise_analysis(pi, pm, pn);
    for (int k = 0; k < 5; ++k) {
        CHECK(shuffled.per_image[k].cos_main ==
              doctest::Approx(base.per_image[perm[k]].cos_main).epsilon(1e-12));
        CHECK(shuffled.per_image[k].cos_noise ==
              doctest::Approx(base.per_image[perm[k]].cos_noise).epsilon(1e-12));
        CHECK(shuffled.noise_avg[k] ==
              doctest::Approx(base.noise_avg[perm[k]]).epsilon(1e-12));
    }
    CHECK(shuffled.mean_noise_avg == doctest::Approx(base.mean_noise_avg).epsilon(1e-12));
}
