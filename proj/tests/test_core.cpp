#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "trideform/core/error.hpp"
#include "trideform/core/image.hpp"
#include "trideform/core/json_util.hpp"
#include "trideform/core/kernels.hpp"
#include "trideform/core/parallel.hpp"
#include "trideform/core/rng.hpp"
#include "trideform/core/tensor.hpp"

using namespace trideform;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("rng: same seed gives identical sequences") {
    RngStream a(42, 7), b(42, 7);
    auto va = gaussian(a, 100);
    auto vb = gaussian(b, 100);
    CHECK(va == vb);
    RngStream c(42, 7), d(42, 7);
    for (int i = 0; i < 100; ++i) CHECK(c.next_u64() == d.next_u64());
}

TEST_CASE("rng: gaussian moments at n=1e6") {
    RngStream rng(3, 0);
    const std::size_t n = 1000000;
    auto v = gaussian(rng, n);
    double mean = 0;
    for (float x : v) mean += x;
    mean /= static_cast<double>(n);
    double var = 0;
    for (float x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n - 1);
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 0.01);
}

TEST_CASE("rng: distinct streams are uncorrelated") {
    RngStream a(5, 0), b(5, 1);
    const std::size_t n = 100000;
    auto va = gaussian(a, n);
    auto vb = gaussian(b, n);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += va[i];
        mb += vb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (va[i] - ma) * (vb[i] - mb);
        sa += (va[i] - ma) * (va[i] - ma);
        sb += (vb[i] - mb) * (vb[i] - mb);
    }
    CHECK(std::abs(cov / std::sqrt(sa * sb)) < 0.01);
}

TEST_CASE("rng: substreams differ from parent and from each other") {
    RngStream base(9, 2);
    RngStream s1 = base.substream(1);
    RngStream s2 = base.substream(2);
    RngStream s1_again = base.substream(1);
    CHECK(s1.next_u64() != s2.next_u64());
    RngStream s1_fresh = base.substream(1);
    CHECK(s1_again.next_u64() == s1_fresh.next_u64());
    // Parent unaffected by derivation.
    RngStream base2(9, 2);
    CHECK(base.next_u64() == base2.next_u64());
}

TEST_CASE("rng: uniforms lie in [0,1)") {
    RngStream rng(1, 3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.next_uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("rng: gaussian rejects n=0") {
    RngStream rng(1, 0);
    CHECK_THROWS_AS(gaussian(rng, 0), ValidationError);
}

TEST_CASE("rng: frozen sequence for seed=1 stream=0") {
    std::ifstream f(std::string(TD_GOLDEN_DIR) + "/rng_seed1_stream0.txt");
    REQUIRE_MESSAGE(f.good(), "golden file missing");

    RngStream raw_stream(1, 0);
    RngStream uni_stream(1, 0);
    RngStream gauss_stream(1, 0);
    std::vector<float> gauss = gaussian(gauss_stream, 16);
    std::size_t gauss_idx = 0;

    std::string tag;
    int checked = 0;
    while (f >> tag) {
        if (tag == "#") {
            std::string rest;
            std::getline(f, rest);
            continue;
        }
        if (tag == "raw") {
            std::string hex;
            f >> hex;
            CHECK(raw_stream.next_u64() == std::stoull(hex, nullptr, 16));
        } else if (tag == "uniform") {
            double v;
            f >> v;
            CHECK(uni_stream.next_uniform() == v);
        } else if (tag == "gauss") {
            float v;
            f >> v;
            REQUIRE(gauss_idx < gauss.size());
            CHECK(gauss[gauss_idx++] == v);
        } else {
            FAIL("unknown golden tag ", tag);
        }
        ++checked;
    }
    CHECK(checked == 48);
}

TEST_CASE("tensor: write/read round trip") {
    const std::string path = tmp_path("td_rt.ntc");
    TensorBlob blob({2, 3}, {0, 1, 2, 3, 4, 5});
    write_tensor(path, blob);
    TensorBlob back = read_tensor(path);
    CHECK(back.shape == blob.shape);
    CHECK(back.data == blob.data);
}

TEST_CASE("tensor: 1000 random blobs round trip bit-exact") {
    RngStream rng(77, 0);
    const std::string path = tmp_path("td_rt_many.ntc");
    for (int trial = 0; trial < 1000; ++trial) {
        const int64_t rows = 1 + static_cast<int64_t>(rng.next_u64() % 8);
        const int64_t cols = 1 + static_cast<int64_t>(rng.next_u64() % 8);
        TensorBlob blob = TensorBlob::zeros({rows, cols});
        auto vals = gaussian(rng, blob.data.size());
        blob.data.assign(vals.begin(), vals.end());
        write_tensor(path, blob);
        TensorBlob back = read_tensor(path);
        REQUIRE(back.shape == blob.shape);
        REQUIRE(0 == std::memcmp(back.data.data(), blob.data.data(),
                                 blob.data.size() * sizeof(float)));
    }
}

namespace {

void write_raw_container(const std::string& path, const std::string& magic,
                         const std::string& header, std::size_t payload_floats) {
    std::ofstream f(path, std::ios::binary);
    f.write(magic.data(), 4);
    const uint32_t len = static_cast<uint32_t>(header.size());
    unsigned char lb[4] = {static_cast<unsigned char>(len & 0xFF),
                           static_cast<unsigned char>((len >> 8) & 0xFF),
                           static_cast<unsigned char>((len >> 16) & 0xFF),
                           static_cast<unsigned char>((len >> 24) & 0xFF)};
    f.write(reinterpret_cast<const char*>(lb), 4);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    const std::vector<char> zeros(payload_floats * 4, 0);
    f.write(zeros.data(), static_cast<std::streamsize>(zeros.size()));
}

}  // namespace

TEST_CASE("tensor: malformed files are rejected") {
    const std::string path = tmp_path("td_bad.ntc");

    SUBCASE("bad magic") {
        write_raw_container(path, "XXXX", R"({"dtype":"f32","shape":[1]})", 1);
        CHECK_THROWS_AS(read_tensor(path), FormatError);
    }
    SUBCASE("empty shape") {
        write_raw_container(path, "NTC1", R"({"dtype":"f32","shape":[]})", 0);
        CHECK_THROWS_AS(read_tensor(path), FormatError);
    }
    SUBCASE("unparseable header") {
        write_raw_container(path, "NTC1", "{not json", 0);
        CHECK_THROWS_AS(read_tensor(path), FormatError);
    }
    SUBCASE("shape/payload mismatch") {
        write_raw_container(path, "NTC1", R"({"dtype":"f32","shape":[4]})", 3);
        CHECK_THROWS_AS(read_tensor(path), CorruptionError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(read_tensor(tmp_path("td_nope.ntc")), IoError); }
    SUBCASE("wrong dtype") {
        write_raw_container(path, "NTC1", R"({"dtype":"f64","shape":[1]})", 2);
        CHECK_THROWS_AS(read_tensor(path), FormatError);
    }
}

TEST_CASE("tensor: validate catches shape/data disagreement") {
    TensorBlob blob;
    blob.shape = {2, 2};
    blob.data = {1, 2, 3};
    CHECK_THROWS_AS(blob.validate(), ValidationError);
    CHECK_THROWS_AS(TensorBlob::zeros({0, 3}), ValidationError);
}

TEST_CASE("ppm: all-gray 0.5 quantizes to 128 everywhere") {
    ImageBuffer img(8, 4, 3);
    for (float& p : img.pixels) p = 0.5f;
    const std::string path = tmp_path("td_gray.ppm");
    write_ppm(path, img);
    auto bytes = read_bytes(path);
    const std::string header = "P6\n8 4\n255\n";
    REQUIRE(bytes.size() == header.size() + 8 * 4 * 3);
    CHECK(0 == std::memcmp(bytes.data(), header.data(), header.size()));
    for (std::size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == 128);
}

TEST_CASE("ppm: clamps before quantizing and is pure") {
    ImageBuffer img(2, 1, 3);
    img.pixels = {-1.0f, 0.0f, 2.0f, 1.0f, 0.25f, 0.75f};
    const std::string p1 = tmp_path("td_p1.ppm"), p2 = tmp_path("td_p2.ppm");
    write_ppm(p1, img);
    write_ppm(p2, img);
    auto b1 = read_bytes(p1), b2 = read_bytes(p2);
    CHECK(b1 == b2);
    const std::size_t off = std::string("P6\n2 1\n255\n").size();
    CHECK(b1[off + 0] == 0);
    CHECK(b1[off + 2] == 255);
    CHECK(b1[off + 3] == 255);
    CHECK(b1[off + 4] == 64);   // round(63.75) = 64
    CHECK(b1[off + 5] == 191);  // round(191.25) = 191
}

TEST_CASE("ppm: single channel replicates to gray") {
    ImageBuffer img(1, 1, 1);
    img.pixels = {1.0f};
    const std::string path = tmp_path("td_gray1.ppm");
    write_ppm(path, img);
    auto bytes = read_bytes(path);
    const std::size_t off = std::string("P6\n1 1\n255\n").size();
    CHECK(bytes[off] == 255);
    CHECK(bytes[off + 1] == 255);
    CHECK(bytes[off + 2] == 255);
}

TEST_CASE("image: tensor conversion round trips") {
    ImageBuffer img(3, 2, 4);
    RngStream rng(8, 0);
    auto v = gaussian(rng, img.pixels.size());
    img.pixels.assign(v.begin(), v.end());
    ImageBuffer back = image_from_tensor(image_to_tensor(img));
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    CHECK(back.channels == img.channels);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("parallel_for: identical coverage for any thread count") {
    const std::size_t n = 1237;
    std::vector<int> serial(n, 0), threaded(n, 0);
    parallel_for(n, 64, 1, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) serial[i] = static_cast<int>(i * 3 + 1);
    });
    parallel_for(n, 64, 4, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) threaded[i] = static_cast<int>(i * 3 + 1);
    });
    CHECK(serial == threaded);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(serial[i] == static_cast<int>(i * 3 + 1));
}

TEST_CASE("parallel_for: chunk boundaries are fixed") {
    std::vector<std::pair<std::size_t, std::size_t>> chunks;
    parallel_for(100, 32, 1, [&](std::size_t b, std::size_t e) { chunks.emplace_back(b, e); });
    REQUIRE(chunks.size() == 4);
    CHECK(chunks[3] == std::pair<std::size_t, std::size_t>{96, 100});
    CHECK_THROWS_AS(parallel_for(10, 0, 1, [](std::size_t, std::size_t) {}), ValidationError);
}

namespace {

std::vector<float> random_vec(RngStream& rng, std::size_t n) {
    auto v = gaussian(rng, n);
    return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("kernels: scalar and avx2 agree") {
    const kern::Ops& s = kern::scalar_ops();
    const kern::Ops* a = kern::avx2_ops();
    if (!a) {
        MESSAGE("avx2 unavailable; skipping cross-backend checks");
        return;
    }

    RngStream rng(123, 0);
    for (std::size_t n : {std::size_t(1), std::size_t(7), std::size_t(8), std::size_t(9),
                          std::size_t(64), std::size_t(1000)}) {
        auto x = random_vec(rng, n);
        auto y = random_vec(rng, n);

        // Reductions agree to tolerance and with a double-precision reference.
        double ref_dot = 0, ref_sum = 0, ref_sq = 0;
        for (std::size_t i = 0; i < n; ++i) {
            ref_dot += static_cast<double>(x[i]) * y[i];
            ref_sum += x[i];
            ref_sq += static_cast<double>(x[i]) * x[i];
        }
        CHECK(s.dot(x.data(), y.data(), n) == doctest::Approx(ref_dot).epsilon(1e-4));
        CHECK(a->dot(x.data(), y.data(), n) == doctest::Approx(ref_dot).epsilon(1e-4));
        CHECK(a->sum(x.data(), n) == doctest::Approx(ref_sum).epsilon(1e-4));
        CHECK(a->sum_sq(x.data(), n) == doctest::Approx(ref_sq).epsilon(1e-4));

        // Elementwise ops are bit-exact across backends.
        auto ys = y, ya = y;
        s.axpy(0.37f, x.data(), ys.data(), n);
        a->axpy(0.37f, x.data(), ya.data(), n);
        CHECK(0 == std::memcmp(ys.data(), ya.data(), n * sizeof(float)));

        auto xs = x, xa = x;
        s.scale(-1.25f, xs.data(), n);
        a->scale(-1.25f, xa.data(), n);
        CHECK(0 == std::memcmp(xs.data(), xa.data(), n * sizeof(float)));

        std::vector<float> ls(n), la(n), gs(n), ga(n);
        s.leaky_relu(x.data(), ls.data(), 0.2f, n);
        a->leaky_relu(x.data(), la.data(), 0.2f, n);
        CHECK(0 == std::memcmp(ls.data(), la.data(), n * sizeof(float)));
        s.leaky_relu_bwd(x.data(), y.data(), gs.data(), 0.2f, n);
        a->leaky_relu_bwd(x.data(), y.data(), ga.data(), 0.2f, n);
        CHECK(0 == std::memcmp(gs.data(), ga.data(), n * sizeof(float)));
    }

    SUBCASE("matrix ops") {
        const std::size_t rows = 13, cols = 21;
        auto w = random_vec(rng, rows * cols);
        auto x = random_vec(rng, cols);
        auto xr = random_vec(rng, rows);
        auto b = random_vec(rng, rows);

        std::vector<float> ys(rows), ya(rows);
        s.gemv(w.data(), x.data(), b.data(), ys.data(), rows, cols);
        a->gemv(w.data(), x.data(), b.data(), ya.data(), rows, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            double ref = b[r];
            for (std::size_t c = 0; c < cols; ++c) ref += static_cast<double>(w[r * cols + c]) * x[c];
            CHECK(ys[r] == doctest::Approx(ref).epsilon(1e-4));
            CHECK(ya[r] == doctest::Approx(ref).epsilon(1e-4));
        }

        std::vector<float> ts(cols), ta(cols);
        s.gemv_t(w.data(), xr.data(), ts.data(), rows, cols);
        a->gemv_t(w.data(), xr.data(), ta.data(), rows, cols);
        CHECK(0 == std::memcmp(ts.data(), ta.data(), cols * sizeof(float)));

        auto as_ = random_vec(rng, rows * cols);
        auto aa = as_;
        s.ger_acc(xr.data(), x.data(), as_.data(), rows, cols);
        a->ger_acc(xr.data(), x.data(), aa.data(), rows, cols);
        CHECK(0 == std::memcmp(as_.data(), aa.data(), rows * cols * sizeof(float)));
    }

    SUBCASE("corner blends") {
        for (std::size_t c : {std::size_t(3), std::size_t(8), std::size_t(11)}) {
            auto t0 = random_vec(rng, c), t1 = random_vec(rng, c);
            auto t2 = random_vec(rng, c), t3 = random_vec(rng, c);
            const float w[4] = {0.1f, 0.2f, 0.3f, 0.4f};
            std::vector<float> accs(c, 0.5f), acca(c, 0.5f);
            s.wsum4(t0.data(), t1.data(), t2.data(), t3.data(), w, accs.data(), c);
            a->wsum4(t0.data(), t1.data(), t2.data(), t3.data(), w, acca.data(), c);
            CHECK(0 == std::memcmp(accs.data(), acca.data(), c * sizeof(float)));

            auto g = random_vec(rng, c);
            auto u0 = t0, u1 = t1, u2 = t2, u3 = t3;
            auto v0 = t0, v1 = t1, v2 = t2, v3 = t3;
            s.wscatter4(u0.data(), u1.data(), u2.data(), u3.data(), w, g.data(), c);
            a->wscatter4(v0.data(), v1.data(), v2.data(), v3.data(), w, g.data(), c);
            CHECK(0 == std::memcmp(u0.data(), v0.data(), c * sizeof(float)));
            CHECK(0 == std::memcmp(u3.data(), v3.data(), c * sizeof(float)));
        }
    }

    SUBCASE("batched dense") {
        const std::size_t out = 5, in = 7, n = 33;
        auto w = random_vec(rng, out * in);
        auto b = random_vec(rng, out);
        auto x = random_vec(rng, in * n);
        auto dy = random_vec(rng, out * n);

        std::vector<float> ys(out * n), ya(out * n);
        s.dense_batch(w.data(), b.data(), x.data(), ys.data(), out, in, n);
        a->dense_batch(w.data(), b.data(), x.data(), ya.data(), out, in, n);
        CHECK(0 == std::memcmp(ys.data(), ya.data(), out * n * sizeof(float)));
        for (std::size_t o = 0; o < out; ++o)
            for (std::size_t sM = 0; sM < n; sM += 13) {
                double ref = b[o];
                for (std::size_t i = 0; i < in; ++i)
                    ref += static_cast<double>(w[o * in + i]) * x[i * n + sM];
                CHECK(ys[o * n + sM] == doctest::Approx(ref).epsilon(1e-4));
            }

        std::vector<float> dxs(in * n), dxa(in * n);
        s.dense_batch_bwd(w.data(), dy.data(), dxs.data(), out, in, n);
        a->dense_batch_bwd(w.data(), dy.data(), dxa.data(), out, in, n);
        CHECK(0 == std::memcmp(dxs.data(), dxa.data(), in * n * sizeof(float)));

        std::vector<float> dws(out * in, 0.1f), dwa(out * in, 0.1f);
        std::vector<float> dbs(out, -0.2f), dba(out, -0.2f);
        s.dense_batch_wgrad(dy.data(), x.data(), dws.data(), dbs.data(), out, in, n);
        a->dense_batch_wgrad(dy.data(), x.data(), dwa.data(), dba.data(), out, in, n);
        for (std::size_t i = 0; i < out * in; ++i)
            CHECK(dws[i] == doctest::Approx(dwa[i]).epsilon(1e-4));
        for (std::size_t o = 0; o < out; ++o)
            CHECK(dbs[o] == doctest::Approx(dba[o]).epsilon(1e-4));
    }
}

TEST_CASE("kernels: backend selection") {
    CHECK(kern::set_backend_by_name("scalar"));
    CHECK(std::string(kern::backend_name()) == "scalar");
    CHECK(kern::set_backend_by_name("auto"));
    CHECK_FALSE(kern::set_backend_by_name("sse9"));
    if (kern::avx2_available()) {
        CHECK(kern::set_backend_by_name("avx2"));
        CHECK(std::string(kern::backend_name()) == "avx2");
    }
    kern::set_backend(kern::Backend::kAuto);
}

TEST_CASE("json_util: strict key checking") {
    nlohmann::json j = {{"alpha", 1.0}, {"beta", 2}};
    CHECK_NOTHROW(check_keys(j, "cfg", {"alpha", "beta", "gamma"}));
    CHECK_THROWS_AS(check_keys(j, "cfg", {"alpha"}), ValidationError);
    CHECK_THROWS_AS(check_keys(nlohmann::json::array(), "cfg", {"a"}), ValidationError);
    CHECK(get_req<double>(j, "cfg", "alpha") == 1.0);
    CHECK_THROWS_AS(get_req<double>(j, "cfg", "missing"), ValidationError);
    CHECK_THROWS_AS(get_req<std::string>(j, "cfg", "alpha"), ValidationError);
    CHECK(get_or(j, "cfg", "gamma", 5) == 5);
    CHECK(get_or(j, "cfg", "beta", 5) == 2);
}

TEST_CASE("json_util: file round trip and errors") {
    const std::string path = tmp_path("td_cfg.json");
    nlohmann::json j = {{"x", 1}, {"y", "z"}};
    save_json_file(path, j);
    CHECK(load_json_file(path) == j);
    CHECK_THROWS_AS(load_json_file(tmp_path("td_missing.json")), IoError);
    {
        std::ofstream f(path);
        f << "{broken";
    }
    CHECK_THROWS_AS(load_json_file(path), FormatError);
}
