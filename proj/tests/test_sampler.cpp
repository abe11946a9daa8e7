#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "geoscene/checkpoint.hpp"
#include "geoscene/errors.hpp"
#include "geoscene/image.hpp"
#include "geoscene/model.hpp"
#include "geoscene/objective.hpp"
#include "geoscene/rng.hpp"
#include "geoscene/sampler.hpp"

#include "test_util.hpp"

using namespace geoscene;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

Image random_image(Rng& rng, int h, int w) {
    Image img(h, w);
    for (auto& b : img.data) b = uint8_t(rng.uniform_int(256));
    return img;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.h = 16;
    c.w = 16;
    c.p = 8;
    c.d = 16;
    c.heads = 2;
    c.blocks = 2;
    c.b_star = 1;
    c.mlp_ratio = 2;
    c.t_train = 1000;
    return c;
}

const std::vector<int> kCond{1, 5, 20, 24};

// the deterministic update applied to a zero predictor collapses to a
// rescaling of the initial noise by 1/sqrt(alpha_bar at the top timestep)
std::vector<double> scaled_init_noise(const ModelConfig& c, const NoiseSchedule& sched,
                                      uint64_t seed, int t_top) {
    Rng rng = Rng(seed).fork("sample.init");
    const size_t n = size_t(c.tokens_per_view()) * c.patch_dim();
    std::vector<double> x(n);
    const double scale = 1.0 / std::sqrt(sched.alpha_bar[size_t(t_top)]);
    for (auto& v : x) v = rng.normal() * scale;
    return x;
}

} // namespace

TEST_CASE("timestep ladder: descending, in range, and matches the spacing rule") {
    const auto ts = sample_timesteps(1000, 28);
    REQUIRE(ts.size() == 28);
    CHECK(ts.front() == 999);
    CHECK(ts.back() == 34);
    for (size_t i = 0; i + 1 < ts.size(); ++i) CHECK(ts[i] > ts[i + 1]);
    for (int k = 0; k < 28; ++k)
        CHECK(ts[size_t(28 - 1 - k)] == int(int64_t(k + 1) * 1000 / 28) - 1);
    for (int t : ts) {
        CHECK(t >= 0);
        CHECK(t < 1000);
    }
}

TEST_CASE("timestep ladder: single step lands on the top timestep") {
    const auto ts = sample_timesteps(1000, 1);
    REQUIRE(ts.size() == 1);
    CHECK(ts[0] == 999);
}

TEST_CASE("timestep ladder: full-length ladder visits every timestep") {
    const auto ts = sample_timesteps(10, 10);
    REQUIRE(ts.size() == 10);
    for (int k = 0; k < 10; ++k) CHECK(ts[size_t(k)] == 9 - k);
}

TEST_CASE("timestep ladder: rejects empty and oversized ladders") {
    CHECK_THROWS_AS(sample_timesteps(1000, 0), param_error);
    CHECK_THROWS_AS(sample_timesteps(1000, -3), param_error);
    CHECK_THROWS_AS(sample_timesteps(10, 11), param_error);
}

TEST_CASE("run_sampler: zero predictor reduces to scaled initial noise") {
    const ModelConfig c = tiny_config();
    Model model(c, 0); // zero-initialized output head predicts exactly zero
    const auto sched = NoiseSchedule::cosine(c.t_train);
    Rng rng(11);
    auto ref = patchify<float>(random_image(rng, c.h, c.w), c.p);

    for (int steps : {1, 4, 28}) {
        CAPTURE(steps);
        const uint64_t seed = 42;
        const auto out = run_sampler(model, sched, ref, kCond, steps, seed, false);
        const auto expected = scaled_init_noise(c, sched, seed, 999);
        REQUIRE(out.tokens.size() == expected.size());
        double worst = 0.0;
        for (size_t i = 0; i < expected.size(); ++i) {
            const double rel = std::abs(out.tokens[i] - expected[i]) /
                               std::max(1.0, std::abs(expected[i]));
            worst = std::max(worst, rel);
        }
        CHECK(worst <= 1e-9);
        CHECK(out.image.h == c.h);
        CHECK(out.image.w == c.w);
        CHECK(out.attn0.h == c.hs());
        CHECK(out.attn0.w == c.ws());
        CHECK(out.attn1.h == c.hs());
        CHECK(out.attn1.w == c.ws());
    }
}

TEST_CASE("run_sampler: byte-identical across repeated runs, seed changes output") {
    const ModelConfig c = tiny_config();
    Model model(c, 3);
    const auto sched = NoiseSchedule::cosine(c.t_train);
    Rng rng(12);
    auto ref = patchify<float>(random_image(rng, c.h, c.w), c.p);

    const auto a = run_sampler(model, sched, ref, kCond, 8, 7, false);
    const auto b = run_sampler(model, sched, ref, kCond, 8, 7, false);
    REQUIRE(a.tokens.size() == b.tokens.size());
    CHECK(std::memcmp(a.tokens.data(), b.tokens.data(),
                      a.tokens.size() * sizeof(double)) == 0);
    CHECK(a.image == b.image);
    CHECK(a.attn0.v == b.attn0.v);
    CHECK(a.attn1.v == b.attn1.v);

    const auto d = run_sampler(model, sched, ref, kCond, 8, 8, false);
    CHECK(std::memcmp(a.tokens.data(), d.tokens.data(),
                      a.tokens.size() * sizeof(double)) != 0);
}

TEST_CASE("run_sampler: written artifacts are byte-identical across runs") {
    const ModelConfig c = tiny_config();
    Model model(c, 3);
    const auto sched = NoiseSchedule::cosine(c.t_train);
    Rng rng(13);
    auto ref = patchify<float>(random_image(rng, c.h, c.w), c.p);

    const auto s = run_sampler(model, sched, ref, kCond, 6, 21, false);
    const fs::path d1 = fresh_dir("sampler_out1");
    const fs::path d2 = fresh_dir("sampler_out2");
    write_outputs(d1, "s", s);
    write_outputs(d2, "s", run_sampler(model, sched, ref, kCond, 6, 21, false));
    for (const char* name : {"s_gen.png", "s_attn0.pgm", "s_attn1.pgm"}) {
        CAPTURE(name);
        REQUIRE(fs::exists(d1 / name));
        CHECK(same_bytes(d1 / name, d2 / name));
    }
    const Image reread = load_png(d1 / "s_gen.png");
    CHECK(reread == s.image);
}

TEST_CASE("run_sampler: stochastic flag changes the path but stays seed-deterministic") {
    const ModelConfig c = tiny_config();
    Model model(c, 3);
    const auto sched = NoiseSchedule::cosine(c.t_train);
    Rng rng(14);
    auto ref = patchify<float>(random_image(rng, c.h, c.w), c.p);

    const auto det = run_sampler(model, sched, ref, kCond, 8, 5, false);
    const auto st1 = run_sampler(model, sched, ref, kCond, 8, 5, true);
    const auto st2 = run_sampler(model, sched, ref, kCond, 8, 5, true);
    CHECK(std::memcmp(det.tokens.data(), st1.tokens.data(),
                      det.tokens.size() * sizeof(double)) != 0);
    CHECK(std::memcmp(st1.tokens.data(), st2.tokens.data(),
                      st1.tokens.size() * sizeof(double)) == 0);
}

TEST_CASE("run_sampler: schedule length must match the model") {
    const ModelConfig c = tiny_config();
    Model model(c, 3);
    const auto sched = NoiseSchedule::cosine(500);
    Rng rng(15);
    auto ref = patchify<float>(random_image(rng, c.h, c.w), c.p);
    CHECK_THROWS_AS(run_sampler(model, sched, ref, kCond, 4, 0, false), param_error);
}

TEST_CASE("heatmap_u8: constant map renders mid-gray") {
    CorrespondenceMask m;
    m.h = 2;
    m.w = 2;
    m.v = {0.4f, 0.4f, 0.4f, 0.4f};
    const auto out = heatmap_u8(m, 8, 8);
    REQUIRE(out.size() == 64);
    for (uint8_t b : out) CHECK(int(b) == 128);
}

TEST_CASE("heatmap_u8: min-max scaling and nearest-neighbor upsampling") {
    CorrespondenceMask m;
    m.h = 2;
    m.w = 2;
    m.v = {0.0f, 1.0f, 0.5f, 0.25f};
    const auto out = heatmap_u8(m, 4, 4);
    const std::vector<uint8_t> expected{0,   0,   255, 255, 0,   0,   255, 255,
                                        128, 128, 64,  64,  128, 128, 64,  64};
    CHECK(out == expected);
}

TEST_CASE("heatmap_u8: extrema map to pure black and white") {
    CorrespondenceMask m;
    m.h = 4;
    m.w = 4;
    m.v.resize(16);
    Rng rng(91);
    for (auto& v : m.v) v = float(rng.uniform(0.1, 0.9));
    m.v[6] = 2.0f;  // cell (1,2)
    m.v[13] = 0.0f; // cell (3,1)
    const auto out = heatmap_u8(m, 16, 16);
    CHECK(int(out[size_t(1 * 4) * 16 + 2 * 4]) == 255);
    CHECK(int(out[size_t(3 * 4) * 16 + 1 * 4]) == 0);
}

TEST_CASE("heatmap_u8: rejects targets smaller than the grid") {
    CorrespondenceMask m;
    m.h = 4;
    m.w = 4;
    m.v.assign(16, 0.5f);
    CHECK_THROWS_AS(heatmap_u8(m, 2, 16), dim_error);
    CHECK_THROWS_AS(heatmap_u8(m, 16, 2), dim_error);
    CorrespondenceMask empty;
    CHECK_THROWS_AS(heatmap_u8(empty, 4, 4), dim_error);
}

TEST_CASE("export_attention: grid shapes, value range, and determinism") {
    const ModelConfig c = tiny_config();
    Model model(c, 3);
    const auto sched = NoiseSchedule::cosine(c.t_train);
    Rng rng(16);
    auto x0 = patchify<float>(random_image(rng, c.h, c.w), c.p);
    auto ref = patchify<float>(random_image(rng, c.h, c.w), c.p);

    const auto e1 = export_attention(model, sched, x0, ref, kCond, 500, 7);
    CHECK(e1.attn0.h == c.hs());
    CHECK(e1.attn0.w == c.ws());
    CHECK(e1.attn1.h == c.hs());
    CHECK(e1.attn1.w == c.ws());
    CHECK(e1.heat0.size() == size_t(c.h) * c.w);
    CHECK(e1.heat1.size() == size_t(c.h) * c.w);
    for (float v : e1.attn0.v) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    for (float v : e1.attn1.v) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    const auto e2 = export_attention(model, sched, x0, ref, kCond, 500, 7);
    CHECK(e1.attn0.v == e2.attn0.v);
    CHECK(e1.attn1.v == e2.attn1.v);
    CHECK(e1.heat0 == e2.heat0);

    const auto e3 = export_attention(model, sched, x0, ref, kCond, 500, 8);
    CHECK(max_abs_diff(e1.attn0.v, e3.attn0.v) > 0.0f);

    CHECK_THROWS_AS(export_attention(model, sched, x0, ref, kCond, -1, 7), param_error);
    CHECK_THROWS_AS(export_attention(model, sched, x0, ref, kCond, c.t_train, 7),
                    param_error);
}

TEST_CASE("generate: end-to-end from a checkpoint on disk") {
    const ModelConfig c = tiny_config();
    Model model(c, 5);
    const fs::path dir = fresh_dir("sampler_gen");
    const fs::path ck = dir / "ckpt.gamkpack";
    save_checkpoint(ck, snapshot(model, nullptr, 0, {}));

    Rng rng(17);
    SampleRequest req;
    req.checkpoint = ck;
    req.reference = random_image(rng, c.h, c.w);
    req.condition = {0, 1, 0, 2};
    req.steps = 4;
    req.seed = 9;

    const auto out = generate(req);
    CHECK(out.image.h == c.h);
    CHECK(out.image.w == c.w);
    const auto sched = NoiseSchedule::cosine(c.t_train);
    const auto expected = scaled_init_noise(c, sched, req.seed, 999);
    REQUIRE(out.tokens.size() == expected.size());
    for (size_t i = 0; i < expected.size(); i += 37)
        CHECK(out.tokens[i] == doctest::Approx(expected[i]).epsilon(1e-9));

    SUBCASE("linear schedule follows its own noise levels") {
        req.schedule = "linear";
        const auto lin = generate(req);
        const auto lsched = NoiseSchedule::linear(c.t_train);
        const auto lexp = scaled_init_noise(c, lsched, req.seed, 999);
        for (size_t i = 0; i < lexp.size(); i += 37)
            CHECK(lin.tokens[i] == doctest::Approx(lexp[i]).epsilon(1e-9));
    }

    SUBCASE("reference dimensions must match the checkpoint") {
        req.reference = Image(8, 8);
        CHECK_THROWS_AS(generate(req), dim_error);
    }
}
