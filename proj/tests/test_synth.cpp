#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "tedio/metrics.hpp"
#include "tedio/synth.hpp"

using namespace tedio;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("synth");

namespace {

SceneSpec moving_square() {
    SceneSpec s;
    s.kind = ShapeKind::square;
    s.size = 4;
    s.start_y = 2;
    s.start_x = 2;
    s.vel_y = 0;
    s.vel_x = 1;
    return s;
}

double centroid_x(const float* frame, int64_t H, int64_t W, float bg) {
    double mass = 0, mx = 0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const double v = frame[y * W + x] - bg;
            mass += v;
            mx += v * static_cast<double>(x);
        }
    return mx / mass;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("zero velocity freezes the clip") {
    auto spec = moving_square();
    spec.vel_x = 0;
    auto v = gen_coherent(spec, 6, 16, 16);
    const int64_t fsz = v.numel() / 6;
    for (int64_t f = 1; f < 6; ++f)
        for (int64_t i = 0; i < fsz; ++i) CHECK(v.ptr()[f * fsz + i] == v.ptr()[i]);
}

TEST_CASE("integer velocity shifts the centroid by one cell per frame") {
    auto v = gen_coherent(moving_square(), 6, 16, 16);
    const auto spec = moving_square();
    for (int64_t f = 0; f + 1 < 6; ++f) {
        const double a = centroid_x(v.ptr() + f * 256, 16, 16, spec.background);
        const double b = centroid_x(v.ptr() + (f + 1) * 256, 16, 16, spec.background);
        CHECK(b - a == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("rendering is deterministic and stays in range") {
    Rng rng(3);
    auto spec = random_scene(rng, 16, 16);
    auto a = gen_coherent(spec, 8, 16, 16);
    auto b = gen_coherent(spec, 8, 16, 16);
    CHECK(max_abs_diff(a, b) == 0.0f);
    for (float x : *a.data) {
        CHECK(x >= -1.0f);
        CHECK(x <= 1.0f);
    }
}

TEST_CASE("per-frame mass is conserved along the trajectory") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        auto spec = random_scene(rng, 16, 16);
        auto v = gen_coherent(spec, 8, 16, 16);
        double first = 0;
        for (int64_t i = 0; i < 256; ++i) first += v.ptr()[i];
        for (int64_t f = 1; f < 8; ++f) {
            double s = 0;
            for (int64_t i = 0; i < 256; ++i) s += v.ptr()[f * 256 + i];
            CHECK(std::abs(s - first) < 1e-4);  // +- 1e-5 per spec, headroom for f32 sums
        }
    }
}

TEST_CASE("oversized shapes are rejected") {
    auto spec = moving_square();
    spec.size = 20;
    CHECK_THROWS_AS(gen_coherent(spec, 4, 16, 16), UsageError);
}

TEST_CASE("zero-amplitude jitter is the identity, bit-exact") {
    auto spec = moving_square();
    auto v = gen_coherent(spec, 8, 16, 16);
    for (auto mode : {JitterMode::position_noise, JitterMode::frame_shuffle, JitterMode::teleport}) {
        JitterSpec j{mode, 0.0, 99};
        CHECK(max_abs_diff(inject_jitter(v, spec, j), v) == 0.0f);
    }
}

TEST_CASE("frame shuffle with a full window permutes the frame multiset") {
    auto spec = moving_square();
    auto v = gen_coherent(spec, 8, 16, 16);
    JitterSpec j{JitterMode::frame_shuffle, 8.0, 4};
    auto out = inject_jitter(v, spec, j);

    auto frame_key = [&](const Tensor& t, int64_t f) {
        return std::vector<float>(t.ptr() + f * 256, t.ptr() + (f + 1) * 256);
    };
    std::vector<std::vector<float>> a, b;
    for (int64_t f = 0; f < 8; ++f) {
        a.push_back(frame_key(v, f));
        b.push_back(frame_key(out, f));
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK(max_abs_diff(out, v) > 0.0f);  // seed 4 actually permutes
}

TEST_CASE("position noise strictly raises flicker on a moving square") {
    auto spec = moving_square();
    auto clean = gen_coherent(spec, 8, 16, 16);
    const double base = flicker_score(clean);
    for (uint64_t seed = 0; seed < 100; ++seed) {
        JitterSpec j{JitterMode::position_noise, 1.5, seed};
        CHECK(flicker_score(inject_jitter(clean, spec, j)) > base);
    }
}

TEST_CASE("teleport relocates mass without changing it") {
    auto spec = moving_square();
    auto clean = gen_coherent(spec, 8, 16, 16);
    JitterSpec j{JitterMode::teleport, 3.0, 7};
    auto out = inject_jitter(clean, spec, j);
    CHECK(max_abs_diff(out, clean) > 0.0f);
    double a = 0, b = 0;
    for (int64_t i = 0; i < 256; ++i) {
        a += clean.ptr()[i];
        b += out.ptr()[i];
    }
    CHECK(a == doctest::Approx(b).epsilon(1e-5));
}

TEST_CASE("corpus generation: stratification, stability, round trip") {
    const auto base = fs::temp_directory_path() / "tedio_synth_test";
    fs::remove_all(base);

    CorpusConfig cfg;
    cfg.count = 10;
    cfg.jitter_rate = 0.0;
    cfg.seed = 5;
    cfg.frames = 4;
    cfg.height = 12;
    cfg.width = 12;
    auto meta = gen_corpus(cfg, (base / "coherent").string());
    CHECK(meta.size() == 10);
    for (const auto& m : meta) CHECK(!m.jittered);

    cfg.jitter_rate = 0.5;
    auto meta2 = gen_corpus(cfg, (base / "mixed_a").string());
    int jittered = 0;
    for (const auto& m : meta2) jittered += m.jittered ? 1 : 0;
    CHECK(jittered == 5);  // stratified, not sampled

    gen_corpus(cfg, (base / "mixed_b").string());
    CHECK(slurp(base / "mixed_a" / "manifest.json") == slurp(base / "mixed_b" / "manifest.json"));
    CHECK(slurp(base / "mixed_a" / "clip_0007.tdt") == slurp(base / "mixed_b" / "clip_0007.tdt"));

    auto corpus = load_corpus((base / "mixed_a").string());
    REQUIRE(corpus.clips.size() == 10);
    CHECK(corpus.meta[3].class_id == class_id_of(corpus.meta[3].scene));
    for (const auto& c : corpus.clips) CHECK(c.shape == Shape{4, 1, 12, 12});

    CHECK_THROWS_AS(load_corpus((base / "nope").string()), IoError);
}

TEST_SUITE_END();
