#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"
#include "tedio/tedio.hpp"

using namespace tedio;
using tedio::testutil::random_tensor;

TEST_SUITE_BEGIN("tedio");

namespace {

ModelConfig micro_config() {
    ModelConfig c;
    c.frames = 4;
    c.height = 2;
    c.width = 2;
    c.channels = 1;
    c.d_model = 8;
    c.blocks = 2;
    c.heads = 2;
    c.head_dim = 4;
    c.cond_vocab = 4;
    c.cond_tokens = 2;
    return c;
}

const std::vector<int64_t> kBands{-1, 0, 1};

}  // namespace

TEST_CASE("temporal attention equals the naive per-patch gather oracle") {
    const auto cfg = micro_config();
    float worst = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        AttentionCapture cap;
        cap.block = 1;
        cap.q = random_tensor<float>({cfg.heads, cfg.tokens(), cfg.head_dim}, rng);
        cap.k = random_tensor<float>({cfg.heads, cfg.tokens(), cfg.head_dim}, rng);
        auto fast = temporal_attention(cap, cfg);
        auto naive = oracle::naive_temporal_attention(cap.q, cap.k, cfg);
        CHECK(fast.shape == Shape{cfg.patch_count(), cfg.frames, cfg.frames});
        worst = std::max(worst, max_abs_diff(fast, naive));
    }
    CHECK(worst < 1e-6f);
}

TEST_CASE("temporal attention maps are row-stochastic in [0,1]") {
    const auto cfg = micro_config();
    Rng rng(4);
    AttentionCapture cap;
    cap.block = 1;
    cap.q = random_tensor<float>({cfg.heads, cfg.tokens(), cfg.head_dim}, rng, 2.0);
    cap.k = random_tensor<float>({cfg.heads, cfg.tokens(), cfg.head_dim}, rng, 2.0);
    auto maps = temporal_attention(cap, cfg);
    const int64_t F = cfg.frames;
    for (int64_t p = 0; p < cfg.patch_count(); ++p)
        for (int64_t i = 0; i < F; ++i) {
            double s = 0;
            for (int64_t j = 0; j < F; ++j) {
                const float v = maps.ptr()[(p * F + i) * F + j];
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
                s += v;
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
}

TEST_CASE("worked 2x2 example from Q'=K'=[[1],[0]]") {
    ModelConfig cfg;
    cfg.frames = 2;
    cfg.height = 1;
    cfg.width = 1;
    cfg.channels = 1;
    cfg.d_model = 1;
    cfg.blocks = 1;
    cfg.heads = 1;
    cfg.head_dim = 1;
    AttentionCapture cap;
    cap.block = 1;
    cap.q = Tensor::from({1, 2, 1}, {1, 0});
    cap.k = Tensor::from({1, 2, 1}, {1, 0});
    auto maps = temporal_attention(cap, cfg);
    REQUIRE(maps.shape == Shape{1, 2, 2});
    CHECK(maps.ptr()[0] == doctest::Approx(0.7311).epsilon(1e-3));
    CHECK(maps.ptr()[1] == doctest::Approx(0.2689).epsilon(1e-3));
    CHECK(maps.ptr()[2] == doctest::Approx(0.5));
    CHECK(maps.ptr()[3] == doctest::Approx(0.5));

    // chained example: variability of that map with B = {-1,0,+1}
    Tensor map = Tensor::from({2, 2}, {maps.ptr()[0], maps.ptr()[1], maps.ptr()[2], maps.ptr()[3]});
    CHECK(variability_score(map, kBands) == doctest::Approx(0.0534).epsilon(2e-3));
}

TEST_CASE("extract_band reads offsets") {
    auto I3 = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(extract_band(I3, 0) == std::vector<float>{1, 1, 1});
    CHECK(extract_band(I3, 1) == std::vector<float>{0, 0});
    auto m = Tensor::from({3, 3}, {.6f, .3f, .1f, .2f, .5f, .3f, .1f, .2f, .7f});
    auto band = extract_band(m, -1);
    CHECK(band[0] == doctest::Approx(0.2));
    CHECK(band[1] == doctest::Approx(0.2));
    CHECK_THROWS_AS(extract_band(m, 3), UsageError);
    CHECK_THROWS_AS(extract_band(m, -3), UsageError);
}

TEST_CASE("variability analytic values") {
    auto uniform = Tensor::full({4, 4}, 0.25f);
    CHECK(variability_score(uniform, kBands) == 0.0f);

    auto m = Tensor::from({3, 3}, {.6f, .3f, .1f, .2f, .5f, .3f, .1f, .2f, .7f});
    CHECK(variability_score(m, kBands) == doctest::Approx(0.05).epsilon(1e-5));
}

TEST_CASE("variability matches the brute-force oracle on random maps") {
    double worst = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        auto m = random_tensor<double>({5, 5}, rng);
        const std::vector<int64_t> bands{-2, -1, 0, 1, 3};
        const double got = variability_score(m, bands);
        const double want = oracle::brute_variability(m, bands);
        worst = std::max(worst, std::abs(got - want));
        CHECK(got >= 0.0);
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("adding bands never decreases the score") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto m = random_tensor<float>({4, 4}, rng);
        const std::vector<int64_t> base{0};
        const std::vector<int64_t> more{0, 1};
        const std::vector<int64_t> all{-2, -1, 0, 1, 2};
        const float s0 = variability_score(m, base);
        const float s1 = variability_score(m, more);
        const float s2 = variability_score(m, all);
        CHECK(s1 >= s0);
        CHECK(s2 >= s1);
    }
}

TEST_CASE("taped scores agree with the per-map scalar") {
    Rng rng(9);
    auto maps = random_tensor<float>({6, 4, 4}, rng);
    auto scores = variability_scores(maps, kBands);
    REQUIRE(scores.shape == Shape{6});
    for (int64_t p = 0; p < 6; ++p) {
        Tensor m({4, 4});
        std::copy_n(maps.ptr() + p * 16, 16, m.ptr());
        CHECK(scores.ptr()[p] == doctest::Approx(variability_score(m, kBands)).epsilon(1e-6));
    }
}

TEST_CASE("tedio_loss selection and tie-breaking") {
    auto s = Tensor::from({3}, {0.5f, 0.1f, 0.9f});
    CHECK(tedio_loss(s, 1).item() == doctest::Approx(0.9));
    CHECK(tedio_loss(s, 3).item() == doctest::Approx((0.5 + 0.1 + 0.9) / 3));

    auto tie = Tensor::from({3}, {0.5f, 0.5f, 0.1f});
    const auto idx = top_k_indices(std::span<const float>(tie.ptr(), 3), 1);
    CHECK(idx == std::vector<int64_t>{0});
    CHECK(tedio_loss(tie, 1).item() == doctest::Approx(0.5));

    CHECK_THROWS_AS(tedio_loss(s, 0), UsageError);
    CHECK_THROWS_AS(tedio_loss(s, 4), UsageError);
}

TEST_CASE("tedio_loss is monotone under score inflation") {
    auto s = Tensor::from({4}, {0.8f, 0.3f, 0.6f, 0.1f});
    const double base = tedio_loss(s, 2).item();  // selects 0.8, 0.6
    auto up = s.clone();
    up.ptr()[0] = 0.9f;  // inflate a selected score
    CHECK(tedio_loss(up, 2).item() > base);
    auto low = s.clone();
    low.ptr()[3] = 0.2f;  // still below the selection threshold
    CHECK(tedio_loss(low, 2).item() == doctest::Approx(base));
}

TEST_CASE("tedio_loss gradient is 1/k on selected entries") {
    auto s = Tensor::from({4}, {0.8f, 0.3f, 0.6f, 0.1f});
    GradScope scope;
    scope.watch(s);
    auto loss = tedio_loss(s, 2);
    auto grads = scope.backward(loss);
    const auto& g = grads.at(s);
    CHECK(g.ptr()[0] == doctest::Approx(0.5));
    CHECK(g.ptr()[1] == 0.0f);
    CHECK(g.ptr()[2] == doctest::Approx(0.5));
    CHECK(g.ptr()[3] == 0.0f);
}

TEST_CASE("config validation") {
    const auto cfg = micro_config();
    TedioConfig t;
    t.block = 3;
    CHECK_THROWS_AS(t.validate(cfg, 10), UsageError);
    t = {};
    t.block = 1;
    t.bands = {3};  // F-2 = 2: no difference terms
    CHECK_THROWS_AS(t.validate(cfg, 10), UsageError);
    t = {};
    t.block = 1;
    t.top_k = cfg.patch_count() + 1;
    CHECK_THROWS_AS(t.validate(cfg, 10), UsageError);
    t = {};
    t.block = 1;
    t.early_steps = 11;
    CHECK_THROWS_AS(t.validate(cfg, 10), UsageError);
    t = {};
    t.block = 1;
    t.explicit_steps = {11};
    CHECK_THROWS_AS(t.validate(cfg, 10), UsageError);

    t = {};
    t.block = 2;
    t.early_steps = 3;
    CHECK(t.applies_at(10, 10));
    CHECK(t.applies_at(8, 10));
    CHECK(!t.applies_at(7, 10));
    t.explicit_steps = {2, 5};
    CHECK(t.applies_at(5, 10));
    CHECK(!t.applies_at(10, 10));
}

TEST_CASE("frame-constant latent gives uniform maps and zero scores") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 5);
    Rng rng(31);
    // one random frame replicated
    Tensor z({cfg.frames, cfg.channels, cfg.height, cfg.width});
    const int64_t fsz = z.numel() / cfg.frames;
    for (int64_t i = 0; i < fsz; ++i) z.ptr()[i] = static_cast<float>(rng.normal());
    for (int64_t f = 1; f < cfg.frames; ++f) std::copy_n(z.ptr(), fsz, z.ptr() + f * fsz);

    auto out = dit_forward<float>(params, z, 0, 700, 1, 1);
    auto maps = temporal_attention(*out.capture, cfg);
    const float uniform = 1.0f / static_cast<float>(cfg.frames);
    for (float v : *maps.data) CHECK(std::abs(v - uniform) < 1e-6f);
    auto scores = variability_scores(maps, kBands);
    for (float v : *scores.data) CHECK(std::abs(v) <= 1e-10f);
}

TEST_CASE("frame permutation permutes the maps accordingly") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 5);
    Rng rng(33);
    auto z = random_tensor<float>({cfg.frames, cfg.channels, cfg.height, cfg.width}, rng);
    const std::vector<int64_t> perm{2, 0, 3, 1};
    Tensor zp(z.shape);
    const int64_t fsz = z.numel() / cfg.frames;
    for (int64_t f = 0; f < cfg.frames; ++f)
        std::copy_n(z.ptr() + perm[static_cast<size_t>(f)] * fsz, fsz, zp.ptr() + f * fsz);

    auto a = temporal_attention(*dit_forward<float>(params, z, 0, 700, 1, 1).capture, cfg);
    auto b = temporal_attention(*dit_forward<float>(params, zp, 0, 700, 1, 1).capture, cfg);
    const int64_t F = cfg.frames;
    float worst = 0;
    for (int64_t p = 0; p < cfg.patch_count(); ++p)
        for (int64_t i = 0; i < F; ++i)
            for (int64_t j = 0; j < F; ++j) {
                const float want = a.ptr()[(p * F + perm[static_cast<size_t>(i)]) * F +
                                           perm[static_cast<size_t>(j)]];
                worst = std::max(worst, std::abs(b.ptr()[(p * F + i) * F + j] - want));
            }
    CHECK(worst < 1e-6f);

    // identity permutation leaves the scores bit-unchanged
    auto sa = variability_scores(a, kBands);
    auto sa2 = variability_scores(
        temporal_attention(*dit_forward<float>(params, z, 0, 700, 1, 1).capture, cfg), kBands);
    CHECK(max_abs_diff(sa, sa2) == 0.0f);
}

TEST_CASE("gradient locality: only selected block-1 patches touch the latent") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 5);
    Rng rng(35);
    auto z = random_tensor<float>({cfg.frames, cfg.channels, cfg.height, cfg.width}, rng);

    TedioConfig tcfg;
    tcfg.block = 1;
    tcfg.top_k = 2;

    GradScope scope;
    scope.watch(z);
    auto out = dit_forward<float>(params, z, 0, 700, 1, 1);
    auto maps = temporal_attention(*out.capture, cfg);
    auto scores = variability_scores(maps, tcfg.bands);
    const auto idx =
        top_k_indices(std::span<const float>(scores.ptr(), scores.data->size()), tcfg.top_k);
    auto loss = tedio_loss(scores, tcfg.top_k);
    auto grads = scope.backward(loss);
    const Tensor& g = grads.at(z);

    std::vector<bool> selected_cell(static_cast<size_t>(cfg.spatial()), false);
    for (int64_t p : idx) selected_cell[static_cast<size_t>(p / cfg.heads)] = true;
    for (int64_t f = 0; f < cfg.frames; ++f)
        for (int64_t cell = 0; cell < cfg.spatial(); ++cell) {
            double n = 0;
            for (int64_t c = 0; c < cfg.channels; ++c)
                n += std::abs(g.ptr()[(f * cfg.channels + c) * cfg.spatial() + cell]);
            if (!selected_cell[static_cast<size_t>(cell)])
                CHECK(n == 0.0);  // exactly zero off the selected patches
        }
    // and the selected cells do receive gradient somewhere
    double on = 0;
    for (int64_t f = 0; f < cfg.frames; ++f)
        for (int64_t cell = 0; cell < cfg.spatial(); ++cell)
            if (selected_cell[static_cast<size_t>(cell)])
                on += std::abs(g.ptr()[f * cfg.spatial() + cell]);
    CHECK(on > 0.0);
}

TEST_CASE("update rule: scalar analogue and eta=0 logging") {
    // z <- z - eta * dL/dz with L = z^2, z = 1, eta = 0.1 gives 0.8
    auto z = Tensor::scalar(1.0f);
    GradScope scope;
    scope.watch(z);
    auto loss = square(z);
    auto grads = scope.backward(reshape(loss, {}));
    const float g = grads.at(z).ptr()[0];
    CHECK(z.item() - 0.1f * g == doctest::Approx(0.8));

    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 5);
    auto schedule = NoiseSchedule::make({Objective::ddpm, 10, 100});
    Rng rng(36);
    SamplerState state;
    state.z = random_tensor<float>({cfg.frames, cfg.channels, cfg.height, cfg.width}, rng);
    state.t = 9;
    state.cond = 0;
    auto before = state.z.clone();
    TedioConfig tcfg;
    tcfg.block = 2;
    tcfg.step_size = 0.0;
    tcfg.iterations = 3;
    tcfg.early_steps = 3;
    auto log = latent_refine<float>(params, state, schedule, tcfg);
    CHECK(log.size() == 3);
    CHECK(max_abs_diff(state.z, before) == 0.0f);
    for (const auto& row : log) {
        CHECK(row.t == 9);
        CHECK(std::isfinite(row.loss));
    }
}

TEST_CASE("refinement reduces the loss it optimizes on the micro model") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 6);
    auto schedule = NoiseSchedule::make({Objective::ddpm, 10, 100});
    int ok = 0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        SamplerState state;
        state.z = random_tensor<float>({cfg.frames, cfg.channels, cfg.height, cfg.width}, rng);
        state.t = 10;
        state.cond = 0;
        TedioConfig tcfg;
        tcfg.block = 2;
        tcfg.step_size = 0.5;
        tcfg.iterations = 3;
        tcfg.top_k = 2;
        tcfg.early_steps = 3;
        auto log = latent_refine<float>(params, state, schedule, tcfg);
        bool non_increasing = true;
        for (size_t i = 1; i < log.size(); ++i)
            non_increasing = non_increasing && (log[i].loss <= log[i - 1].loss + 1e-9);
        ok += non_increasing ? 1 : 0;
    }
    CHECK(ok >= 18);
}

TEST_CASE("tedio loss gradient matches finite differences on the micro config") {
    const auto cfg = micro_config();
    auto params64 = to_f64(init_params<float>(cfg, 6));
    auto schedule = NoiseSchedule::make({Objective::ddpm, 10, 100});
    TedioConfig tcfg;
    tcfg.block = 2;
    tcfg.top_k = 2;

    Rng rng(41);
    auto z = random_tensor<double>({cfg.frames, cfg.channels, cfg.height, cfg.width}, rng);
    const double err = testutil::grad_vs_fd<double>(
        [&](const TensorT<double>& probe) {
            auto out = dit_forward<double>(params64, probe, 0, 80, tcfg.block, tcfg.block);
            auto maps = temporal_attention(*out.capture, cfg);
            auto scores = variability_scores(maps, tcfg.bands);
            return tedio_loss(scores, tcfg.top_k);
        },
        z, 1e-4, 1e-6);
    CHECK(err < 1e-4);
}

TEST_SUITE_END();
