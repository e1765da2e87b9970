#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "tedio/dit.hpp"
#include "tedio/ops.hpp"
#include "tedio/tdt_io.hpp"

using namespace tedio;

TEST_SUITE_BEGIN("dit");

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

Tensor micro_latent(uint64_t seed) {
    Rng rng(seed);
    return randn<float>({4, 1, 2, 2}, rng);
}

}  // namespace

TEST_CASE("config validation") {
    auto c = micro_config();
    c.d_model = 7;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = micro_config();
    c.frames = 1;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("init is deterministic and seed-sensitive") {
    const auto cfg = micro_config();
    auto a = init_params<float>(cfg, 7);
    auto b = init_params<float>(cfg, 7);
    auto c = init_params<float>(cfg, 8);
    bool same = true, differ = false;
    std::vector<const Tensor*> av, bv, cv;
    a.for_each([&](const std::string&, const Tensor& t) { av.push_back(&t); });
    b.for_each([&](const std::string&, const Tensor& t) { bv.push_back(&t); });
    c.for_each([&](const std::string&, const Tensor& t) { cv.push_back(&t); });
    for (size_t i = 0; i < av.size(); ++i) {
        same = same && (max_abs_diff(*av[i], *bv[i]) == 0.0f);
        differ = differ || (max_abs_diff(*av[i], *cv[i]) != 0.0f);
    }
    CHECK(same);
    CHECK(differ);
    CHECK(a.pos_frame.all_finite());
    for (float v : *a.pos_frame.data) CHECK(v == 0.0f);  // inert frame table
}

TEST_CASE("zero-initialized head predicts zeros") {
    auto params = init_params<float>(micro_config(), 3);
    auto out = dit_forward<float>(params, micro_latent(1), 0, 500);
    REQUIRE(out.prediction.has_value());
    for (float v : *out.prediction->data) CHECK(v == 0.0f);
}

TEST_CASE("forward is a pure function") {
    auto params = init_params<float>(micro_config(), 3);
    // nudge the head so predictions are nonzero
    Rng rng(9);
    for (auto& v : *params.head_w.data) v = static_cast<float>(0.1 * rng.normal());
    auto a = dit_forward<float>(params, micro_latent(1), 1, 500);
    auto b = dit_forward<float>(params, micro_latent(1), 1, 500);
    CHECK(max_abs_diff(*a.prediction, *b.prediction) == 0.0f);
}

TEST_CASE("forward argument validation") {
    auto params = init_params<float>(micro_config(), 3);
    CHECK_THROWS_AS(dit_forward<float>(params, Tensor({2, 1, 2, 2}), 0, 10), DimensionError);
    CHECK_THROWS_AS(dit_forward<float>(params, micro_latent(1), 99, 10), UsageError);
    CHECK_THROWS_AS(dit_forward<float>(params, micro_latent(1), 0, 10, 5), UsageError);
    CHECK_THROWS_AS(dit_forward<float>(params, micro_latent(1), 0, 10, 0, 7), UsageError);
}

TEST_CASE("capture shape, population and row-stochastic attention") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 3);
    auto plain = dit_forward<float>(params, micro_latent(1), 0, 500);
    CHECK(!plain.capture.has_value());

    auto out = dit_forward<float>(params, micro_latent(1), 0, 500, 2);
    REQUIRE(out.capture.has_value());
    CHECK(out.capture->block == 2);
    CHECK(out.capture->q.shape == Shape{cfg.heads, cfg.tokens(), cfg.head_dim});
    CHECK(out.capture->k.shape == Shape{cfg.heads, cfg.tokens(), cfg.head_dim});

    // Eq. 3 attention from the captured Q,K: [N_h, HWF, HWF], rows sum to 1
    const float scale = 1.0f / std::sqrt(static_cast<float>(cfg.head_dim));
    auto probs = softmax(mul_scalar(matmul(out.capture->q, transpose_last2(out.capture->k)),
                                    scale),
                         -1);
    CHECK(probs.shape == Shape{cfg.heads, cfg.tokens(), cfg.tokens()});
    for (int64_t r = 0; r < cfg.heads * cfg.tokens(); ++r) {
        double s = 0;
        for (int64_t j = 0; j < cfg.tokens(); ++j) s += probs.ptr()[r * cfg.tokens() + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("embedding locality: single-cell change moves a single token") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 3);
    auto za = micro_latent(1);
    auto zb = za.clone();
    const int64_t f = 2, h = 1, w = 0;
    zb.ptr()[((f * cfg.channels + 0) * cfg.height + h) * cfg.width + w] += 0.75f;
    const int64_t changed_token = f * cfg.spatial() + h * cfg.width + w;

    auto ca = dit_forward<float>(params, za, 0, 500, 1, 1);
    auto cb = dit_forward<float>(params, zb, 0, 500, 1, 1);
    for (int64_t head = 0; head < cfg.heads; ++head)
        for (int64_t tok = 0; tok < cfg.tokens(); ++tok) {
            float diff = 0;
            for (int64_t c = 0; c < cfg.head_dim; ++c) {
                const int64_t i = (head * cfg.tokens() + tok) * cfg.head_dim + c;
                diff = std::max(diff, std::abs(ca.capture->q.ptr()[i] - cb.capture->q.ptr()[i]));
                diff = std::max(diff, std::abs(ca.capture->k.ptr()[i] - cb.capture->k.ptr()[i]));
            }
            if (tok == changed_token)
                CHECK(diff > 0.0f);
            else
                CHECK(diff == 0.0f);  // bit-unchanged
        }
}

TEST_CASE("truncation touches only the leading blocks") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 3);
    DiTParams p = params;
    GradScope scope;
    p.for_each([&](const std::string& name, Tensor& t) {
        if (p.trainable(name)) scope.watch(t);
    });
    auto z = micro_latent(1);
    auto out = dit_forward<float>(p, z, 0, 500, 1, 1);
    CHECK(!out.prediction.has_value());
    CHECK(out.blocks_run == 1);
    auto loss = add(sum(square(out.capture->q)), sum(square(out.capture->k)));
    auto grads = scope.backward(loss);

    double block2_norm = 0, block1_qkv_norm = 0, head_norm = 0;
    p.for_each([&](const std::string& name, Tensor& t) {
        if (!grads.contains(t)) return;
        const Tensor& g = grads.at(t);
        double n = 0;
        for (float v : *g.data) n += static_cast<double>(v) * v;
        if (name.rfind("block1.", 0) == 0) block2_norm += n;  // second block
        if (name == "block0.qkv_w") block1_qkv_norm += n;
        if (name == "head_w") head_norm += n;
    });
    CHECK(block2_norm == 0.0);
    CHECK(head_norm == 0.0);
    CHECK(block1_qkv_norm > 0.0);
}

TEST_CASE("capture stays on the gradient graph down to the latent") {
    auto params = init_params<float>(micro_config(), 3);
    auto z = micro_latent(1);
    GradScope scope;
    scope.watch(z);
    auto out = dit_forward<float>(params, z, 0, 500, 2, 2);
    auto loss = sum(square(out.capture->q));
    auto grads = scope.backward(loss);
    double n = 0;
    for (float v : *grads.at(z).data) n += std::abs(v);
    CHECK(n > 0.0);
}

TEST_CASE("block-1 capture depends only on the patch's spatial cell") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 3);
    auto za = micro_latent(1);
    auto zb = za.clone();
    // perturb spatial cell (0,1) in every frame
    for (int64_t f = 0; f < cfg.frames; ++f)
        zb.ptr()[(f * cfg.height + 0) * cfg.width + 1] += 0.5f;

    auto ca = dit_forward<float>(params, za, 0, 500, 1, 1);
    auto cb = dit_forward<float>(params, zb, 0, 500, 1, 1);
    // tokens of cell (1,0) are untouched across all frames
    const int64_t cell = 1 * cfg.width + 0;
    for (int64_t head = 0; head < cfg.heads; ++head)
        for (int64_t f = 0; f < cfg.frames; ++f) {
            const int64_t tok = f * cfg.spatial() + cell;
            for (int64_t c = 0; c < cfg.head_dim; ++c) {
                const int64_t i = (head * cfg.tokens() + tok) * cfg.head_dim + c;
                CHECK(ca.capture->q.ptr()[i] == cb.capture->q.ptr()[i]);
                CHECK(ca.capture->k.ptr()[i] == cb.capture->k.ptr()[i]);
            }
        }
}

TEST_CASE("tape-free forward equals the taped compute path bit-exactly") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 3);
    Rng rng(12);
    for (auto& v : *params.head_w.data) v = static_cast<float>(0.1 * rng.normal());
    auto z = micro_latent(5);

    auto fused = dit_forward<float>(params, z, 1, 400);
    GradScope scope;
    auto zt = z.clone();
    scope.watch(zt);
    auto taped = dit_forward<float>(params, zt, 1, 400);
    CHECK(max_abs_diff(*fused.prediction, *taped.prediction) == 0.0f);
}

TEST_CASE("forward block count is monotone in the truncation point") {
    const auto cfg = micro_config();
    auto params = init_params<float>(cfg, 3);
    int64_t prev = 0;
    for (int64_t i = 1; i <= cfg.blocks; ++i) {
        ExecStats stats;
        dit_forward<float>(params, micro_latent(1), 0, 500, i, i, &stats);
        CHECK(stats.forward_blocks == i);
        CHECK(stats.forward_blocks >= prev);
        prev = stats.forward_blocks;
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    auto params = init_params<float>(micro_config(), 3);
    Rng rng(10);
    for (auto& v : *params.head_w.data) v = static_cast<float>(rng.normal());
    const auto path =
        (std::filesystem::temp_directory_path() / "tedio_dit_test" / "ckpt.tdc").string();
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    save_checkpoint(path, params);
    auto loaded = load_checkpoint(path);

    std::vector<const Tensor*> av, bv;
    params.for_each([&](const std::string&, const Tensor& t) { av.push_back(&t); });
    loaded.for_each([&](const std::string&, const Tensor& t) { bv.push_back(&t); });
    REQUIRE(av.size() == bv.size());
    for (size_t i = 0; i < av.size(); ++i) CHECK(max_abs_diff(*av[i], *bv[i]) == 0.0f);

    auto a = dit_forward<float>(params, micro_latent(2), 1, 300);
    auto b = dit_forward<float>(loaded, micro_latent(2), 1, 300);
    CHECK(max_abs_diff(*a.prediction, *b.prediction) == 0.0f);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.tdc"), IoError);
}

TEST_SUITE_END();
