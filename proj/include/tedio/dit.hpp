#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tedio/ops.hpp"
#include "tedio/tensor.hpp"

namespace tedio {

/// Toy video DiT geometry. One token per spatio-temporal cell (patch size 1),
/// frame-major token order: token(f,h,w) = f*H*W + h*W + w.
struct ModelConfig {
    int64_t frames = 8;
    int64_t height = 16;
    int64_t width = 16;
    int64_t channels = 1;
    int64_t d_model = 64;
    int64_t blocks = 4;
    int64_t heads = 4;
    int64_t head_dim = 16;
    int64_t cond_vocab = 16;
    int64_t cond_tokens = 4;
    // The frame-position table exists but stays zero unless enabled; block-1
    // queries/keys of a frame-constant latent must have constant logits.
    bool learn_frame_pos = false;

    int64_t spatial() const { return height * width; }
    int64_t tokens() const { return frames * spatial(); }
    int64_t patch_count() const { return spatial() * heads; }  // P = H*W*N_h
    void validate() const;

    nlohmann::ordered_json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-timestep run statistics; counts transformer block traversals so the
/// truncation contract is checkable.
struct ExecStats {
    int64_t forward_blocks = 0;
    int64_t backward_blocks = 0;
};

template <class T>
struct BlockParamsT {
    TensorT<T> ln1_gain, ln1_bias;
    TensorT<T> qkv_w, qkv_b;          // [d, 3d], [3d]
    TensorT<T> attn_out_w, attn_out_b;
    TensorT<T> ln2_gain, ln2_bias;
    TensorT<T> cross_q_w, cross_q_b, cross_k_w, cross_k_b, cross_v_w, cross_v_b;
    TensorT<T> cross_out_w, cross_out_b;
    TensorT<T> ln3_gain, ln3_bias;
    TensorT<T> mlp_in_w, mlp_in_b;    // [d, 4d]
    TensorT<T> mlp_out_w, mlp_out_b;  // [4d, d]
    TensorT<T> ada_w, ada_b;          // [d, 6d]: shift/scale/gate for attn and mlp
};

template <class T>
struct DiTParamsT {
    ModelConfig config;
    TensorT<T> token_embed_w, token_embed_b;  // [C, d], [d]
    TensorT<T> pos_frame, pos_row, pos_col;   // [F,d], [H,d], [W,d]
    TensorT<T> time_w1, time_b1, time_w2, time_b2;
    TensorT<T> cond_embed;                    // [vocab, d]
    std::vector<BlockParamsT<T>> block;
    TensorT<T> final_gain, final_bias;
    TensorT<T> head_w, head_b;                // zero-initialized

    template <class F>
    void for_each(F&& fn);
    template <class F>
    void for_each(F&& fn) const;

    bool trainable(const std::string& name) const {
        return config.learn_frame_pos || name != "pos_frame";
    }
    bool all_finite() const;
};

using DiTParams = DiTParamsT<float>;

template <class T>
DiTParamsT<T> init_params(const ModelConfig& config, uint64_t seed);

DiTParamsT<double> to_f64(const DiTParams& params);

/// Q and K of one block, per head, still attached to the gradient graph:
/// both [N_h, tokens, C_h], captured right after the QKV projection.
template <class T>
struct AttentionCaptureT {
    int64_t block = 0;
    TensorT<T> q, k;
};
using AttentionCapture = AttentionCaptureT<float>;

template <class T>
struct ForwardResultT {
    std::optional<TensorT<T>> prediction;  // [F,C,H,W]; absent when truncated
    std::optional<AttentionCaptureT<T>> capture;
    int64_t blocks_run = 0;
};

/// Runs blocks 1..N, or stops after the capture point of block
/// `truncate_after` (1-based) without producing a prediction.
template <class T>
ForwardResultT<T> dit_forward(const DiTParamsT<T>& params, const TensorT<T>& latent,
                              int64_t cond_id, int64_t schedule_pos, int64_t capture_block = 0,
                              int64_t truncate_after = 0, ExecStats* stats = nullptr);

void save_checkpoint(const std::string& path, const DiTParams& params);
DiTParams load_checkpoint(const std::string& path);

// ---- template member definitions

template <class T>
template <class F>
void DiTParamsT<T>::for_each(F&& fn) {
    fn("token_embed_w", token_embed_w);
    fn("token_embed_b", token_embed_b);
    fn("pos_frame", pos_frame);
    fn("pos_row", pos_row);
    fn("pos_col", pos_col);
    fn("time_w1", time_w1);
    fn("time_b1", time_b1);
    fn("time_w2", time_w2);
    fn("time_b2", time_b2);
    fn("cond_embed", cond_embed);
    for (size_t b = 0; b < block.size(); ++b) {
        const std::string p = "block" + std::to_string(b) + ".";
        auto& blk = block[b];
        fn(p + "ln1_gain", blk.ln1_gain);
        fn(p + "ln1_bias", blk.ln1_bias);
        fn(p + "qkv_w", blk.qkv_w);
        fn(p + "qkv_b", blk.qkv_b);
        fn(p + "attn_out_w", blk.attn_out_w);
        fn(p + "attn_out_b", blk.attn_out_b);
        fn(p + "ln2_gain", blk.ln2_gain);
        fn(p + "ln2_bias", blk.ln2_bias);
        fn(p + "cross_q_w", blk.cross_q_w);
        fn(p + "cross_q_b", blk.cross_q_b);
        fn(p + "cross_k_w", blk.cross_k_w);
        fn(p + "cross_k_b", blk.cross_k_b);
        fn(p + "cross_v_w", blk.cross_v_w);
        fn(p + "cross_v_b", blk.cross_v_b);
        fn(p + "cross_out_w", blk.cross_out_w);
        fn(p + "cross_out_b", blk.cross_out_b);
        fn(p + "ln3_gain", blk.ln3_gain);
        fn(p + "ln3_bias", blk.ln3_bias);
        fn(p + "mlp_in_w", blk.mlp_in_w);
        fn(p + "mlp_in_b", blk.mlp_in_b);
        fn(p + "mlp_out_w", blk.mlp_out_w);
        fn(p + "mlp_out_b", blk.mlp_out_b);
        fn(p + "ada_w", blk.ada_w);
        fn(p + "ada_b", blk.ada_b);
    }
    fn("final_gain", final_gain);
    fn("final_bias", final_bias);
    fn("head_w", head_w);
    fn("head_b", head_b);
}

template <class T>
template <class F>
void DiTParamsT<T>::for_each(F&& fn) const {
    const_cast<DiTParamsT<T>*>(this)->for_each(
        [&](const std::string& name, TensorT<T>& t) { fn(name, static_cast<const TensorT<T>&>(t)); });
}

extern template struct DiTParamsT<float>;
extern template struct DiTParamsT<double>;

}  // namespace tedio
