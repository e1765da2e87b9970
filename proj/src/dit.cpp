#include "tedio/dit.hpp"

#include <cmath>

#include "tedio/tdt_io.hpp"

namespace tedio {

void ModelConfig::validate() const {
    if (d_model != heads * head_dim)
        throw UsageError("model config: d_model (" + std::to_string(d_model) +
                         ") != heads * head_dim (" + std::to_string(heads * head_dim) + ")");
    if (blocks < 1) throw UsageError("model config: need at least one block");
    if (frames < 2) throw UsageError("model config: need at least two frames");
    if (height < 1 || width < 1 || channels < 1 || cond_vocab < 1 || cond_tokens < 1)
        throw UsageError("model config: non-positive extent");
}

nlohmann::ordered_json ModelConfig::to_json() const {
    return {{"frames", frames},         {"height", height},
            {"width", width},           {"channels", channels},
            {"d_model", d_model},       {"blocks", blocks},
            {"heads", heads},           {"head_dim", head_dim},
            {"cond_vocab", cond_vocab}, {"cond_tokens", cond_tokens},
            {"learn_frame_pos", learn_frame_pos}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.frames = j.value("frames", c.frames);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.channels = j.value("channels", c.channels);
    c.d_model = j.value("d_model", c.d_model);
    c.blocks = j.value("blocks", c.blocks);
    c.heads = j.value("heads", c.heads);
    c.head_dim = j.value("head_dim", c.head_dim);
    c.cond_vocab = j.value("cond_vocab", c.cond_vocab);
    c.cond_tokens = j.value("cond_tokens", c.cond_tokens);
    c.learn_frame_pos = j.value("learn_frame_pos", c.learn_frame_pos);
    c.validate();
    return c;
}

namespace {

template <class T>
TensorT<T> scaled_normal(Shape shape, int64_t fan_in, Rng& rng) {
    TensorT<T> t(std::move(shape));
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : *t.data) v = static_cast<T>(scale * rng.normal());
    return t;
}

template <class T>
TensorT<T> small_normal(Shape shape, Rng& rng, double scale = 0.02) {
    TensorT<T> t(std::move(shape));
    for (auto& v : *t.data) v = static_cast<T>(scale * rng.normal());
    return t;
}

// [1, dim] sinusoidal embedding of a schedule position
template <class T>
TensorT<T> sinusoidal_embedding(int64_t pos, int64_t dim) {
    TensorT<T> t(Shape{1, dim});
    const int64_t half = dim / 2;
    for (int64_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        t.ptr()[i] = static_cast<T>(std::sin(pos * freq));
        t.ptr()[half + i] = static_cast<T>(std::cos(pos * freq));
    }
    return t;
}

template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add(matmul(x, w), b);
}

// [tokens, d] -> [heads, tokens, head_dim]
template <class T>
TensorT<T> split_heads(const TensorT<T>& x, int64_t heads, int64_t head_dim) {
    const int64_t tokens = x.dim(0);
    static const std::vector<int64_t> order{1, 0, 2};
    return permute_reshape(reshape(x, {tokens, heads, head_dim}), order,
                           {heads, tokens, head_dim});
}

template <class T>
TensorT<T> merge_heads(const TensorT<T>& x) {
    const int64_t heads = x.dim(0), tokens = x.dim(1), head_dim = x.dim(2);
    static const std::vector<int64_t> order{1, 0, 2};
    return permute_reshape(x, order, {tokens, heads * head_dim});
}

// Row-streamed attention for tape-free forwards: one score row at a time,
// never materializing the [tokens, tokens] maps. Accumulation orders mirror
// the composed ops, so results are bit-identical to the taped path.
template <class T>
TensorT<T> fused_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                           T scale) {
    const int64_t heads = q.dim(0), q_tokens = q.dim(1), hd = q.dim(2);
    const int64_t kv_tokens = k.dim(1);
    auto out = TensorT<T>::uninit(q.shape);
    std::vector<T> row(static_cast<size_t>(kv_tokens));
    std::vector<T> qs(static_cast<size_t>(hd));
    std::vector<T> kt(static_cast<size_t>(hd * kv_tokens));  // [hd, kv] panel per head
    for (int64_t h = 0; h < heads; ++h) {
        const T* kh = k.ptr() + h * kv_tokens * hd;
        const T* vh = v.ptr() + h * kv_tokens * hd;
        for (int64_t j = 0; j < kv_tokens; ++j)
            for (int64_t c = 0; c < hd; ++c) kt[static_cast<size_t>(c * kv_tokens + j)] = kh[j * hd + c];
        for (int64_t i = 0; i < q_tokens; ++i) {
            const T* qi = q.ptr() + (h * q_tokens + i) * hd;
            for (int64_t c = 0; c < hd; ++c) qs[static_cast<size_t>(c)] = qi[c] * scale;
            // scores row: c-quad expression tree, j loop vectorizes over the
            // transposed key panel; same element-wise order as the gemm kernel
            T* __restrict__ rw = row.data();
            std::fill(rw, rw + kv_tokens, T(0));
            int64_t c = 0;
            for (; c + 4 <= hd; c += 4) {
                const T a0 = qs[c], a1 = qs[c + 1], a2 = qs[c + 2], a3 = qs[c + 3];
                const T* b0 = kt.data() + c * kv_tokens;
                const T* b1 = b0 + kv_tokens;
                const T* b2 = b1 + kv_tokens;
                const T* b3 = b2 + kv_tokens;
                for (int64_t j = 0; j < kv_tokens; ++j)
                    rw[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
            for (; c < hd; ++c) {
                const T av = qs[c];
                const T* b0 = kt.data() + c * kv_tokens;
                for (int64_t j = 0; j < kv_tokens; ++j) rw[j] += av * b0[j];
            }
            // softmax row, same pass structure as the softmax op
            T m = rw[0];
            for (int64_t j = 1; j < kv_tokens; ++j) m = rw[j] > m ? rw[j] : m;
            for (int64_t j = 0; j < kv_tokens; ++j) rw[j] = detail::softmax_exp(rw[j] - m);
            T s = 0;
            for (int64_t j = 0; j < kv_tokens; ++j) s += rw[j];
            if (!std::isfinite(s)) throw NumericError("attention: non-finite score row");
            const T inv = T(1) / s;
            for (int64_t j = 0; j < kv_tokens; ++j) rw[j] *= inv;
            // out row = probs . V, j-ascending like gemm_acc
            T* orow = out.ptr() + (h * q_tokens + i) * hd;
            std::fill(orow, orow + hd, T(0));
            int64_t j = 0;
            for (; j + 4 <= kv_tokens; j += 4) {
                const T w0 = rw[j], w1 = rw[j + 1], w2 = rw[j + 2], w3 = rw[j + 3];
                const T* v0 = vh + j * hd;
                const T* v1 = v0 + hd;
                const T* v2 = v1 + hd;
                const T* v3 = v2 + hd;
                for (int64_t cc = 0; cc < hd; ++cc)
                    orow[cc] += w0 * v0[cc] + w1 * v1[cc] + w2 * v2[cc] + w3 * v3[cc];
            }
            for (; j < kv_tokens; ++j) {
                const T w = rw[j];
                const T* vj = vh + j * hd;
                for (int64_t cc = 0; cc < hd; ++cc) orow[cc] += w * vj[cc];
            }
        }
    }
    return out;
}

template <class T>
TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                     int64_t head_dim) {
    // scale folded into q: (sQ)K^T = s(QK^T), and q is tiny next to the scores
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
    if (!TapeT<T>::active()) return fused_attention(q, k, v, scale);
    auto probs = softmax(matmul(mul_scalar(q, scale), transpose_last2(k)), -1);
    return matmul(probs, v);
}

}  // namespace

template <class T>
DiTParamsT<T> init_params(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const int64_t d = config.d_model;
    DiTParamsT<T> p;
    p.config = config;
    p.token_embed_w = scaled_normal<T>({config.channels, d}, config.channels, rng);
    p.token_embed_b = TensorT<T>::zeros({d});
    p.pos_frame = TensorT<T>::zeros({config.frames, d});  // inert unless learn_frame_pos
    p.pos_row = small_normal<T>({config.height, d}, rng);
    p.pos_col = small_normal<T>({config.width, d}, rng);
    p.time_w1 = scaled_normal<T>({d, d}, d, rng);
    p.time_b1 = TensorT<T>::zeros({d});
    p.time_w2 = scaled_normal<T>({d, d}, d, rng);
    p.time_b2 = TensorT<T>::zeros({d});
    p.cond_embed = small_normal<T>({config.cond_vocab, d}, rng);
    p.block.resize(static_cast<size_t>(config.blocks));
    for (auto& blk : p.block) {
        blk.ln1_gain = TensorT<T>::full({d}, T(1));
        blk.ln1_bias = TensorT<T>::zeros({d});
        blk.qkv_w = scaled_normal<T>({d, 3 * d}, d, rng);
        blk.qkv_b = TensorT<T>::zeros({3 * d});
        blk.attn_out_w = scaled_normal<T>({d, d}, d, rng);
        blk.attn_out_b = TensorT<T>::zeros({d});
        blk.ln2_gain = TensorT<T>::full({d}, T(1));
        blk.ln2_bias = TensorT<T>::zeros({d});
        blk.cross_q_w = scaled_normal<T>({d, d}, d, rng);
        blk.cross_q_b = TensorT<T>::zeros({d});
        blk.cross_k_w = scaled_normal<T>({d, d}, d, rng);
        blk.cross_k_b = TensorT<T>::zeros({d});
        blk.cross_v_w = scaled_normal<T>({d, d}, d, rng);
        blk.cross_v_b = TensorT<T>::zeros({d});
        blk.cross_out_w = scaled_normal<T>({d, d}, d, rng);
        blk.cross_out_b = TensorT<T>::zeros({d});
        blk.ln3_gain = TensorT<T>::full({d}, T(1));
        blk.ln3_bias = TensorT<T>::zeros({d});
        blk.mlp_in_w = scaled_normal<T>({d, 4 * d}, d, rng);
        blk.mlp_in_b = TensorT<T>::zeros({4 * d});
        blk.mlp_out_w = scaled_normal<T>({4 * d, d}, 4 * d, rng);
        blk.mlp_out_b = TensorT<T>::zeros({d});
        // zero-init modulation: blocks start as identity (gates closed)
        blk.ada_w = TensorT<T>::zeros({d, 6 * d});
        blk.ada_b = TensorT<T>::zeros({6 * d});
    }
    p.final_gain = TensorT<T>::full({d}, T(1));
    p.final_bias = TensorT<T>::zeros({d});
    p.head_w = TensorT<T>::zeros({d, config.channels});
    p.head_b = TensorT<T>::zeros({config.channels});
    return p;
}

DiTParamsT<double> to_f64(const DiTParams& params) {
    DiTParamsT<double> out = init_params<double>(params.config, 0);
    auto src = params;
    std::vector<const Tensor*> flat;
    src.for_each([&](const std::string&, Tensor& t) { flat.push_back(&t); });
    size_t i = 0;
    out.for_each([&](const std::string&, TensorT<double>& t) {
        const Tensor& s = *flat[i++];
        for (int64_t j = 0; j < t.numel(); ++j) t.ptr()[j] = static_cast<double>(s.ptr()[j]);
    });
    return out;
}

template <class T>
bool DiTParamsT<T>::all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const TensorT<T>& t) { ok = ok && t.all_finite(); });
    return ok;
}

template <class T>
ForwardResultT<T> dit_forward(const DiTParamsT<T>& params, const TensorT<T>& latent,
                              int64_t cond_id, int64_t schedule_pos, int64_t capture_block,
                              int64_t truncate_after, ExecStats* stats) {
    const ModelConfig& cfg = params.config;
    const Shape want{cfg.frames, cfg.channels, cfg.height, cfg.width};
    if (latent.shape != want)
        throw DimensionError("forward: latent " + shape_str(latent.shape) + " != " +
                             shape_str(want));
    if (cond_id < 0 || cond_id >= cfg.cond_vocab)
        throw UsageError("forward: cond id " + std::to_string(cond_id) + " outside vocab " +
                         std::to_string(cfg.cond_vocab));
    if (capture_block < 0 || capture_block > cfg.blocks)
        throw UsageError("forward: capture block " + std::to_string(capture_block) +
                         " outside 1.." + std::to_string(cfg.blocks));
    if (truncate_after < 0 || truncate_after > cfg.blocks)
        throw UsageError("forward: truncate block " + std::to_string(truncate_after) +
                         " outside 1.." + std::to_string(cfg.blocks));

    const int64_t d = cfg.d_model;
    const int64_t tokens = cfg.tokens();

    // per-cell embedding, frame-major tokens
    static const std::vector<int64_t> to_tokens{0, 2, 3, 1};  // [F,C,H,W] -> [F,H,W,C]
    auto x = linear(permute_reshape(latent, to_tokens, {tokens, cfg.channels}),
                    params.token_embed_w, params.token_embed_b);

    // factorized positional embedding via index gathering
    std::vector<int64_t> fidx(tokens), hidx(tokens), widx(tokens);
    for (int64_t f = 0, t = 0; f < cfg.frames; ++f)
        for (int64_t h = 0; h < cfg.height; ++h)
            for (int64_t w = 0; w < cfg.width; ++w, ++t) {
                fidx[t] = f;
                hidx[t] = h;
                widx[t] = w;
            }
    x = add(x, add(gather_rows(params.pos_frame, fidx),
                   add(gather_rows(params.pos_row, hidx), gather_rows(params.pos_col, widx))));

    // conditioning streams
    auto temb = sinusoidal_embedding<T>(schedule_pos, d);
    auto c = linear(gelu(linear(temb, params.time_w1, params.time_b1)), params.time_w2,
                    params.time_b2);  // [1, d]
    std::vector<int64_t> cond_idx(static_cast<size_t>(cfg.cond_tokens), cond_id);
    auto cond_stream = gather_rows(params.cond_embed, cond_idx);  // [ct, d]

    ForwardResultT<T> result;
    auto* tape = TapeT<T>::active();
    for (int64_t b = 1; b <= cfg.blocks; ++b) {
        const auto& blk = params.block[static_cast<size_t>(b - 1)];
        result.blocks_run = b;
        if (stats) ++stats->forward_blocks;
        if (tape) ++tape->recorded_blocks;

        auto mod = linear(c, blk.ada_w, blk.ada_b);  // [1, 6d]
        auto piece = [&](int64_t i) { return reshape(slice_last(mod, i * d, d), {d}); };
        auto shift1 = piece(0), scale1 = piece(1), gate1 = piece(2);
        auto shift2 = piece(3), scale2 = piece(4), gate2 = piece(5);

        auto h1 = add(mul(layer_norm(x, blk.ln1_gain, blk.ln1_bias), add_scalar(scale1, T(1))),
                      shift1);
        auto qkv = linear(h1, blk.qkv_w, blk.qkv_b);
        auto q = split_heads(slice_last(qkv, 0, d), cfg.heads, cfg.head_dim);
        auto k = split_heads(slice_last(qkv, d, d), cfg.heads, cfg.head_dim);
        if (capture_block == b) result.capture = AttentionCaptureT<T>{b, q, k};
        if (truncate_after == b) return result;
        auto v = split_heads(slice_last(qkv, 2 * d, d), cfg.heads, cfg.head_dim);

        auto attn_out = linear(merge_heads(attention(q, k, v, cfg.head_dim)), blk.attn_out_w,
                               blk.attn_out_b);
        x = add(x, mul(attn_out, gate1));

        auto h2 = layer_norm(x, blk.ln2_gain, blk.ln2_bias);
        auto q2 = split_heads(linear(h2, blk.cross_q_w, blk.cross_q_b), cfg.heads, cfg.head_dim);
        auto k2 = split_heads(linear(cond_stream, blk.cross_k_w, blk.cross_k_b), cfg.heads,
                              cfg.head_dim);
        auto v2 = split_heads(linear(cond_stream, blk.cross_v_w, blk.cross_v_b), cfg.heads,
                              cfg.head_dim);
        auto cross_out = linear(merge_heads(attention(q2, k2, v2, cfg.head_dim)), blk.cross_out_w,
                                blk.cross_out_b);
        x = add(x, cross_out);

        auto h3 = add(mul(layer_norm(x, blk.ln3_gain, blk.ln3_bias), add_scalar(scale2, T(1))),
                      shift2);
        auto m = linear(gelu(linear(h3, blk.mlp_in_w, blk.mlp_in_b)), blk.mlp_out_w,
                        blk.mlp_out_b);
        x = add(x, mul(m, gate2));
    }

    auto y = linear(layer_norm(x, params.final_gain, params.final_bias), params.head_w,
                    params.head_b);  // [tokens, C]
    static const std::vector<int64_t> from_tokens{0, 3, 1, 2};  // [F,H,W,C] -> [F,C,H,W]
    result.prediction = permute_reshape(reshape(y, {cfg.frames, cfg.height, cfg.width,
                                                    cfg.channels}),
                                        from_tokens, want);
    return result;
}

void save_checkpoint(const std::string& path, const DiTParams& params) {
    std::vector<NamedTensor> tensors;
    params.for_each(
        [&](const std::string& name, const Tensor& t) { tensors.push_back({name, t}); });
    write_container(path, params.config.to_json(), tensors);
}

DiTParams load_checkpoint(const std::string& path) {
    auto [cfg_json, tensors] = read_container(path);
    DiTParams params = init_params<float>(ModelConfig::from_json(cfg_json), 0);
    size_t i = 0;
    params.for_each([&](const std::string& name, Tensor& t) {
        if (i >= tensors.size() || tensors[i].name != name)
            throw IoError("checkpoint: missing or misordered tensor '" + name + "' in " + path);
        if (tensors[i].tensor.shape != t.shape)
            throw IoError("checkpoint: tensor '" + name + "' has shape " +
                          shape_str(tensors[i].tensor.shape) + ", expected " +
                          shape_str(t.shape));
        t = tensors[i].tensor;
        ++i;
    });
    if (i != tensors.size()) throw IoError("checkpoint: extra tensors in " + path);
    return params;
}

template struct DiTParamsT<float>;
template struct DiTParamsT<double>;
template DiTParamsT<float> init_params<float>(const ModelConfig&, uint64_t);
template DiTParamsT<double> init_params<double>(const ModelConfig&, uint64_t);
template ForwardResultT<float> dit_forward<float>(const DiTParamsT<float>&, const TensorT<float>&,
                                                  int64_t, int64_t, int64_t, int64_t, ExecStats*);
template ForwardResultT<double> dit_forward<double>(const DiTParamsT<double>&,
                                                    const TensorT<double>&, int64_t, int64_t,
                                                    int64_t, int64_t, ExecStats*);

}  // namespace tedio
