#include "tedio/tedio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tedio {

void TedioConfig::validate(const ModelConfig& model, int64_t sample_steps) const {
    if (block < 1 || block > model.blocks)
        throw UsageError("tedio: block " + std::to_string(block) + " outside 1.." +
                         std::to_string(model.blocks));
    if (bands.empty()) throw UsageError("tedio: empty band set");
    for (int64_t b : bands)
        if (std::abs(b) > model.frames - 2)
            throw UsageError("tedio: band " + std::to_string(b) +
                             " has no difference terms for F=" + std::to_string(model.frames));
    if (top_k < 1 || top_k > model.patch_count())
        throw UsageError("tedio: k " + std::to_string(top_k) + " outside 1.." +
                         std::to_string(model.patch_count()));
    // step_size 0 is the logging-only mode used by the no-op contract
    if (step_size < 0) throw UsageError("tedio: negative step size");
    if (iterations < 0) throw UsageError("tedio: negative iteration count");
    if (early_steps < 0 || early_steps > sample_steps)
        throw UsageError("tedio: ell " + std::to_string(early_steps) + " outside 0.." +
                         std::to_string(sample_steps));
    for (int64_t t : explicit_steps)
        if (t < 1 || t > sample_steps)
            throw UsageError("tedio: explicit step " + std::to_string(t) + " outside 1.." +
                             std::to_string(sample_steps));
}

bool TedioConfig::applies_at(int64_t t, int64_t sample_steps) const {
    if (!explicit_steps.empty())
        return std::find(explicit_steps.begin(), explicit_steps.end(), t) != explicit_steps.end();
    // the first `early_steps` iterations of the t = T..1 loop
    return t > sample_steps - early_steps;
}

nlohmann::ordered_json TedioConfig::to_json() const {
    return {{"block", block},       {"bands", bands},
            {"k", top_k},           {"eta", step_size},
            {"iters", iterations},  {"ell", early_steps},
            {"explicit_steps", explicit_steps}};
}

TedioConfig TedioConfig::from_json(const nlohmann::json& j) {
    TedioConfig c;
    c.block = j.value("block", c.block);
    if (j.contains("bands")) c.bands = j["bands"].get<std::vector<int64_t>>();
    c.top_k = j.value("k", c.top_k);
    c.step_size = j.value("eta", c.step_size);
    c.iterations = j.value("iters", c.iterations);
    c.early_steps = j.value("ell", c.early_steps);
    if (j.contains("explicit_steps"))
        c.explicit_steps = j["explicit_steps"].get<std::vector<int64_t>>();
    return c;
}

template <class T>
TensorT<T> temporal_attention(const AttentionCaptureT<T>& capture, const ModelConfig& config) {
    const int64_t heads = config.heads, tokens = config.tokens(), hd = config.head_dim;
    const int64_t F = config.frames, hw = config.spatial();
    const Shape want{heads, tokens, hd};
    if (capture.q.shape != want || capture.k.shape != want)
        throw DimensionError("temporal_attention: capture " + shape_str(capture.q.shape) +
                             " does not match config " + shape_str(want));

    // [N_h, HWF, C_h] -> [N_h, F, HW, C_h] -> [HW, N_h, F, C_h] -> [P, F, C_h]
    // giving p = (h*W + w)*N_h + head
    static const std::vector<int64_t> order{2, 0, 1, 3};
    const Shape grouped{heads, F, hw, hd};
    const Shape flat{hw * heads, F, hd};
    auto qp = permute_reshape(reshape(capture.q, grouped), order, flat);
    auto kp = permute_reshape(reshape(capture.k, grouped), order, flat);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    return softmax(matmul(mul_scalar(qp, scale), transpose_last2(kp)), -1);
}

template <class T>
std::vector<T> extract_band(const TensorT<T>& map, int64_t offset) {
    if (map.rank() != 2 || map.dim(0) != map.dim(1))
        throw DimensionError("extract_band: expected a square map, got " + shape_str(map.shape));
    const int64_t F = map.dim(0);
    if (std::abs(offset) >= F)
        throw UsageError("extract_band: offset " + std::to_string(offset) + " outside F=" +
                         std::to_string(F));
    const int64_t r0 = offset >= 0 ? 0 : -offset;
    const int64_t c0 = offset >= 0 ? offset : 0;
    const int64_t len = F - std::abs(offset);
    std::vector<T> out(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i) out[static_cast<size_t>(i)] = map.ptr()[(r0 + i) * F + (c0 + i)];
    return out;
}

template <class T>
T variability_score(const TensorT<T>& map, std::span<const int64_t> bands) {
    T total = 0;
    for (int64_t b : bands) {
        const auto band = extract_band(map, b);
        for (size_t i = 0; i + 1 < band.size(); ++i) {
            const T d = band[i + 1] - band[i];
            total += d * d;
        }
    }
    return total;
}

template <class T>
TensorT<T> variability_scores(const TensorT<T>& attention, std::span<const int64_t> bands) {
    return diag_variability(attention, bands);
}

namespace {

template <class S>
std::vector<int64_t> top_k_impl(std::span<const S> scores, int64_t k) {
    const int64_t n = static_cast<int64_t>(scores.size());
    if (k < 1 || k > n)
        throw UsageError("top_k: k " + std::to_string(k) + " outside 1.." + std::to_string(n));
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        return a < b;  // ties: lowest patch index wins
    });
    idx.resize(static_cast<size_t>(k));
    return idx;
}

}  // namespace

std::vector<int64_t> top_k_indices(std::span<const float> scores, int64_t k) {
    return top_k_impl(scores, k);
}
std::vector<int64_t> top_k_indices(std::span<const double> scores, int64_t k) {
    return top_k_impl(scores, k);
}

template <class T>
TensorT<T> tedio_loss(const TensorT<T>& scores, int64_t k) {
    if (scores.rank() != 1)
        throw DimensionError("tedio_loss: scores must be a vector, got " +
                             shape_str(scores.shape));
    const auto idx = top_k_impl(std::span<const T>(scores.ptr(), scores.data->size()), k);
    return mean(gather_rows(scores, idx));
}

template <class T>
std::vector<RefineLogRow> latent_refine(const DiTParamsT<T>& params, SamplerStateT<T>& state,
                                        const NoiseSchedule& schedule, const TedioConfig& config,
                                        ExecStats* stats) {
    config.validate(params.config, schedule.sample_steps());
    const int64_t pos = schedule.position_of_step(state.t);
    const T eta = static_cast<T>(config.step_size);
    std::vector<RefineLogRow> log;
    log.reserve(static_cast<size_t>(config.iterations));

    for (int iter = 0; iter < config.iterations; ++iter) {
        TensorT<T> z = state.z.clone();
        GradScopeT<T> scope;
        scope.watch(z);
        auto out = dit_forward<T>(params, z, state.cond, pos, config.block, config.block, stats);
        auto attn = temporal_attention(*out.capture, params.config);
        auto scores = variability_scores(attn, config.bands);
        auto loss = tedio_loss(scores, config.top_k);  // top-k re-selected each iteration
        const double loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value))
            throw NumericError("refinement: non-finite loss at t=" + std::to_string(state.t) +
                               " iter=" + std::to_string(iter));
        auto grads = scope.backward(loss);
        if (stats) stats->backward_blocks += scope.tape().recorded_blocks;
        const TensorT<T>& g = grads.at(z);
        if (!g.all_finite())
            throw NumericError("refinement: non-finite gradient at t=" + std::to_string(state.t) +
                               " iter=" + std::to_string(iter));
        if (eta != T(0)) {
            TensorT<T> next(z.shape);
            for (int64_t i = 0; i < next.numel(); ++i)
                next.ptr()[i] = z.ptr()[i] - eta * g.ptr()[i];
            state.z = next;  // detached by construction
        }
        log.push_back({state.t, iter, loss_value});
    }
    return log;
}

#define TEDIO_INST_METHOD(T)                                                                 \
    template TensorT<T> temporal_attention<T>(const AttentionCaptureT<T>&,                   \
                                              const ModelConfig&);                           \
    template std::vector<T> extract_band<T>(const TensorT<T>&, int64_t);                     \
    template T variability_score<T>(const TensorT<T>&, std::span<const int64_t>);            \
    template TensorT<T> variability_scores<T>(const TensorT<T>&, std::span<const int64_t>);  \
    template TensorT<T> tedio_loss<T>(const TensorT<T>&, int64_t);                           \
    template std::vector<RefineLogRow> latent_refine<T>(                                     \
        const DiTParamsT<T>&, SamplerStateT<T>&, const NoiseSchedule&, const TedioConfig&,   \
        ExecStats*);

TEDIO_INST_METHOD(float)
TEDIO_INST_METHOD(double)
#undef TEDIO_INST_METHOD

}  // namespace tedio
