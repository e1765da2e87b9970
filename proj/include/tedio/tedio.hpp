#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tedio/diffusion.hpp"
#include "tedio/dit.hpp"

namespace tedio {

/// Method hyperparameters. Defaults mirror the reference setup: bands
/// {-1,0,+1}, k=1, 3 iterations, the 12 earliest sampling steps, capture
/// block 2 of the 4-block toy model. step_size comes from the one-time
/// descent calibration (see configs/toy.json).
struct TedioConfig {
    int64_t block = 2;
    std::vector<int64_t> bands = {-1, 0, 1};
    int64_t top_k = 1;
    double step_size = 0.05;  // eta
    int64_t iterations = 3;   // per optimized timestep
    int64_t early_steps = 12; // ell: how many of the earliest sampling steps
    std::vector<int64_t> explicit_steps;  // optional override: exact t values

    void validate(const ModelConfig& model, int64_t sample_steps) const;
    bool applies_at(int64_t t, int64_t sample_steps) const;

    nlohmann::ordered_json to_json() const;
    static TedioConfig from_json(const nlohmann::json& j);
};

/// Regroups captured Q,K ([N_h, HWF, C_h], frame-major tokens) into
/// Q',K' [P, F, C_h] with p = (h*W + w)*N_h + head, then softmax(Q'K'^T/
/// sqrt(C_h)) per patch-head: the temporal attention tensor [P, F, F].
/// Stays on the gradient graph.
template <class T>
TensorT<T> temporal_attention(const AttentionCaptureT<T>& capture, const ModelConfig& config);

/// Band values of a single F-by-F map at the given offset (not taped).
template <class T>
std::vector<T> extract_band(const TensorT<T>& map, int64_t offset);

/// Eq-by-eq scalar evaluation for one map (not taped): sum over bands of
/// squared successive differences.
template <class T>
T variability_score(const TensorT<T>& map, std::span<const int64_t> bands);

/// Taped per-patch scores [P] from the attention tensor [P,F,F].
template <class T>
TensorT<T> variability_scores(const TensorT<T>& attention, std::span<const int64_t> bands);

/// Indices of the k largest scores, ties broken by lowest index.
std::vector<int64_t> top_k_indices(std::span<const float> scores, int64_t k);
std::vector<int64_t> top_k_indices(std::span<const double> scores, int64_t k);

/// Mean of the k largest scores. Selection indices are fixed during
/// differentiation; gradient flows through the selected values only.
template <class T>
TensorT<T> tedio_loss(const TensorT<T>& scores, int64_t k);

struct RefineLogRow {
    int64_t t;
    int iter;
    double loss;
};

/// A few gradient steps on z_t against the top-k diagonal-variability loss,
/// re-selecting top-k each iteration from a fresh truncated forward.
/// Returns the iteration log; state.z is replaced by the refined latent
/// (detached). Counts block traversals into stats when given.
template <class T>
std::vector<RefineLogRow> latent_refine(const DiTParamsT<T>& params, SamplerStateT<T>& state,
                                        const NoiseSchedule& schedule, const TedioConfig& config,
                                        ExecStats* stats = nullptr);

#define TEDIO_EXTERN_METHOD(T)                                                               \
    extern template TensorT<T> temporal_attention<T>(const AttentionCaptureT<T>&,            \
                                                     const ModelConfig&);                    \
    extern template std::vector<T> extract_band<T>(const TensorT<T>&, int64_t);              \
    extern template T variability_score<T>(const TensorT<T>&, std::span<const int64_t>);     \
    extern template TensorT<T> variability_scores<T>(const TensorT<T>&,                      \
                                                     std::span<const int64_t>);              \
    extern template TensorT<T> tedio_loss<T>(const TensorT<T>&, int64_t);                    \
    extern template std::vector<RefineLogRow> latent_refine<T>(                              \
        const DiTParamsT<T>&, SamplerStateT<T>&, const NoiseSchedule&, const TedioConfig&,   \
        ExecStats*);

TEDIO_EXTERN_METHOD(float)
TEDIO_EXTERN_METHOD(double)
#undef TEDIO_EXTERN_METHOD

}  // namespace tedio
