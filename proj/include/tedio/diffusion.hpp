#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "tedio/dit.hpp"
#include "tedio/tensor.hpp"

namespace tedio {

struct TedioConfig;  // tedio.hpp

enum class Objective { ddpm, flow };

const char* objective_name(Objective o);
Objective objective_from_name(const std::string& name);

struct ScheduleConfig {
    Objective kind = Objective::ddpm;
    int64_t sample_steps = 50;      // T
    int64_t train_positions = 1000; // mapped onto sampling steps by even striding

    nlohmann::ordered_json to_json() const;
    static ScheduleConfig from_json(const nlohmann::json& j);
};

/// Coefficient tables indexed by schedule position 0..train_positions.
/// ddpm uses a cosine alpha-bar with per-position beta clipped at 0.999;
/// flow uses the linear interpolation weights (1 - t/T, t/T).
class NoiseSchedule {
public:
    static NoiseSchedule make(const ScheduleConfig& config);

    Objective kind() const { return config_.kind; }
    int64_t sample_steps() const { return config_.sample_steps; }
    int64_t positions() const { return config_.train_positions; }
    int64_t position_of_step(int64_t t) const;  // t in 0..T

    float alpha(int64_t pos) const;
    float sigma(int64_t pos) const;

private:
    ScheduleConfig config_;
    std::vector<float> alpha_, sigma_;
};

/// z_pos = alpha(pos) * z0 + sigma(pos) * eps, pos in 1..train_positions.
Tensor ddpm_corrupt(const Tensor& z0, int64_t pos, const Tensor& eps,
                    const NoiseSchedule& schedule);

/// Convex combination (1 - t/T) z0 + (t/T) zT, t in 0..T.
Tensor flow_interpolate(const Tensor& z0, const Tensor& zT, int64_t t, int64_t T);

/// DDIM inversion helper: predicted clean latent from (z_pos, eps_hat).
Tensor ddim_predict_z0(const Tensor& z, const Tensor& eps_hat, int64_t pos,
                       const NoiseSchedule& schedule);

// ----------------------------------------------------------------- training

struct TrainConfig {
    int64_t steps = 900;
    double lr = 0.06;
    double momentum = 0.9;
    double clip = 1.0;  // global gradient norm
    int64_t batch = 2;
    int64_t jobs = 1;   // per-item gradients fan out; merge is index-ordered

    nlohmann::ordered_json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainItem {
    Tensor video;  // [F,C,H,W], values in [-1,1]
    int64_t cond = 0;
};

struct TrainLogRow {
    int64_t step;
    double loss;
};

class SgdState {
public:
    SgdState(const DiTParams& params, const TrainConfig& config);
    void apply(DiTParams& params, const std::vector<std::vector<float>>& grads);
    const TrainConfig& config() const { return config_; }

private:
    TrainConfig config_;
    std::vector<std::vector<float>> velocity_;
    std::vector<std::string> names_;
};

/// One optimizer step on a batch; deterministic given the rng state.
/// Returns the mean-reduced objective value.
double train_step(DiTParams& params, SgdState& opt, const NoiseSchedule& schedule,
                  const std::vector<const TrainItem*>& batch, Rng& rng);

std::vector<TrainLogRow> train(DiTParams& params, const NoiseSchedule& schedule,
                               const std::vector<TrainItem>& data, const TrainConfig& config,
                               uint64_t seed);

// ----------------------------------------------------------------- sampling

template <class T>
struct SamplerStateT {
    TensorT<T> z;
    int64_t t = 0;  // current sampling step, T..0
    int64_t cond = 0;
};
using SamplerState = SamplerStateT<float>;

/// One deterministic denoising update t -> t-1 (DDIM for ddpm, explicit
/// Euler for flow). Runs without a gradient tape.
void denoise_step(const DiTParams& params, const NoiseSchedule& schedule, SamplerState& state,
                  ExecStats* stats = nullptr);

struct SampleEvent {
    int64_t t;
    int iter;
    double loss;
};

struct SampleResult {
    Tensor video;
    std::vector<SampleEvent> events;  // one row per refinement iteration
    ExecStats baseline_stats;         // block traversals in denoising
    ExecStats refine_stats;           // block traversals in refinement
    double wall_seconds = 0;
};

/// Full sampling run from seed; optional TeDiO refinement during the
/// earliest steps. tedio == nullptr reproduces the plain loop bit-exactly.
SampleResult sample(const DiTParams& params, const NoiseSchedule& schedule, int64_t cond,
                    uint64_t seed, const TedioConfig* tedio);

}  // namespace tedio
