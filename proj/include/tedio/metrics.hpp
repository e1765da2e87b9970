#pragma once

#include <span>
#include <string>
#include <vector>

#include "tedio/diffusion.hpp"
#include "tedio/dit.hpp"
#include "tedio/tensor.hpp"

namespace tedio {

/// Mean absolute difference between consecutive frames (temporal flicker
/// proxy). video is [F,C,H,W], F >= 2.
double flicker_score(const Tensor& video);

/// Fraction of (pixel, frame-pair) sites whose temporal difference exceeds
/// the threshold; a labeled stand-in for optical-flow dynamic degree.
double dynamic_proxy(const Tensor& video, double threshold);
constexpr double kDynamicProxyThreshold = 0.05;

/// Probability that a random incoherent score exceeds a random coherent
/// one, ties counted 1/2; exact pair counting.
double separation_auroc(std::span<const double> coherent, std::span<const double> incoherent);

struct VariabilityStatsRow {
    int64_t clip = 0;
    int64_t block = 0;
    int64_t t = 0;  // sampling step; 0 means no corruption
    double mean_s = 0.0;
    double median_s = 0.0;
};

/// Diagonal-variability statistics of the model's temporal attention over a
/// clip set: clips are noised to step t with the training corruption (one
/// noise draw per t, shared across clips), then probed at each block.
std::vector<VariabilityStatsRow> variability_stats(const DiTParams& params,
                                                   const NoiseSchedule& schedule,
                                                   std::span<const Tensor> clips,
                                                   std::span<const int64_t> clip_conds,
                                                   std::span<const int64_t> blocks,
                                                   std::span<const int64_t> timesteps,
                                                   uint64_t noise_seed, int64_t jobs = 1);

/// One-sided sign test: probability of >= wins successes in wins+losses
/// fair coin flips (ties dropped by the caller).
double sign_test_p(int64_t wins, int64_t losses);

/// The probe corruption: one deterministic noise draw per timestep (shared
/// across clips), applied with the schedule's training corruption. t = 0
/// returns the clip unchanged.
Tensor probe_noise(const Shape& shape, uint64_t noise_seed, int64_t t);
Tensor corrupt_to_step(const Tensor& clip, int64_t t, const NoiseSchedule& schedule,
                       uint64_t noise_seed);

}  // namespace tedio
