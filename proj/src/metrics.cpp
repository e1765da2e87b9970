#include "tedio/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "tedio/parallel.hpp"
#include "tedio/tedio.hpp"

namespace tedio {

double flicker_score(const Tensor& video) {
    if (video.rank() != 4) throw DimensionError("flicker: expected [F,C,H,W] video");
    const int64_t F = video.dim(0);
    if (F < 2) throw UsageError("flicker: need at least two frames");
    const int64_t fsz = video.numel() / F;
    double acc = 0.0;
    for (int64_t f = 0; f + 1 < F; ++f) {
        const float* a = video.ptr() + f * fsz;
        const float* b = a + fsz;
        for (int64_t i = 0; i < fsz; ++i) acc += std::abs(static_cast<double>(b[i]) - a[i]);
    }
    return acc / static_cast<double>((F - 1) * fsz);
}

double dynamic_proxy(const Tensor& video, double threshold) {
    if (video.rank() != 4) throw DimensionError("dynamic_proxy: expected [F,C,H,W] video");
    if (threshold < 0) throw UsageError("dynamic_proxy: negative threshold");
    const int64_t F = video.dim(0);
    if (F < 2) throw UsageError("dynamic_proxy: need at least two frames");
    const int64_t fsz = video.numel() / F;
    int64_t over = 0;
    for (int64_t f = 0; f + 1 < F; ++f) {
        const float* a = video.ptr() + f * fsz;
        const float* b = a + fsz;
        for (int64_t i = 0; i < fsz; ++i)
            if (std::abs(static_cast<double>(b[i]) - a[i]) > threshold) ++over;
    }
    return static_cast<double>(over) / static_cast<double>((F - 1) * fsz);
}

double separation_auroc(std::span<const double> coherent, std::span<const double> incoherent) {
    if (coherent.empty() || incoherent.empty()) throw UsageError("auroc: empty score set");
    double wins = 0.0;
    for (double inc : incoherent)
        for (double coh : coherent) {
            if (inc > coh)
                wins += 1.0;
            else if (inc == coh)
                wins += 0.5;
        }
    return wins / (static_cast<double>(coherent.size()) * static_cast<double>(incoherent.size()));
}

std::vector<VariabilityStatsRow> variability_stats(const DiTParams& params,
                                                   const NoiseSchedule& schedule,
                                                   std::span<const Tensor> clips,
                                                   std::span<const int64_t> clip_conds,
                                                   std::span<const int64_t> blocks,
                                                   std::span<const int64_t> timesteps,
                                                   uint64_t noise_seed, int64_t jobs) {
    if (clips.size() != clip_conds.size())
        throw UsageError("variability_stats: clips and cond ids differ in length");
    const Shape want{params.config.frames, params.config.channels, params.config.height,
                     params.config.width};
    for (const Tensor& c : clips)
        if (c.shape != want)
            throw DimensionError("variability_stats: clip " + shape_str(c.shape) +
                                 " does not match the model config");

    const int64_t n = static_cast<int64_t>(clips.size());
    std::vector<std::vector<VariabilityStatsRow>> per_clip(static_cast<size_t>(n));
    parallel_for(n, jobs, [&](int64_t ci) {
        auto& rows = per_clip[static_cast<size_t>(ci)];
        for (size_t ti = 0; ti < timesteps.size(); ++ti) {
            const int64_t t = timesteps[ti];
            Tensor z = corrupt_to_step(clips[static_cast<size_t>(ci)], t, schedule, noise_seed);
            for (int64_t block : blocks) {
                auto out = dit_forward<float>(params, z, clip_conds[static_cast<size_t>(ci)],
                                              t == 0 ? 0 : schedule.position_of_step(t), block,
                                              block);
                auto attn = temporal_attention(*out.capture, params.config);
                static const std::vector<int64_t> bands{-1, 0, 1};
                auto scores = variability_scores(attn, bands);
                std::vector<double> s(scores.ptr(), scores.ptr() + scores.numel());
                double mean = 0.0;
                for (double v : s) mean += v;
                mean /= static_cast<double>(s.size());
                std::nth_element(s.begin(), s.begin() + s.size() / 2, s.end());
                rows.push_back({ci, block, t, mean, s[s.size() / 2]});
            }
        }
    });

    std::vector<VariabilityStatsRow> rows;
    for (auto& r : per_clip) rows.insert(rows.end(), r.begin(), r.end());
    return rows;
}

Tensor probe_noise(const Shape& shape, uint64_t noise_seed, int64_t t) {
    Rng rng(noise_seed + 0x9e3779b9ull * static_cast<uint64_t>(t + 1));
    return randn<float>(shape, rng);
}

Tensor corrupt_to_step(const Tensor& clip, int64_t t, const NoiseSchedule& schedule,
                       uint64_t noise_seed) {
    if (t == 0) return clip.clone();
    const Tensor noise = probe_noise(clip.shape, noise_seed, t);
    const int64_t pos = schedule.position_of_step(t);
    if (schedule.kind() == Objective::ddpm) return ddpm_corrupt(clip, pos, noise, schedule);
    return flow_interpolate(clip, noise, pos, schedule.positions());
}

double sign_test_p(int64_t wins, int64_t losses) {
    const int64_t n = wins + losses;
    if (n == 0) return 1.0;
    // exact binomial tail, log-space for robustness
    double p = 0.0;
    for (int64_t k = wins; k <= n; ++k) {
        double logc = 0.0;
        for (int64_t i = 0; i < k; ++i)
            logc += std::log(static_cast<double>(n - i)) - std::log(static_cast<double>(i + 1));
        p += std::exp(logc - static_cast<double>(n) * std::log(2.0));
    }
    return std::min(1.0, p);
}

}  // namespace tedio
