#include "tedio/diffusion.hpp"

#include <chrono>
#include <cmath>

#include "tedio/parallel.hpp"
#include "tedio/tedio.hpp"

namespace tedio {

const char* objective_name(Objective o) { return o == Objective::ddpm ? "ddpm" : "flow"; }

Objective objective_from_name(const std::string& name) {
    if (name == "ddpm") return Objective::ddpm;
    if (name == "flow") return Objective::flow;
    throw UsageError("schedule: unknown objective '" + name + "'");
}

nlohmann::ordered_json ScheduleConfig::to_json() const {
    return {{"kind", objective_name(kind)},
            {"sample_steps", sample_steps},
            {"train_positions", train_positions}};
}

ScheduleConfig ScheduleConfig::from_json(const nlohmann::json& j) {
    ScheduleConfig c;
    if (j.contains("kind")) c.kind = objective_from_name(j["kind"].get<std::string>());
    c.sample_steps = j.value("sample_steps", c.sample_steps);
    c.train_positions = j.value("train_positions", c.train_positions);
    if (c.sample_steps < 1 || c.train_positions < c.sample_steps)
        throw UsageError("schedule: need 1 <= sample_steps <= train_positions");
    return c;
}

NoiseSchedule NoiseSchedule::make(const ScheduleConfig& config) {
    NoiseSchedule s;
    s.config_ = config;
    const int64_t P = config.train_positions;
    s.alpha_.resize(static_cast<size_t>(P) + 1);
    s.sigma_.resize(static_cast<size_t>(P) + 1);
    if (config.kind == Objective::ddpm) {
        // cosine alpha-bar (Nichol & Dhariwal), beta clipped at 0.999
        const double shift = 0.008;
        auto f = [&](double u) {
            const double v = std::cos((u + shift) / (1.0 + shift) * 3.14159265358979323846 / 2.0);
            return v * v;
        };
        const double f0 = f(0.0);
        double abar = 1.0, abar_prev = 1.0;
        s.alpha_[0] = 1.0f;
        s.sigma_[0] = 0.0f;
        for (int64_t j = 1; j <= P; ++j) {
            const double raw = f(static_cast<double>(j) / P) / f0;
            const double beta = std::min(1.0 - raw / abar_prev, 0.999);
            // alpha-bar floor keeps the DDIM inversion conditioned at t = T
            abar = std::max(abar * (1.0 - beta), 1e-4);
            abar_prev = raw;
            s.alpha_[j] = static_cast<float>(std::sqrt(abar));
            s.sigma_[j] = static_cast<float>(std::sqrt(1.0 - abar));
        }
    } else {
        for (int64_t j = 0; j <= P; ++j) {
            const float w = static_cast<float>(j) / static_cast<float>(P);
            s.alpha_[j] = 1.0f - w;  // clean weight
            s.sigma_[j] = w;         // noise weight
        }
    }
    return s;
}

int64_t NoiseSchedule::position_of_step(int64_t t) const {
    if (t < 0 || t > config_.sample_steps)
        throw UsageError("schedule: step " + std::to_string(t) + " outside 0.." +
                         std::to_string(config_.sample_steps));
    return t * config_.train_positions / config_.sample_steps;
}

float NoiseSchedule::alpha(int64_t pos) const {
    if (pos < 0 || pos > positions())
        throw UsageError("schedule: position " + std::to_string(pos) + " out of range");
    return alpha_[static_cast<size_t>(pos)];
}

float NoiseSchedule::sigma(int64_t pos) const {
    if (pos < 0 || pos > positions())
        throw UsageError("schedule: position " + std::to_string(pos) + " out of range");
    return sigma_[static_cast<size_t>(pos)];
}

Tensor ddpm_corrupt(const Tensor& z0, int64_t pos, const Tensor& eps,
                    const NoiseSchedule& schedule) {
    if (pos < 1 || pos > schedule.positions())
        throw UsageError("corrupt: position " + std::to_string(pos) + " outside 1.." +
                         std::to_string(schedule.positions()));
    if (z0.shape != eps.shape)
        throw DimensionError("corrupt: z0 " + shape_str(z0.shape) + " vs eps " +
                             shape_str(eps.shape));
    const float a = schedule.alpha(pos), s = schedule.sigma(pos);
    Tensor out(z0.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.ptr()[i] = a * z0.ptr()[i] + s * eps.ptr()[i];
    return out;
}

Tensor flow_interpolate(const Tensor& z0, const Tensor& zT, int64_t t, int64_t T) {
    if (t < 0 || t > T)
        throw UsageError("flow_interpolate: t " + std::to_string(t) + " outside 0.." +
                         std::to_string(T));
    if (z0.shape != zT.shape)
        throw DimensionError("flow_interpolate: z0 " + shape_str(z0.shape) + " vs zT " +
                             shape_str(zT.shape));
    const float w = static_cast<float>(t) / static_cast<float>(T);
    const float v = 1.0f - w;
    Tensor out(z0.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.ptr()[i] = v * z0.ptr()[i] + w * zT.ptr()[i];
    return out;
}

Tensor ddim_predict_z0(const Tensor& z, const Tensor& eps_hat, int64_t pos,
                       const NoiseSchedule& schedule) {
    const float a = schedule.alpha(pos), s = schedule.sigma(pos);
    Tensor out(z.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.ptr()[i] = (z.ptr()[i] - s * eps_hat.ptr()[i]) / a;
    return out;
}

// ------------------------------------------------------------------ training

nlohmann::ordered_json TrainConfig::to_json() const {
    return {{"steps", steps},   {"lr", lr},       {"momentum", momentum},
            {"clip", clip},     {"batch", batch}, {"jobs", jobs}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.clip = j.value("clip", c.clip);
    c.batch = j.value("batch", c.batch);
    c.jobs = j.value("jobs", c.jobs);
    if (c.steps < 0 || c.lr <= 0 || c.batch < 1) throw UsageError("train config: invalid values");
    return c;
}

SgdState::SgdState(const DiTParams& params, const TrainConfig& config) : config_(config) {
    params.for_each([&](const std::string& name, const Tensor& t) {
        names_.push_back(name);
        velocity_.emplace_back(static_cast<size_t>(t.numel()), 0.0f);
    });
}

void SgdState::apply(DiTParams& params, const std::vector<std::vector<float>>& grads) {
    // optional global-norm clip, then momentum step
    double sq = 0.0;
    for (const auto& g : grads)
        for (float v : g) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    const float scale =
        (config_.clip > 0 && norm > config_.clip) ? static_cast<float>(config_.clip / norm) : 1.0f;

    size_t i = 0;
    const float mu = static_cast<float>(config_.momentum);
    const float lr = static_cast<float>(config_.lr);
    params.for_each([&](const std::string& name, Tensor& t) {
        auto& vel = velocity_[i];
        const auto& g = grads[i];
        if (params.trainable(name)) {
            for (int64_t j = 0; j < t.numel(); ++j) {
                vel[j] = mu * vel[j] + scale * g[j];
                t.ptr()[j] -= lr * vel[j];
            }
        }
        ++i;
    });
}

double train_step(DiTParams& params, SgdState& opt, const NoiseSchedule& schedule,
                  const std::vector<const TrainItem*>& batch, Rng& rng) {
    const int64_t n = static_cast<int64_t>(batch.size());
    if (n == 0) throw UsageError("train_step: empty batch");
    for (const TrainItem* item : batch)
        if (item->video.shape !=
            Shape{params.config.frames, params.config.channels, params.config.height,
                  params.config.width})
            throw DimensionError("train_step: clip shape " + shape_str(item->video.shape) +
                                 " does not match the model config");

    // all randomness drawn up front, in item order, so a parallel map over
    // items merges bit-identically to the sequential loop
    std::vector<int64_t> pos(n);
    std::vector<Tensor> noise(n);
    for (int64_t i = 0; i < n; ++i) {
        pos[i] = rng.uniform_int(1, schedule.positions());
        noise[i] = randn<float>(batch[static_cast<size_t>(i)]->video.shape, rng);
    }

    std::vector<std::vector<std::vector<float>>> item_grads(static_cast<size_t>(n));
    std::vector<double> item_loss(static_cast<size_t>(n), 0.0);

    parallel_for(n, opt.config().jobs, [&](int64_t i) {
        const TrainItem& item = *batch[static_cast<size_t>(i)];
        Tensor z_t, target;
        if (schedule.kind() == Objective::ddpm) {
            z_t = ddpm_corrupt(item.video, pos[i], noise[i], schedule);
            target = noise[i];
        } else {
            z_t = flow_interpolate(item.video, noise[i], pos[i], schedule.positions());
            target = Tensor(item.video.shape);
            for (int64_t j = 0; j < target.numel(); ++j)
                target.ptr()[j] = noise[i].ptr()[j] - item.video.ptr()[j];
        }

        // shallow copy: buffers are shared and read-only here, but the tape
        // linkage fields must be private to this worker's scope
        DiTParams p = params;
        GradScope scope;
        p.for_each([&](const std::string& name, Tensor& t) {
            if (p.trainable(name)) scope.watch(t);
        });
        auto out = dit_forward<float>(p, z_t, item.cond, pos[i]);
        auto loss = mean(square(sub(*out.prediction, target)));
        item_loss[static_cast<size_t>(i)] = loss.item();
        auto grads = scope.backward(loss);

        auto& sink = item_grads[static_cast<size_t>(i)];
        p.for_each([&](const std::string& name, Tensor& t) {
            std::vector<float> g(static_cast<size_t>(t.numel()), 0.0f);
            if (p.trainable(name) && grads.contains(t)) {
                const Tensor& gt = grads.at(t);
                std::copy(gt.ptr(), gt.ptr() + gt.numel(), g.begin());
            }
            sink.push_back(std::move(g));
        });
    });

    // fixed index-order merge
    std::vector<std::vector<float>> total = std::move(item_grads[0]);
    for (int64_t i = 1; i < n; ++i)
        for (size_t pi = 0; pi < total.size(); ++pi) {
            const auto& src = item_grads[static_cast<size_t>(i)][pi];
            auto& dst = total[pi];
            for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
        }
    const float inv = 1.0f / static_cast<float>(n);
    for (auto& g : total)
        for (auto& v : g) v *= inv;

    double loss = 0.0;
    for (double l : item_loss) loss += l;
    loss /= static_cast<double>(n);

    opt.apply(params, total);
    return loss;
}

std::vector<TrainLogRow> train(DiTParams& params, const NoiseSchedule& schedule,
                               const std::vector<TrainItem>& data, const TrainConfig& config,
                               uint64_t seed) {
    if (data.empty()) throw UsageError("train: empty dataset");
    SgdState opt(params, config);
    Rng rng(seed);
    std::vector<TrainLogRow> log;
    log.reserve(static_cast<size_t>(config.steps));
    for (int64_t step = 0; step < config.steps; ++step) {
        std::vector<const TrainItem*> batch;
        batch.reserve(static_cast<size_t>(config.batch));
        for (int64_t b = 0; b < config.batch; ++b)
            batch.push_back(&data[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(data.size()) - 1))]);
        const double loss = train_step(params, opt, schedule, batch, rng);
        if (!std::isfinite(loss))
            throw NumericError("training: non-finite loss at step " + std::to_string(step));
        if (!params.all_finite())
            throw NumericError("training: non-finite parameters after step " +
                               std::to_string(step));
        log.push_back({step, loss});
    }
    return log;
}

// ----------------------------------------------------------------- sampling

void denoise_step(const DiTParams& params, const NoiseSchedule& schedule, SamplerState& state,
                  ExecStats* stats) {
    if (state.t < 1) throw UsageError("denoise_step: t must be >= 1");
    const int64_t pos = schedule.position_of_step(state.t);
    const int64_t pos_prev = schedule.position_of_step(state.t - 1);
    auto out = dit_forward<float>(params, state.z, state.cond, pos, 0, 0, stats);
    const Tensor& pred = *out.prediction;
    Tensor next(state.z.shape);
    if (schedule.kind() == Objective::ddpm) {
        // DDIM update in ratio form: z' = (a'/a) z + (s' - (a'/a) s) eps_hat.
        // Algebraically a' * predict_z0 + s' * eps_hat, but without the 1/a
        // amplification of rounding error near t = T.
        const float a = schedule.alpha(pos), s = schedule.sigma(pos);
        const float ap = schedule.alpha(pos_prev), sp = schedule.sigma(pos_prev);
        const float r = ap / a;
        const float c = sp - r * s;
        for (int64_t i = 0; i < next.numel(); ++i)
            next.ptr()[i] = r * state.z.ptr()[i] + c * pred.ptr()[i];
    } else {
        const float dt = 1.0f / static_cast<float>(schedule.sample_steps());
        for (int64_t i = 0; i < next.numel(); ++i)
            next.ptr()[i] = state.z.ptr()[i] - dt * pred.ptr()[i];
    }
    state.z = next;
    state.t -= 1;
}

SampleResult sample(const DiTParams& params, const NoiseSchedule& schedule, int64_t cond,
                    uint64_t seed, const TedioConfig* tedio) {
    const auto start = std::chrono::steady_clock::now();
    if (tedio) tedio->validate(params.config, schedule.sample_steps());

    Rng rng(seed);
    SampleResult result;
    SamplerState state;
    state.z = randn<float>({params.config.frames, params.config.channels, params.config.height,
                            params.config.width},
                           rng);
    state.t = schedule.sample_steps();
    state.cond = cond;

    while (state.t >= 1) {
        if (tedio && tedio->applies_at(state.t, schedule.sample_steps())) {
            auto rows = latent_refine<float>(params, state, schedule, *tedio,
                                             &result.refine_stats);
            for (const auto& r : rows) result.events.push_back({r.t, r.iter, r.loss});
        }
        denoise_step(params, schedule, state, &result.baseline_stats);
    }
    result.video = state.z;
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace tedio
