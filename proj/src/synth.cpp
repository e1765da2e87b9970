#include "tedio/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tedio/tdt_io.hpp"

namespace tedio {

namespace fs = std::filesystem;

nlohmann::ordered_json SceneSpec::to_json() const {
    return {{"kind", kind == ShapeKind::square ? "square" : "disc"},
            {"size", size},
            {"start_y", start_y},
            {"start_x", start_x},
            {"vel_y", vel_y},
            {"vel_x", vel_x},
            {"intensity", intensity},
            {"background", background}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
    SceneSpec s;
    const std::string kind = j.value("kind", "square");
    if (kind == "square")
        s.kind = ShapeKind::square;
    else if (kind == "disc")
        s.kind = ShapeKind::disc;
    else
        throw UsageError("scene: unknown shape kind '" + kind + "'");
    s.size = j.value("size", s.size);
    s.start_y = j.value("start_y", s.start_y);
    s.start_x = j.value("start_x", s.start_x);
    s.vel_y = j.value("vel_y", s.vel_y);
    s.vel_x = j.value("vel_x", s.vel_x);
    s.intensity = j.value("intensity", s.intensity);
    s.background = j.value("background", s.background);
    return s;
}

int64_t class_id_of(const SceneSpec& spec) {
    const int64_t kind = spec.kind == ShapeKind::square ? 0 : 1;
    const double angle = std::atan2(spec.vel_y, spec.vel_x);  // (-pi, pi]
    int64_t bucket =
        static_cast<int64_t>(std::floor((angle + 3.14159265358979323846) / (3.14159265358979323846 / 4.0)));
    bucket = std::clamp<int64_t>(bucket, 0, 7);
    return kind * 8 + bucket;
}

SceneSpec random_scene(Rng& rng, int64_t height, int64_t width) {
    SceneSpec s;
    s.kind = rng.uniform() < 0.5 ? ShapeKind::square : ShapeKind::disc;
    // shape takes roughly a fifth to a third of the short frame side
    const double side = static_cast<double>(std::min(height, width));
    s.size = rng.uniform(std::max(0.75, 0.2 * side), std::max(1.0, 0.3 * side));
    const double max_y = std::max(0.0, static_cast<double>(height) - s.size - 1.0);
    const double max_x = std::max(0.0, static_cast<double>(width) - s.size - 1.0);
    s.start_y = rng.uniform(0.0, max_y);
    s.start_x = rng.uniform(0.0, max_x);
    const double speed = rng.uniform(0.4, 1.5);
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    s.vel_y = speed * std::sin(angle);
    s.vel_x = speed * std::cos(angle);
    s.intensity = static_cast<float>(rng.uniform(0.6, 1.0));
    s.background = static_cast<float>(rng.uniform(-0.8, -0.4));
    return s;
}

namespace {

// triangle-wave reflection of x into [0, limit]
double reflect(double x, double limit) {
    if (limit <= 0) return 0.0;
    const double period = 2.0 * limit;
    double u = std::fmod(x, period);
    if (u < 0) u += period;
    return u <= limit ? u : period - u;
}

// Offset-independent coverage template: the shape rasterized once on its own
// grid. Translating the template by bilinear splat conserves its mass, which
// keeps per-frame intensity sums constant across a clip.
struct CoverageTemplate {
    int64_t extent;
    std::vector<double> cells;  // extent x extent
};

CoverageTemplate make_template(const SceneSpec& spec) {
    const int64_t e = static_cast<int64_t>(std::ceil(spec.size)) + 1;
    CoverageTemplate t{e, std::vector<double>(static_cast<size_t>(e * e), 0.0)};
    if (spec.kind == ShapeKind::square) {
        // exact box overlap of [0,size]^2 with unit cells
        for (int64_t y = 0; y < e; ++y)
            for (int64_t x = 0; x < e; ++x) {
                const double oy = std::min<double>(y + 1, spec.size) - std::max<double>(y, 0.0);
                const double ox = std::min<double>(x + 1, spec.size) - std::max<double>(x, 0.0);
                t.cells[static_cast<size_t>(y * e + x)] =
                    std::max(0.0, oy) * std::max(0.0, ox);
            }
    } else {
        // supersampled disc of diameter `size`
        constexpr int kSub = 8;
        const double r = spec.size / 2.0;
        const double cy = r, cx = r;
        for (int64_t y = 0; y < e; ++y)
            for (int64_t x = 0; x < e; ++x) {
                int hits = 0;
                for (int sy = 0; sy < kSub; ++sy)
                    for (int sx = 0; sx < kSub; ++sx) {
                        const double py = y + (sy + 0.5) / kSub;
                        const double px = x + (sx + 0.5) / kSub;
                        if ((py - cy) * (py - cy) + (px - cx) * (px - cx) <= r * r) ++hits;
                    }
                t.cells[static_cast<size_t>(y * e + x)] =
                    static_cast<double>(hits) / (kSub * kSub);
            }
    }
    return t;
}

// splat the template at fractional (py, px), adding (intensity-background)
// times coverage onto a background-filled frame
void splat(float* frame, int64_t H, int64_t W, const CoverageTemplate& tmpl, double py, double px,
           float scale) {
    const int64_t iy = static_cast<int64_t>(std::floor(py));
    const int64_t ix = static_cast<int64_t>(std::floor(px));
    const double fy = py - iy, fx = px - ix;
    const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx, w10 = fy * (1 - fx),
                 w11 = fy * fx;
    for (int64_t ty = 0; ty < tmpl.extent; ++ty)
        for (int64_t tx = 0; tx < tmpl.extent; ++tx) {
            const double cov = tmpl.cells[static_cast<size_t>(ty * tmpl.extent + tx)];
            if (cov == 0.0) continue;
            const double v = cov * scale;
            auto put = [&](int64_t y, int64_t x, double w) {
                if (w == 0.0 || y < 0 || y >= H || x < 0 || x >= W) return;
                frame[y * W + x] += static_cast<float>(v * w);
            };
            put(iy + ty, ix + tx, w00);
            put(iy + ty, ix + tx + 1, w01);
            put(iy + ty + 1, ix + tx, w10);
            put(iy + ty + 1, ix + tx + 1, w11);
        }
}

// Positions are reflected into [0, extent - size - 1]: the one-cell margin
// keeps every bilinear splat target inside the frame, which is what makes
// per-frame mass exactly conserved.
double position_limit(int64_t extent, double size) {
    return std::max(0.0, static_cast<double>(extent) - size - 1.0);
}

std::vector<std::pair<double, double>> trajectory(const SceneSpec& spec, int64_t frames,
                                                  int64_t height, int64_t width) {
    const double max_y = position_limit(height, spec.size);
    const double max_x = position_limit(width, spec.size);
    std::vector<std::pair<double, double>> pos(static_cast<size_t>(frames));
    for (int64_t f = 0; f < frames; ++f) {
        pos[static_cast<size_t>(f)] = {reflect(spec.start_y + spec.vel_y * f, max_y),
                                       reflect(spec.start_x + spec.vel_x * f, max_x)};
    }
    return pos;
}

Tensor render(const SceneSpec& spec, const std::vector<std::pair<double, double>>& positions,
              int64_t frames, int64_t height, int64_t width) {
    Tensor video({frames, 1, height, width});
    const CoverageTemplate tmpl = make_template(spec);
    const float scale = spec.intensity - spec.background;
    for (int64_t f = 0; f < frames; ++f) {
        float* frame = video.ptr() + f * height * width;
        std::fill(frame, frame + height * width, spec.background);
        splat(frame, height, width, tmpl, positions[static_cast<size_t>(f)].first,
              positions[static_cast<size_t>(f)].second, scale);
    }
    return video;
}

}  // namespace

Tensor gen_coherent(const SceneSpec& spec, int64_t frames, int64_t height, int64_t width) {
    if (spec.size <= 0 || spec.size > static_cast<double>(std::min(height, width)))
        throw UsageError("scene: shape size " + std::to_string(spec.size) +
                         " does not fit a " + std::to_string(height) + "x" +
                         std::to_string(width) + " frame");
    if (frames < 1) throw UsageError("scene: need at least one frame");
    return render(spec, trajectory(spec, frames, height, width), frames, height, width);
}

const char* jitter_mode_name(JitterMode m) {
    switch (m) {
        case JitterMode::position_noise: return "position_noise";
        case JitterMode::frame_shuffle: return "frame_shuffle";
        default: return "teleport";
    }
}

JitterMode jitter_mode_from_name(const std::string& name) {
    if (name == "position_noise") return JitterMode::position_noise;
    if (name == "frame_shuffle") return JitterMode::frame_shuffle;
    if (name == "teleport") return JitterMode::teleport;
    throw UsageError("jitter: unknown mode '" + name + "'");
}

nlohmann::ordered_json JitterSpec::to_json() const {
    return {{"mode", jitter_mode_name(mode)}, {"amplitude", amplitude}, {"seed", seed}};
}

JitterSpec JitterSpec::from_json(const nlohmann::json& j) {
    JitterSpec s;
    if (j.contains("mode")) s.mode = jitter_mode_from_name(j["mode"].get<std::string>());
    s.amplitude = j.value("amplitude", s.amplitude);
    s.seed = j.value("seed", s.seed);
    return s;
}

Tensor inject_jitter(const Tensor& video, const SceneSpec& scene, const JitterSpec& jitter) {
    if (video.rank() != 4) throw DimensionError("jitter: expected [F,C,H,W] video");
    if (jitter.amplitude == 0.0) return video.clone();
    const int64_t F = video.dim(0), H = video.dim(2), W = video.dim(3);
    Rng rng(jitter.seed);

    if (jitter.mode == JitterMode::frame_shuffle) {
        const int64_t window = std::max<int64_t>(1, std::llround(jitter.amplitude));
        std::vector<int64_t> order(static_cast<size_t>(F));
        for (int64_t f = 0; f < F; ++f) order[static_cast<size_t>(f)] = f;
        for (int64_t w0 = 0; w0 < F; w0 += window) {
            const int64_t w1 = std::min(w0 + window, F);
            rng.shuffle(order.begin() + w0, order.begin() + w1);
        }
        Tensor out(video.shape);
        const int64_t fsz = video.numel() / F;
        for (int64_t f = 0; f < F; ++f)
            std::copy_n(video.ptr() + order[static_cast<size_t>(f)] * fsz, fsz,
                        out.ptr() + f * fsz);
        return out;
    }

    auto positions = trajectory(scene, F, H, W);
    const double max_y = position_limit(H, scene.size);
    const double max_x = position_limit(W, scene.size);
    if (jitter.mode == JitterMode::position_noise) {
        for (auto& [py, px] : positions) {
            py = reflect(py + rng.uniform(-jitter.amplitude, jitter.amplitude), max_y);
            px = reflect(px + rng.uniform(-jitter.amplitude, jitter.amplitude), max_x);
        }
    } else {  // teleport: relocate the object at `amplitude` random frames
        const int64_t events = std::min<int64_t>(F, std::llround(jitter.amplitude));
        for (int64_t e = 0; e < events; ++e) {
            const int64_t f = rng.uniform_int(0, F - 1);
            positions[static_cast<size_t>(f)] = {rng.uniform(0.0, max_y), rng.uniform(0.0, max_x)};
        }
    }
    return render(scene, positions, F, H, W);
}

nlohmann::ordered_json CorpusConfig::to_json() const {
    return {{"count", count},
            {"jitter_rate", jitter_rate},
            {"jitter_mode", jitter_mode_name(jitter_mode)},
            {"jitter_amplitude", jitter_amplitude},
            {"frames", frames},
            {"height", height},
            {"width", width},
            {"seed", seed}};
}

CorpusConfig CorpusConfig::from_json(const nlohmann::json& j) {
    CorpusConfig c;
    c.count = j.value("count", c.count);
    c.jitter_rate = j.value("jitter_rate", c.jitter_rate);
    if (j.contains("jitter_mode"))
        c.jitter_mode = jitter_mode_from_name(j["jitter_mode"].get<std::string>());
    c.jitter_amplitude = j.value("jitter_amplitude", c.jitter_amplitude);
    c.frames = j.value("frames", c.frames);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.seed = j.value("seed", c.seed);
    if (c.count < 1) throw UsageError("corpus: count must be >= 1");
    if (c.jitter_rate < 0 || c.jitter_rate > 1) throw UsageError("corpus: jitter rate outside [0,1]");
    return c;
}

std::vector<ClipMeta> gen_corpus(const CorpusConfig& config, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("corpus: cannot create " + out_dir + ": " + ec.message());

    const int64_t n_jitter = std::llround(config.jitter_rate * static_cast<double>(config.count));
    Rng rng(config.seed);
    std::vector<ClipMeta> meta;
    nlohmann::ordered_json manifest;
    manifest["config"] = config.to_json();
    manifest["clips"] = nlohmann::ordered_json::array();

    for (int64_t i = 0; i < config.count; ++i) {
        ClipMeta m;
        m.index = i;
        m.scene = random_scene(rng, config.height, config.width);
        m.class_id = class_id_of(m.scene);
        m.jittered = i >= config.count - n_jitter;  // stratified split
        Tensor clip = gen_coherent(m.scene, config.frames, config.height, config.width);
        if (m.jittered) {
            m.jitter = {config.jitter_mode, config.jitter_amplitude, rng.next_u64()};
            clip = inject_jitter(clip, m.scene, m.jitter);
        }
        char name[32];
        std::snprintf(name, sizeof(name), "clip_%04lld.tdt", static_cast<long long>(i));
        m.file = name;
        write_tdt((fs::path(out_dir) / m.file).string(), clip);

        nlohmann::ordered_json entry;
        entry["index"] = m.index;
        entry["file"] = m.file;
        entry["class_id"] = m.class_id;
        entry["jittered"] = m.jittered;
        entry["scene"] = m.scene.to_json();
        if (m.jittered) entry["jitter"] = m.jitter.to_json();
        manifest["clips"].push_back(entry);
        meta.push_back(std::move(m));
    }

    std::ofstream f(fs::path(out_dir) / "manifest.json");
    if (!f) throw IoError("corpus: cannot write manifest in " + out_dir);
    f << manifest.dump(2) << "\n";
    return meta;
}

Corpus load_corpus(const std::string& dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("corpus: missing manifest.json in " + dir);
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const std::exception& e) {
        throw IoError("corpus: invalid manifest in " + dir + ": " + e.what());
    }
    Corpus corpus;
    for (const auto& entry : manifest.at("clips")) {
        ClipMeta m;
        m.index = entry.at("index").get<int64_t>();
        m.file = entry.at("file").get<std::string>();
        m.class_id = entry.at("class_id").get<int64_t>();
        m.jittered = entry.at("jittered").get<bool>();
        m.scene = SceneSpec::from_json(entry.at("scene"));
        if (entry.contains("jitter")) m.jitter = JitterSpec::from_json(entry.at("jitter"));
        corpus.clips.push_back(read_tdt((fs::path(dir) / m.file).string()));
        corpus.meta.push_back(std::move(m));
    }
    return corpus;
}

}  // namespace tedio
