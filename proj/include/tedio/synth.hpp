#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tedio/tensor.hpp"

namespace tedio {

enum class ShapeKind { square, disc };

/// A moving-shape clip: linear trajectory with reflective clamping at the
/// frame borders, rendered with bilinear sub-cell interpolation.
struct SceneSpec {
    ShapeKind kind = ShapeKind::square;
    double size = 4.0;        // cells
    double start_y = 0.0, start_x = 0.0;
    double vel_y = 0.0, vel_x = 0.0;  // cells/frame, fractional ok
    float intensity = 0.9f;
    float background = -0.6f;

    nlohmann::ordered_json to_json() const;
    static SceneSpec from_json(const nlohmann::json& j);
};

/// Discrete class id: shape kind times 8 direction buckets.
int64_t class_id_of(const SceneSpec& spec);
constexpr int64_t kClassVocab = 16;

SceneSpec random_scene(Rng& rng, int64_t height, int64_t width);

/// Deterministic render of the trajectory; [F, 1, H, W], values in [-1, 1].
Tensor gen_coherent(const SceneSpec& spec, int64_t frames, int64_t height, int64_t width);

enum class JitterMode { position_noise, frame_shuffle, teleport };

const char* jitter_mode_name(JitterMode m);
JitterMode jitter_mode_from_name(const std::string& name);

struct JitterSpec {
    JitterMode mode = JitterMode::position_noise;
    double amplitude = 0.0;  // cells, window size, or event count
    uint64_t seed = 0;

    nlohmann::ordered_json to_json() const;
    static JitterSpec from_json(const nlohmann::json& j);
};

/// Controlled incoherence. amplitude 0 returns the input bit-exactly.
/// position_noise and teleport re-render the scene's trajectory.
Tensor inject_jitter(const Tensor& video, const SceneSpec& scene, const JitterSpec& jitter);

struct CorpusConfig {
    int64_t count = 128;
    double jitter_rate = 0.0;      // stratified: round(count*rate) clips jittered
    JitterMode jitter_mode = JitterMode::position_noise;
    double jitter_amplitude = 2.0;
    int64_t frames = 8, height = 16, width = 16;
    uint64_t seed = 0;

    nlohmann::ordered_json to_json() const;
    static CorpusConfig from_json(const nlohmann::json& j);
};

struct ClipMeta {
    int64_t index = 0;
    std::string file;
    int64_t class_id = 0;
    bool jittered = false;
    SceneSpec scene;
    JitterSpec jitter;
};

/// Writes clip_%04d.tdt files plus manifest.json; returns the metadata.
std::vector<ClipMeta> gen_corpus(const CorpusConfig& config, const std::string& out_dir);

struct Corpus {
    std::vector<Tensor> clips;
    std::vector<ClipMeta> meta;
};

Corpus load_corpus(const std::string& dir);

}  // namespace tedio
