#include "tedio/config.hpp"

#include <fstream>
#include <set>

namespace tedio {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    if (!j.is_object()) throw UsageError("config: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw UsageError("config: invalid key '" + it.key() + "' in " + where);
}

}  // namespace

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["model"] = model.to_json();
    j["schedule"] = schedule.to_json();
    j["train"] = train.to_json();
    j["tedio"] = tedio.to_json();
    j["data"] = data.to_json();
    j["seed"] = seed;
    j["jobs"] = jobs;
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    check_keys(j, {"model", "schedule", "train", "tedio", "data", "seed", "jobs"}, "config");
    RunConfig c;
    if (j.contains("model")) {
        check_keys(j["model"],
                   {"frames", "height", "width", "channels", "d_model", "blocks", "heads",
                    "head_dim", "cond_vocab", "cond_tokens", "learn_frame_pos"},
                   "model");
        c.model = ModelConfig::from_json(j["model"]);
    }
    if (j.contains("schedule")) {
        check_keys(j["schedule"], {"kind", "sample_steps", "train_positions"}, "schedule");
        c.schedule = ScheduleConfig::from_json(j["schedule"]);
    }
    if (j.contains("train")) {
        check_keys(j["train"], {"steps", "lr", "momentum", "clip", "batch", "jobs"}, "train");
        c.train = TrainConfig::from_json(j["train"]);
    }
    if (j.contains("tedio")) {
        check_keys(j["tedio"], {"block", "bands", "k", "eta", "iters", "ell", "explicit_steps"},
                   "tedio");
        c.tedio = TedioConfig::from_json(j["tedio"]);
    }
    if (j.contains("data")) {
        check_keys(j["data"],
                   {"count", "jitter_rate", "jitter_mode", "jitter_amplitude", "frames", "height",
                    "width", "seed"},
                   "data");
        c.data = CorpusConfig::from_json(j["data"]);
    }
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    if (c.jobs < 1) throw UsageError("config: jobs must be >= 1");
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: missing file: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw UsageError("config: invalid JSON in " + path + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("config: cannot write " + path);
    f << to_json().dump(2) << "\n";
}

}  // namespace tedio
