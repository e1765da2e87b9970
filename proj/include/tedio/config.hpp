#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "tedio/diffusion.hpp"
#include "tedio/dit.hpp"
#include "tedio/synth.hpp"
#include "tedio/tedio.hpp"

namespace tedio {

/// Everything a run needs, loadable from one JSON file; CLI flags override
/// individual fields. Unknown keys are rejected. An effective-config
/// snapshot is written into every output directory.
struct RunConfig {
    ModelConfig model;
    ScheduleConfig schedule;
    TrainConfig train;
    TedioConfig tedio;
    CorpusConfig data;
    uint64_t seed = 0;
    int64_t jobs = 1;

    nlohmann::ordered_json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;
};

}  // namespace tedio
