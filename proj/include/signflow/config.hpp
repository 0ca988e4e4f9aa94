#pragma once

#include <string>

#include "signflow/backtrans.hpp"
#include "signflow/data.hpp"
#include "signflow/ecl.hpp"
#include "signflow/evalrun.hpp"
#include "signflow/render.hpp"

namespace signflow {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Every tunable of the pipeline in one place. The config file is key=value
// lines ('#' comments allowed); command-line flags override file values.
struct AppConfig {
    std::uint64_t seed = 1;
    ModelConfig model;
    CorpusConfig corpus;
    TrainConfig train;
    BackTransTrainConfig bt_train;
    std::size_t bt_max_tokens = 8;
    GenerationConfig gen;
    RenderConfig render;

    // keeps the shared dimensions (joints, coords, vocab, feature dims)
    // consistent across the sub-configs and derives seeds
    void finalize();
};

// Applies one key=value setting; unknown keys raise ConfigError naming the key.
void apply_config_entry(AppConfig& cfg, const std::string& key, const std::string& value);

AppConfig load_config_file(const std::string& path);

} // namespace signflow
