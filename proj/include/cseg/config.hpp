#pragma once

#include "cseg/pipeline.hpp"
#include "cseg/synth.hpp"
#include "cseg/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace cseg {

enum class Scenario { Default, Truncation };

// Everything a command needs. Loaded from flat "key = value" text; keys are
// listed, with their defaults, by write_config (and in the README).
struct PipelineConfig {
    // dataset
    std::uint64_t seed = 1;
    int frames = 40;
    Scenario scenario = Scenario::Default;
    // model and pipeline
    std::uint64_t model_seed = 7;
    ModelConfig model;
    // training
    TrainConfig train;
    // paths
    std::filesystem::path data = "data";
    std::filesystem::path out = "out";
    std::filesystem::path checkpoint = "model.ckpt";
    int threads = 1;

    SceneConfig scene() const;
};

// Throws ConfigError naming the line and key on unknown keys, malformed
// values and failed validation.
PipelineConfig parse_config(std::istream& in, const std::string& origin = "config");
PipelineConfig load_config(const std::filesystem::path& path);
void validate(const PipelineConfig& cfg);

// Writes every key with its current value; parse_config of the output
// reproduces cfg.
void write_config(std::ostream& out, const PipelineConfig& cfg);

}  // namespace cseg
