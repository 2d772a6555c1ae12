#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scanet/data.hpp"
#include "scanet/model.hpp"
#include "scanet/train.hpp"

namespace scanet {

// One fully concrete run setup: a preset expanded into model, training, and
// generator settings, with individual keys overridden on top. Config files
// are flat "key = value" text ('#' comments); a "preset" line is applied
// first regardless of position, every other line in file order.
struct RunConfig {
    std::string preset = "toy";  // "toy" or "paper-scale"
    ModelConfig model;
    TrainConfig train;
    GeneratorParams gen;

    static RunConfig from_preset(const std::string& name);  // ConfigError

    // One "section.key" override, e.g. "train.max_epochs = 20". Unknown keys
    // and malformed values throw ConfigError naming the key.
    void apply(const std::string& key, const std::string& value);

    static RunConfig from_text(const std::string& text,
                               const std::string& source_name);
    static RunConfig from_file(const std::filesystem::path& path);

    // Every key, concrete; from_text(to_text()) reproduces the config.
    std::string to_text() const;

    void validate() const;  // model + train
};

// Precedence: preset (flag wins over the file's preset line), then the
// file's other keys, then --set overrides in order.
RunConfig resolve_run_config(const std::string& config_file,
                             const std::string& preset_flag,
                             const std::vector<std::string>& set_overrides);

}  // namespace scanet
