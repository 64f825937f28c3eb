#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "wv/model.hpp"
#include "wv/trainer.hpp"

namespace wv {

struct RunConfig {
  ArchConfig arch;
  TrainConfig train;
};

/// Keys accepted in config files, in documentation order.
const std::vector<std::string>& config_keys();

/// Sets one key; unknown keys and unparsable values are ConfigErrors.
void apply_config_key(RunConfig& cfg, std::string_view key, std::string_view value);

/// key = value lines; '#' starts a comment, blank lines are ignored.
/// Keys found in the file are appended to `keys_seen` when given.
RunConfig read_config(const std::filesystem::path& path, RunConfig base = {},
                      std::vector<std::string>* keys_seen = nullptr);
std::string config_to_text(const RunConfig& cfg);

}  // namespace wv
