#pragma once

// Run configuration: one JSON document with a section per pipeline stage.

#include "magic/grammar.hpp"
#include "magic/language_discriminator.hpp"
#include "magic/scene_generator.hpp"
#include "magic/sentence_autoencoder.hpp"
#include "magic/train_magic.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace magic {

struct DataConfig {
  int train_scenes = 500;
  int eval_scenes = 100;
  int sentences = 1000;
  SceneConfig scenes;
};

struct EvalConfig {
  std::string rule = "top_score";
  bool parallel = true;
};

struct AblateConfig {
  std::vector<int> N_k = {1, 2, 3, 4, 5};
  std::vector<std::string> rules = {"center", "large", "random", "top_score"};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path work_dir = "work";
  Grammar grammar;
  DataConfig data;
  ModelConfig model;
  PretrainOptions autoencoder;
  LanguagePretrainOptions language;
  TrainOptions train;
  EvalConfig eval;
  AblateConfig ablate;

  /// Canonical form of the fully resolved configuration.
  nlohmann::json to_json() const;
};

/// Applies `key=value` with a dotted key; the value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Validates a document; unknown keys and bad values raise ConfigError with
/// the dotted path. Stage seeds are derived from the root seed.
RunConfig parse_config(const nlohmann::json& doc);

/// Reads the file, applies overrides in order, then the MAGIC_SEED value if
/// given, and validates.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      const std::optional<std::string>& env_seed);

}  // namespace magic
