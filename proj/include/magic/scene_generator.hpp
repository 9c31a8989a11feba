#pragma once

// Synthetic text-rich scenes. Each scene is drawn from a latent set of facts
// (objects with adjectives, OCR strings and relations); object and token
// features are noisy embeddings of those facts in the shared word space.
// Reference captions verbalise the facts and are returned separately.

#include "magic/data_model.hpp"
#include "magic/grammar.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace magic {

inline constexpr int kMaxObjectsCap = 100;
inline constexpr int kMaxTokensCap = 50;

struct SceneConfig {
  int min_objects = 3;
  int max_objects = 8;
  /// Objects that carry a described fact; the rest are distractors.
  int min_described = 1;
  int max_described = 2;
  int min_tokens = 0;
  int max_tokens = 8;
  int raw_dim = 300;
  std::uint64_t word_seed = 0;
  double object_noise = 0.1;
  double token_noise = 0.05;
  int references_per_scene = 5;
  /// Nouns outside the caption grammar used for distractor objects.
  std::vector<std::string> distractor_nouns = {"shelf", "wall", "floor", "window", "lamp", "plant"};

  /// Throws ConfigError on an empty range or a cap violation.
  void validate(const std::string& where = "scenes") const;
};

struct GeneratedScene {
  MultimodalScene scene;
  std::vector<std::string> references;
};

GeneratedScene generate_scene(std::uint64_t seed, const SceneConfig& cfg, const Grammar& grammar);

/// Scenes for seeds substream_seed(root, "scene:<i>"), i in [0, count).
/// Parallel over scenes when `parallel` is set; output does not depend on it.
std::vector<GeneratedScene> generate_scenes(std::uint64_t root, std::size_t count, const SceneConfig& cfg,
                                            const Grammar& grammar, const std::string& id_prefix,
                                            bool parallel = true);

}  // namespace magic
