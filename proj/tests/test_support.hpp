#pragma once

#include "magic/grammar.hpp"
#include "magic/scene_generator.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace magic::test {

inline nlohmann::json grammar_json() {
  return nlohmann::json::parse(R"({
    "nouns": ["bottle", "book", "sign", "box", "can", "desk"],
    "noun_weights": [5, 4, 3, 2, 1.5, 1],
    "adjectives": ["red", "blue", "large", "old"],
    "relations": ["on", "near"],
    "text_kinds": {
      "price": {"pattern": "#.##"},
      "brand": {"values": ["acme", "zenith", "orbit", "monster"]}
    },
    "templates": [
      "a <noun>",
      "a <adj> <noun>",
      "a <noun> of <text:brand>",
      "a <noun> priced at <text:price>",
      "a <noun> <rel> a <noun>",
      "a <noun> of <text:brand> <rel> a <noun>",
      "a <adj> <noun> priced at <text:price>"
    ]
  })");
}

inline Grammar grammar() { return Grammar::from_json(grammar_json()); }

inline SceneConfig scene_config(int raw_dim = 16) {
  SceneConfig c;
  c.raw_dim = raw_dim;
  c.word_seed = 99;
  return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("magic_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace magic::test
