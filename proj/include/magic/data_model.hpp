#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace magic {

/// Normalised box: x, y (top-left corner), width, height, all in [0, 1].
using Box = std::array<double, 4>;

bool box_valid(const Box& b);
double box_area(const Box& b);
std::array<double, 2> box_center(const Box& b);

struct ObjectFeature {
  Eigen::VectorXd feature;
  Box box{};
  /// Synthetic ground-truth concept; never consumed by any model.
  int label_id = 0;

  bool operator==(const ObjectFeature& o) const {
    return feature.size() == o.feature.size() && feature == o.feature && box == o.box && label_id == o.label_id;
  }
};

struct TextToken {
  Eigen::VectorXd feature;
  std::string surface;
  Box box{};

  bool operator==(const TextToken& o) const {
    return feature.size() == o.feature.size() && feature == o.feature && surface == o.surface && box == o.box;
  }
};

struct MultimodalScene {
  std::string scene_id;
  std::vector<ObjectFeature> objects;
  std::vector<TextToken> tokens;

  /// Throws std::invalid_argument when an invariant is broken.
  void validate(std::size_t max_objects, std::size_t max_tokens) const;
  bool operator==(const MultimodalScene&) const = default;
};

/// Scenes used for unpaired training. This type has no caption field: the
/// training side of the pipeline cannot reach references through it.
struct SceneSet {
  std::vector<MultimodalScene> scenes;
  bool operator==(const SceneSet&) const = default;
};

/// Held-out scenes together with their reference captions. Only the
/// evaluation interface consumes this type.
struct EvaluationSet {
  std::vector<MultimodalScene> scenes;
  std::vector<std::vector<std::string>> references;  // parallel to scenes
  bool operator==(const EvaluationSet&) const = default;
};

struct Sentence {
  std::vector<std::string> words;
  /// 1 where the word fills a copy slot (an OCR surface, never in the vocabulary).
  std::vector<std::uint8_t> copy;
  int template_index = -1;

  std::string text() const;
  bool operator==(const Sentence&) const = default;
};

struct SentenceCorpus {
  std::vector<Sentence> sentences;
  std::uint64_t grammar_seed = 0;
  bool operator==(const SentenceCorpus&) const = default;
};

enum class NodeKind : std::uint8_t { kRelationship = 0, kAttribute = 1, kText = 2, kConceptObject = 3 };

struct GraphNode {
  NodeKind kind = NodeKind::kRelationship;
  Eigen::VectorXd embedding;
  double weight = 1.0;
};

struct MultimodalRelationalGraph {
  int central_index = -1;
  Eigen::VectorXd central;
  std::vector<GraphNode> nodes;
  /// Scene token index behind each text node, in node order.
  std::vector<int> text_sources;

  std::size_t count(NodeKind kind) const;
};

/// Deterministic pseudo-random vector for a word: the fixed "pretrained" word
/// space shared by scene features and sentence-side nodes. Entries are
/// N(0, 1/dim) so vectors have roughly unit norm.
Eigen::VectorXd word_vector(std::string_view word, int dim, std::uint64_t seed);

/// Character-shape key of a surface: digits -> '9', letter runs -> 'a'.
std::string shape_key(std::string_view surface);

/// Embedding of an OCR surface: its word vector mixed with a vector for its
/// shape class, so that e.g. all prices share a component.
Eigen::VectorXd surface_embedding(std::string_view surface, int dim, std::uint64_t seed);

// Persistence ---------------------------------------------------------------

void save_scene_set(const std::filesystem::path& path, const SceneSet& set);
SceneSet load_scene_set(const std::filesystem::path& path);
void save_evaluation_set(const std::filesystem::path& path, const EvaluationSet& set);
EvaluationSet load_evaluation_set(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, const SentenceCorpus& corpus);
SentenceCorpus load_corpus(const std::filesystem::path& path);

/// Line-delimited JSON exports for inspection (one record per line).
void export_scenes_jsonl(const std::filesystem::path& path, const std::vector<MultimodalScene>& scenes,
                         const std::vector<std::vector<std::string>>* references = nullptr);
void export_corpus_jsonl(const std::filesystem::path& path, const SentenceCorpus& corpus);

}  // namespace magic
