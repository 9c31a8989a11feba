#pragma once

// Controlled caption grammar: template-based sentence generation, the
// grammar-direct scene-graph parser and its inverse (verbalisation).

#include "magic/data_model.hpp"
#include "magic/errors.hpp"
#include "magic/rng.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace magic {

enum class SlotKind { kLiteral, kNoun, kAdjective, kRelation, kText };

struct TemplateItem {
  SlotKind kind = SlotKind::kLiteral;
  std::string literal;  // kLiteral
  int text_kind = -1;   // kText
};

struct Template {
  std::string source;
  std::vector<TemplateItem> items;
};

/// A family of OCR-like surfaces: either an explicit list or a pattern where
/// '#' stands for a digit.
struct TextKind {
  std::string name;
  std::vector<std::string> values;
  std::string pattern;

  bool matches(const std::string& token) const;
  std::string sample(Rng& rng) const;
};

struct Grammar {
  std::vector<std::string> nouns;
  std::vector<double> noun_weights;  // empty = uniform
  std::vector<std::string> adjectives;
  std::vector<std::string> relations;
  std::vector<TextKind> text_kinds;
  std::vector<Template> templates;
  int max_length = 20;

  /// Parses and validates a grammar section. Errors carry dotted field paths
  /// rooted at `where`.
  static Grammar from_json(const nlohmann::json& j, const std::string& where = "grammar");
  nlohmann::json to_json() const;

  bool is_noun(const std::string& w) const;
  bool is_adjective(const std::string& w) const;
  bool is_relation(const std::string& w) const;
  bool is_literal(const std::string& w) const;
  /// True for any word the grammar itself produces (everything except copy slots).
  bool is_grammar_word(const std::string& w) const;
  int text_kind_index(const std::string& name) const;
};

/// Samples `count` sentences, each from a uniformly chosen template; output
/// is truncated at grammar.max_length words.
SentenceCorpus generate_sentence_corpus(std::uint64_t seed, const Grammar& grammar, std::size_t count);

// Scene graphs --------------------------------------------------------------

struct SceneGraphNode {
  NodeKind kind = NodeKind::kAttribute;
  std::string word;
  /// Relationship nodes: index of the object the relation points to.
  int target = -1;
  bool operator==(const SceneGraphNode&) const = default;
};

struct ConceptObject {
  std::string noun;
  std::vector<SceneGraphNode> attachments;
  bool operator==(const ConceptObject&) const = default;
};

struct SceneGraph {
  int template_index = -1;
  std::vector<ConceptObject> objects;
  bool operator==(const SceneGraph&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  /// `position` is 1-based.
  ParseError(std::size_t position, std::string token)
      : std::runtime_error("parse error at token " + std::to_string(position) + " ('" + token + "')"),
        position_(position),
        token_(std::move(token)) {}
  std::size_t position() const { return position_; }
  const std::string& token() const { return token_; }

 private:
  std::size_t position_;
  std::string token_;
};

/// Parses a sentence of the controlled grammar. Adjectives attach to the
/// following noun; text and relation slots attach to the preceding noun, and a
/// relation points at the next noun. The first matching template wins.
SceneGraph parse_scene_graph(const std::vector<std::string>& words, const Grammar& grammar);

/// Inverse of parse_scene_graph for the graph's own template.
std::vector<std::string> verbalize(const SceneGraph& graph, const Grammar& grammar);

// Fact realisation (used to caption synthetic scenes) ------------------------

struct EntityFact {
  std::string noun;
  std::optional<std::string> adjective;
  std::optional<std::string> text;  // surface
  int text_kind = -1;
};

struct CaptionFact {
  EntityFact subject;
  std::optional<std::string> relation;
  std::optional<EntityFact> object;
};

/// Verbalises a fact with a randomly chosen template of exactly matching
/// shape; returns nullopt when no template fits.
std::optional<Sentence> realize_fact(const CaptionFact& fact, const Grammar& grammar, Rng& rng);

/// Draws a random fact whose shape is exactly that of template `index`;
/// nullopt when a fact cannot express the template (e.g. two adjectives on
/// one noun).
std::optional<CaptionFact> sample_fact(const Grammar& grammar, std::size_t index, Rng& rng);

/// Successively simpler variants of a fact: object text, object adjective,
/// relation, subject adjective and subject text are dropped in that order.
std::vector<CaptionFact> degrade_fact(const CaptionFact& fact);

}  // namespace magic
