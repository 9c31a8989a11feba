#include "magic/grammar.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace magic {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& w) {
  return std::find(v.begin(), v.end(), w) != v.end();
}

std::vector<std::string> string_list(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field, "expected a list of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_string() || j[i].get<std::string>().empty())
      throw ConfigError(field + "[" + std::to_string(i) + "]", "expected a non-empty string");
    const std::string w = j[i].get<std::string>();
    if (w.find_first_of(" \t\n") != std::string::npos)
      throw ConfigError(field + "[" + std::to_string(i) + "]", "words must not contain whitespace");
    out.push_back(w);
  }
  return out;
}

bool all_alpha(const std::string& w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)); });
}

}  // namespace

bool TextKind::matches(const std::string& token) const {
  if (!pattern.empty()) {
    if (token.size() != pattern.size()) return false;
    for (std::size_t i = 0; i < token.size(); ++i) {
      if (pattern[i] == '#') {
        if (!std::isdigit(static_cast<unsigned char>(token[i]))) return false;
      } else if (pattern[i] != token[i]) {
        return false;
      }
    }
    return true;
  }
  return contains(values, token) || all_alpha(token);
}

std::string TextKind::sample(Rng& rng) const {
  if (!values.empty()) return values[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(values.size()) - 1))];
  std::string out = pattern;
  for (char& c : out)
    if (c == '#') c = static_cast<char>('0' + rng.uniform_int(0, 9));
  return out;
}

bool Grammar::is_noun(const std::string& w) const { return contains(nouns, w); }
bool Grammar::is_adjective(const std::string& w) const { return contains(adjectives, w); }
bool Grammar::is_relation(const std::string& w) const { return contains(relations, w); }

bool Grammar::is_literal(const std::string& w) const {
  for (const auto& t : templates)
    for (const auto& it : t.items)
      if (it.kind == SlotKind::kLiteral && it.literal == w) return true;
  return false;
}

bool Grammar::is_grammar_word(const std::string& w) const {
  return is_noun(w) || is_adjective(w) || is_relation(w) || is_literal(w);
}

int Grammar::text_kind_index(const std::string& name) const {
  for (std::size_t i = 0; i < text_kinds.size(); ++i)
    if (text_kinds[i].name == name) return static_cast<int>(i);
  return -1;
}

Grammar Grammar::from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where, "expected an object");
  static const std::set<std::string> known = {"nouns",      "noun_weights", "adjectives", "relations",
                                              "text_kinds", "templates",    "max_length"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(where + "." + key, "unknown key");

  Grammar g;
  if (!j.contains("nouns")) throw ConfigError(where + ".nouns", "missing");
  if (!j.contains("templates")) throw ConfigError(where + ".templates", "missing");
  g.nouns = string_list(j["nouns"], where + ".nouns");
  if (j.contains("adjectives")) g.adjectives = string_list(j["adjectives"], where + ".adjectives");
  if (j.contains("relations")) g.relations = string_list(j["relations"], where + ".relations");
  if (j.contains("noun_weights")) {
    const auto& w = j["noun_weights"];
    if (!w.is_array() || w.size() != g.nouns.size())
      throw ConfigError(where + ".noun_weights", "must list one weight per noun");
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!w[i].is_number() || w[i].get<double>() < 0.0)
        throw ConfigError(where + ".noun_weights[" + std::to_string(i) + "]", "weights must be non-negative numbers");
      g.noun_weights.push_back(w[i].get<double>());
    }
  }
  if (j.contains("max_length")) {
    if (!j["max_length"].is_number_integer() || j["max_length"].get<int>() < 1)
      throw ConfigError(where + ".max_length", "must be a positive integer");
    g.max_length = j["max_length"].get<int>();
  }
  if (j.contains("text_kinds")) {
    const auto& tk = j["text_kinds"];
    if (!tk.is_object()) throw ConfigError(where + ".text_kinds", "expected an object of kinds");
    for (const auto& [name, spec] : tk.items()) {
      const std::string f = where + ".text_kinds." + name;
      TextKind kind;
      kind.name = name;
      if (!spec.is_object()) throw ConfigError(f, "expected an object");
      for (const auto& [key, _] : spec.items())
        if (key != "values" && key != "pattern") throw ConfigError(f + "." + key, "unknown key");
      if (spec.contains("values")) kind.values = string_list(spec["values"], f + ".values");
      if (spec.contains("pattern")) {
        if (!spec["pattern"].is_string() || spec["pattern"].get<std::string>().empty())
          throw ConfigError(f + ".pattern", "expected a non-empty string");
        kind.pattern = spec["pattern"].get<std::string>();
      }
      if (kind.values.empty() == kind.pattern.empty())
        throw ConfigError(f, "exactly one of 'values' or 'pattern' is required");
      g.text_kinds.push_back(std::move(kind));
    }
  }

  const auto& tj = j["templates"];
  if (!tj.is_array() || tj.empty()) throw ConfigError(where + ".templates", "grammar has no terminal production");
  for (std::size_t ti = 0; ti < tj.size(); ++ti) {
    const std::string f = where + ".templates[" + std::to_string(ti) + "]";
    if (!tj[ti].is_string()) throw ConfigError(f, "expected a string");
    Template t;
    t.source = tj[ti].get<std::string>();
    for (const std::string& tok : split_ws(t.source)) {
      TemplateItem it;
      if (tok == "<noun>") {
        it.kind = SlotKind::kNoun;
      } else if (tok == "<adj>") {
        it.kind = SlotKind::kAdjective;
      } else if (tok == "<rel>") {
        it.kind = SlotKind::kRelation;
      } else if (tok.rfind("<text:", 0) == 0 && tok.back() == '>') {
        it.kind = SlotKind::kText;
        it.text_kind = g.text_kind_index(tok.substr(6, tok.size() - 7));
        if (it.text_kind < 0) throw ConfigError(f, "unknown text kind in '" + tok + "'");
      } else if (tok.front() == '<' && tok.back() == '>') {
        throw ConfigError(f, "unknown slot '" + tok + "'");
      } else {
        it.kind = SlotKind::kLiteral;
        it.literal = tok;
      }
      t.items.push_back(std::move(it));
    }
    if (t.items.empty()) throw ConfigError(f, "empty template");

    // Structural checks so that every template parses unambiguously.
    int nouns_seen = 0;
    int pending_adj = 0;
    bool pending_rel = false;
    for (const auto& it : t.items) {
      switch (it.kind) {
        case SlotKind::kNoun:
          if (g.nouns.empty()) throw ConfigError(f, "uses <noun> but no nouns are defined");
          ++nouns_seen;
          pending_adj = 0;
          pending_rel = false;
          break;
        case SlotKind::kAdjective:
          if (g.adjectives.empty()) throw ConfigError(f, "uses <adj> but no adjectives are defined");
          ++pending_adj;
          break;
        case SlotKind::kRelation:
          if (g.relations.empty()) throw ConfigError(f, "uses <rel> but no relations are defined");
          if (nouns_seen == 0 || pending_adj) throw ConfigError(f, "<rel> must follow a noun");
          pending_rel = true;
          break;
        case SlotKind::kText:
          if (nouns_seen == 0 || pending_adj) throw ConfigError(f, "<text> must follow a noun");
          break;
        case SlotKind::kLiteral:
          if (g.is_noun(it.literal) || g.is_adjective(it.literal) || g.is_relation(it.literal))
            throw ConfigError(f, "literal '" + it.literal + "' collides with a word class");
          break;
      }
    }
    if (pending_adj) throw ConfigError(f, "<adj> must be followed by a noun");
    if (pending_rel) throw ConfigError(f, "<rel> must be followed by a noun");
    g.templates.push_back(std::move(t));
  }
  return g;
}

nlohmann::json Grammar::to_json() const {
  nlohmann::json j;
  j["nouns"] = nouns;
  if (!noun_weights.empty()) j["noun_weights"] = noun_weights;
  j["adjectives"] = adjectives;
  j["relations"] = relations;
  j["text_kinds"] = nlohmann::json::object();
  for (const auto& k : text_kinds) {
    if (k.pattern.empty())
      j["text_kinds"][k.name] = {{"values", k.values}};
    else
      j["text_kinds"][k.name] = {{"pattern", k.pattern}};
  }
  j["templates"] = nlohmann::json::array();
  for (const auto& t : templates) j["templates"].push_back(t.source);
  j["max_length"] = max_length;
  return j;
}

namespace {

std::string pick(const std::vector<std::string>& v, Rng& rng) {
  return v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(v.size()) - 1))];
}

std::string pick_noun(const Grammar& g, Rng& rng) {
  if (g.noun_weights.empty()) return pick(g.nouns, rng);
  return g.nouns[rng.categorical(g.noun_weights)];
}

}  // namespace

SentenceCorpus generate_sentence_corpus(std::uint64_t seed, const Grammar& grammar, std::size_t count) {
  if (grammar.templates.empty()) throw ConfigError("grammar.templates", "grammar has no terminal production");
  Rng rng(seed);
  SentenceCorpus corpus;
  corpus.grammar_seed = seed;
  corpus.sentences.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const int ti = rng.uniform_int(0, static_cast<int>(grammar.templates.size()) - 1);
    Sentence s;
    s.template_index = ti;
    for (const auto& it : grammar.templates[static_cast<std::size_t>(ti)].items) {
      std::uint8_t copy = 0;
      std::string w;
      switch (it.kind) {
        case SlotKind::kLiteral: w = it.literal; break;
        case SlotKind::kNoun: w = pick_noun(grammar, rng); break;
        case SlotKind::kAdjective: w = pick(grammar.adjectives, rng); break;
        case SlotKind::kRelation: w = pick(grammar.relations, rng); break;
        case SlotKind::kText:
          w = grammar.text_kinds[static_cast<std::size_t>(it.text_kind)].sample(rng);
          copy = 1;
          break;
      }
      s.words.push_back(std::move(w));
      s.copy.push_back(copy);
    }
    if (s.words.size() > static_cast<std::size_t>(grammar.max_length)) {
      s.words.resize(static_cast<std::size_t>(grammar.max_length));
      s.copy.resize(static_cast<std::size_t>(grammar.max_length));
    }
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

namespace {

bool item_matches(const TemplateItem& it, const std::string& w, const Grammar& g) {
  switch (it.kind) {
    case SlotKind::kLiteral: return it.literal == w;
    case SlotKind::kNoun: return g.is_noun(w);
    case SlotKind::kAdjective: return g.is_adjective(w);
    case SlotKind::kRelation: return g.is_relation(w);
    case SlotKind::kText:
      return !g.is_grammar_word(w) && g.text_kinds[static_cast<std::size_t>(it.text_kind)].matches(w);
  }
  return false;
}

// Applies the attachment rules to a matched template.
SceneGraph build_graph(const std::vector<std::string>& words, const Template& t, int template_index) {
  SceneGraph g;
  g.template_index = template_index;
  std::vector<std::string> pending_adj;
  int open_relation_owner = -1;
  std::size_t open_relation_slot = 0;
  for (std::size_t i = 0; i < t.items.size(); ++i) {
    const auto& it = t.items[i];
    const std::string& w = words[i];
    switch (it.kind) {
      case SlotKind::kLiteral: break;
      case SlotKind::kNoun: {
        ConceptObject obj;
        obj.noun = w;
        for (auto& a : pending_adj) obj.attachments.push_back({NodeKind::kAttribute, a, -1});
        pending_adj.clear();
        g.objects.push_back(std::move(obj));
        if (open_relation_owner >= 0) {
          g.objects[static_cast<std::size_t>(open_relation_owner)].attachments[open_relation_slot].target =
              static_cast<int>(g.objects.size()) - 1;
          open_relation_owner = -1;
        }
        break;
      }
      case SlotKind::kAdjective: pending_adj.push_back(w); break;
      case SlotKind::kText: g.objects.back().attachments.push_back({NodeKind::kText, w, -1}); break;
      case SlotKind::kRelation:
        g.objects.back().attachments.push_back({NodeKind::kRelationship, w, -1});
        open_relation_owner = static_cast<int>(g.objects.size()) - 1;
        open_relation_slot = g.objects.back().attachments.size() - 1;
        break;
    }
  }
  return g;
}

}  // namespace

SceneGraph parse_scene_graph(const std::vector<std::string>& words, const Grammar& grammar) {
  std::size_t best_prefix = 0;
  for (std::size_t ti = 0; ti < grammar.templates.size(); ++ti) {
    const Template& t = grammar.templates[ti];
    std::size_t k = 0;
    while (k < t.items.size() && k < words.size() && item_matches(t.items[k], words[k], grammar)) ++k;
    if (k == t.items.size() && k == words.size()) return build_graph(words, t, static_cast<int>(ti));
    best_prefix = std::max(best_prefix, k);
  }
  if (best_prefix < words.size()) throw ParseError(best_prefix + 1, words[best_prefix]);
  throw ParseError(words.size() + 1, "<end>");
}

std::vector<std::string> verbalize(const SceneGraph& graph, const Grammar& grammar) {
  if (graph.template_index < 0 || static_cast<std::size_t>(graph.template_index) >= grammar.templates.size())
    throw std::invalid_argument("verbalize: graph has no valid template");
  const Template& t = grammar.templates[static_cast<std::size_t>(graph.template_index)];
  std::vector<std::size_t> used_adj(graph.objects.size(), 0), used_text(graph.objects.size(), 0),
      used_rel(graph.objects.size(), 0);
  auto next_of = [&](std::size_t obj, NodeKind kind, std::vector<std::size_t>& used) -> const std::string& {
    if (obj >= graph.objects.size()) throw std::invalid_argument("verbalize: graph does not fit its template");
    const auto& att = graph.objects[obj].attachments;
    std::size_t seen = 0;
    for (const auto& a : att) {
      if (a.kind != kind) continue;
      if (seen == used[obj]) {
        ++used[obj];
        return a.word;
      }
      ++seen;
    }
    throw std::invalid_argument("verbalize: graph does not fit its template");
  };
  std::vector<std::string> out;
  std::size_t nouns = 0;
  for (const auto& it : t.items) {
    switch (it.kind) {
      case SlotKind::kLiteral: out.push_back(it.literal); break;
      case SlotKind::kNoun:
        if (nouns >= graph.objects.size()) throw std::invalid_argument("verbalize: graph does not fit its template");
        out.push_back(graph.objects[nouns++].noun);
        break;
      case SlotKind::kAdjective: out.push_back(next_of(nouns, NodeKind::kAttribute, used_adj)); break;
      case SlotKind::kText: out.push_back(next_of(nouns - 1, NodeKind::kText, used_text)); break;
      case SlotKind::kRelation: out.push_back(next_of(nouns - 1, NodeKind::kRelationship, used_rel)); break;
    }
  }
  return out;
}

namespace {

struct NounShape {
  int adjectives = 0;
  std::vector<int> text_kinds;
  bool operator==(const NounShape&) const = default;
};

struct TemplateShape {
  std::vector<NounShape> nouns;
  int relations = 0;
  bool relation_from_first = true;
  bool operator==(const TemplateShape&) const = default;
};

TemplateShape shape_of(const Template& t) {
  TemplateShape s;
  int pending_adj = 0;
  for (const auto& it : t.items) {
    switch (it.kind) {
      case SlotKind::kLiteral: break;
      case SlotKind::kNoun:
        s.nouns.push_back({pending_adj, {}});
        pending_adj = 0;
        break;
      case SlotKind::kAdjective: ++pending_adj; break;
      case SlotKind::kText: s.nouns.back().text_kinds.push_back(it.text_kind); break;
      case SlotKind::kRelation:
        ++s.relations;
        if (s.nouns.size() != 1) s.relation_from_first = false;
        break;
    }
  }
  return s;
}

NounShape shape_of(const EntityFact& e) {
  NounShape s;
  s.adjectives = e.adjective ? 1 : 0;
  if (e.text) s.text_kinds.push_back(e.text_kind);
  return s;
}

}  // namespace

std::optional<Sentence> realize_fact(const CaptionFact& fact, const Grammar& grammar, Rng& rng) {
  TemplateShape want;
  want.nouns.push_back(shape_of(fact.subject));
  if (fact.relation && fact.object) {
    want.relations = 1;
    want.nouns.push_back(shape_of(*fact.object));
  }
  std::vector<std::size_t> matches;
  for (std::size_t i = 0; i < grammar.templates.size(); ++i)
    if (shape_of(grammar.templates[i]) == want) matches.push_back(i);
  if (matches.empty()) return std::nullopt;
  const std::size_t ti = matches[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(matches.size()) - 1))];

  const EntityFact* entities[2] = {&fact.subject, fact.object ? &*fact.object : nullptr};
  Sentence s;
  s.template_index = static_cast<int>(ti);
  std::size_t nouns = 0;
  for (const auto& it : grammar.templates[ti].items) {
    std::uint8_t copy = 0;
    std::string w;
    switch (it.kind) {
      case SlotKind::kLiteral: w = it.literal; break;
      case SlotKind::kNoun: w = entities[nouns++]->noun; break;
      case SlotKind::kAdjective: w = *entities[nouns]->adjective; break;
      case SlotKind::kText:
        w = *entities[nouns - 1]->text;
        copy = 1;
        break;
      case SlotKind::kRelation: w = *fact.relation; break;
    }
    s.words.push_back(std::move(w));
    s.copy.push_back(copy);
  }
  if (s.words.size() > static_cast<std::size_t>(grammar.max_length)) {
    s.words.resize(static_cast<std::size_t>(grammar.max_length));
    s.copy.resize(static_cast<std::size_t>(grammar.max_length));
  }
  return s;
}

std::optional<CaptionFact> sample_fact(const Grammar& grammar, std::size_t index, Rng& rng) {
  const TemplateShape shape = shape_of(grammar.templates.at(index));
  if (shape.nouns.empty() || shape.nouns.size() > 2 || shape.relations > 1) return std::nullopt;
  if ((shape.relations == 1) != (shape.nouns.size() == 2) || !shape.relation_from_first) return std::nullopt;
  auto entity = [&](const NounShape& ns) -> std::optional<EntityFact> {
    if (ns.adjectives > 1 || ns.text_kinds.size() > 1) return std::nullopt;
    EntityFact e;
    e.noun = pick_noun(grammar, rng);
    if (ns.adjectives) e.adjective = pick(grammar.adjectives, rng);
    if (!ns.text_kinds.empty()) {
      e.text_kind = ns.text_kinds[0];
      e.text = grammar.text_kinds[static_cast<std::size_t>(e.text_kind)].sample(rng);
    }
    return e;
  };
  CaptionFact fact;
  auto subject = entity(shape.nouns[0]);
  if (!subject) return std::nullopt;
  fact.subject = *subject;
  if (shape.relations) {
    auto object = entity(shape.nouns[1]);
    if (!object) return std::nullopt;
    fact.relation = pick(grammar.relations, rng);
    fact.object = *object;
  }
  return fact;
}

std::vector<CaptionFact> degrade_fact(const CaptionFact& fact) {
  std::vector<CaptionFact> out;
  CaptionFact f = fact;
  auto emit = [&] { out.push_back(f); };
  if (f.object && f.object->text) {
    f.object->text.reset();
    f.object->text_kind = -1;
    emit();
  }
  if (f.object && f.object->adjective) {
    f.object->adjective.reset();
    emit();
  }
  if (f.relation) {
    f.relation.reset();
    f.object.reset();
    emit();
  }
  if (f.subject.adjective) {
    f.subject.adjective.reset();
    emit();
  }
  if (f.subject.text) {
    f.subject.text.reset();
    f.subject.text_kind = -1;
    emit();
  }
  return out;
}

}  // namespace magic
