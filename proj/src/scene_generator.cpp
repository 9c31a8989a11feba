#include "magic/scene_generator.hpp"

#include "magic/errors.hpp"
#include "magic/rng.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <set>

namespace magic {

void SceneConfig::validate(const std::string& where) const {
  auto range = [&](int lo, int hi, const std::string& lo_name, const std::string& hi_name, int floor, int cap) {
    if (lo < floor) throw ConfigError(where + "." + lo_name, "must be at least " + std::to_string(floor));
    if (hi < lo) throw ConfigError(where + "." + hi_name, "empty range (" + hi_name + " < " + lo_name + ")");
    if (hi > cap) throw ConfigError(where + "." + hi_name, "exceeds the cap of " + std::to_string(cap));
  };
  range(min_objects, max_objects, "min_objects", "max_objects", 1, kMaxObjectsCap);
  range(min_described, max_described, "min_described", "max_described", 1, kMaxObjectsCap);
  range(min_tokens, max_tokens, "min_tokens", "max_tokens", 0, kMaxTokensCap);
  if (raw_dim < 1) throw ConfigError(where + ".raw_dim", "must be positive");
  if (object_noise < 0.0) throw ConfigError(where + ".object_noise", "must be non-negative");
  if (token_noise < 0.0) throw ConfigError(where + ".token_noise", "must be non-negative");
  if (references_per_scene < 1) throw ConfigError(where + ".references_per_scene", "must be positive");
}

namespace {

struct Entity {
  std::string noun;
  std::optional<std::string> adjective;
  std::optional<std::string> text;
  int label_id = 0;
  Box box{};
};

Box random_box(Rng& rng) {
  const double w = rng.uniform(0.15, 0.45);
  const double h = rng.uniform(0.15, 0.45);
  return {rng.uniform(0.0, 1.0 - w), rng.uniform(0.0, 1.0 - h), w, h};
}

Box box_inside(const Box& outer, Rng& rng) {
  const double w = 0.5 * outer[2];
  const double h = 0.3 * outer[3];
  return {outer[0] + rng.uniform(0.0, outer[2] - w), outer[1] + rng.uniform(0.0, outer[3] - h), w, h};
}

Eigen::VectorXd noise(int dim, double sigma, Rng& rng) {
  Eigen::VectorXd v(dim);
  const double s = sigma / std::sqrt(static_cast<double>(dim));
  for (int i = 0; i < dim; ++i) v[i] = s * rng.normal();
  return v;
}

int noun_label(const Grammar& g, const std::string& noun) {
  return static_cast<int>(std::find(g.nouns.begin(), g.nouns.end(), noun) - g.nouns.begin());
}

}  // namespace

GeneratedScene generate_scene(std::uint64_t seed, const SceneConfig& cfg, const Grammar& grammar) {
  cfg.validate();
  if (grammar.templates.empty()) throw ConfigError("grammar.templates", "grammar has no terminal production");
  Rng rng(seed);
  int n_obj = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  const int n_desc = rng.uniform_int(std::min(cfg.min_described, n_obj), std::min(cfg.max_described, n_obj));
  const int n_tok = rng.uniform_int(cfg.min_tokens, cfg.max_tokens);

  std::vector<CaptionFact> facts;
  int described = 0;
  int texts = 0;
  for (int attempt = 0; attempt < 200 && described < n_desc; ++attempt) {
    const auto ti = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(grammar.templates.size()) - 1));
    auto fact = sample_fact(grammar, ti, rng);
    if (!fact) continue;
    const int nouns = fact->object ? 2 : 1;
    const int fact_texts = (fact->subject.text ? 1 : 0) + (fact->object && fact->object->text ? 1 : 0);
    // Late in the search accept overshooting the described count so that
    // grammars made only of two-noun templates still produce a scene.
    if (described + nouns > n_desc && !(described == 0 && attempt >= 100)) continue;
    if (texts + fact_texts > cfg.max_tokens) continue;
    described += nouns;
    texts += fact_texts;
    facts.push_back(std::move(*fact));
  }
  if (facts.empty()) throw ConfigError("grammar.templates", "no template fits the scene configuration");
  n_obj = std::min(std::max(n_obj, described), kMaxObjectsCap);

  std::vector<Entity> entities;
  auto add_entity = [&](const EntityFact& e) {
    Entity ent;
    ent.noun = e.noun;
    ent.adjective = e.adjective;
    ent.text = e.text;
    ent.label_id = noun_label(grammar, e.noun);
    ent.box = random_box(rng);
    entities.push_back(std::move(ent));
  };
  for (const auto& f : facts) {
    add_entity(f.subject);
    if (f.object) add_entity(*f.object);
  }
  while (static_cast<int>(entities.size()) < n_obj) {
    Entity ent;
    if (cfg.distractor_nouns.empty()) {
      ent.noun = "#distractor";
      ent.label_id = static_cast<int>(grammar.nouns.size());
    } else {
      const int k = rng.uniform_int(0, static_cast<int>(cfg.distractor_nouns.size()) - 1);
      ent.noun = cfg.distractor_nouns[static_cast<std::size_t>(k)];
      ent.label_id = static_cast<int>(grammar.nouns.size()) + k;
    }
    ent.box = random_box(rng);
    entities.push_back(std::move(ent));
  }
  rng.shuffle(entities);

  GeneratedScene out;
  out.scene.scene_id = "seed-" + std::to_string(seed);
  for (const auto& ent : entities) {
    ObjectFeature o;
    const double sigma = cfg.object_noise * (2.0 - box_area(ent.box));
    o.feature = word_vector(ent.noun, cfg.raw_dim, cfg.word_seed);
    if (ent.adjective) o.feature += word_vector(*ent.adjective, cfg.raw_dim, cfg.word_seed);
    o.feature += noise(cfg.raw_dim, sigma, rng);
    o.box = ent.box;
    o.label_id = ent.label_id;
    out.scene.objects.push_back(std::move(o));
  }
  auto add_token = [&](const std::string& surface, const Box& box) {
    TextToken t;
    t.surface = surface;
    t.box = box;
    t.feature = surface_embedding(surface, cfg.raw_dim, cfg.word_seed) +
                noise(cfg.raw_dim, cfg.token_noise * (2.0 - box_area(box)), rng);
    out.scene.tokens.push_back(std::move(t));
  };
  for (const auto& ent : entities)
    if (ent.text) add_token(*ent.text, box_inside(ent.box, rng));
  while (static_cast<int>(out.scene.tokens.size()) < n_tok && !grammar.text_kinds.empty()) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(grammar.text_kinds.size()) - 1));
    add_token(grammar.text_kinds[k].sample(rng), random_box(rng));
  }
  rng.shuffle(out.scene.tokens);

  // References: every fact at full detail first, then progressively simpler
  // variants, until enough distinct captions are collected.
  std::vector<std::vector<CaptionFact>> chains;
  for (const auto& f : facts) {
    std::vector<CaptionFact> chain{f};
    for (auto& d : degrade_fact(f)) chain.push_back(std::move(d));
    chains.push_back(std::move(chain));
  }
  std::set<std::string> seen;
  std::size_t depth = 0;
  for (bool any = true; any && out.references.size() < static_cast<std::size_t>(cfg.references_per_scene); ++depth) {
    any = false;
    for (const auto& chain : chains) {
      if (depth >= chain.size()) continue;
      any = true;
      auto s = realize_fact(chain[depth], grammar, rng);
      if (!s) continue;
      const std::string text = s->text();
      if (seen.insert(text).second) out.references.push_back(text);
      if (out.references.size() >= static_cast<std::size_t>(cfg.references_per_scene)) break;
    }
  }
  return out;
}

std::vector<GeneratedScene> generate_scenes(std::uint64_t root, std::size_t count, const SceneConfig& cfg,
                                            const Grammar& grammar, const std::string& id_prefix, bool parallel) {
  cfg.validate();
  std::vector<GeneratedScene> out(count);
  auto one = [&](std::size_t i) {
    out[i] = generate_scene(substream_seed(root, "scene:" + std::to_string(i)), cfg, grammar);
    std::string num = std::to_string(i);
    out[i].scene.scene_id = id_prefix + std::string(num.size() < 5 ? 5 - num.size() : 0, '0') + num;
  };
  if (parallel) {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(count); ++i) {
      try {
        one(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::size_t i = 0; i < count; ++i) one(i);
  }
  return out;
}

}  // namespace magic
