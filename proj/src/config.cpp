#include "magic/config.hpp"

#include "magic/errors.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace magic {

namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_, "expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError(path(key), "unknown key");
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path(key), "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path(key), "expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path(key), "must be non-negative");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path(key), "expected a number");
    }
    try {
      out = v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path(key), "wrong type");
    }
  }

  template <class T>
  void positive(const std::string& key, T& out) {
    get(key, out);
    if (!(out > T{0})) throw ConfigError(path(key), "must be positive");
  }

  template <class T>
  void non_negative(const std::string& key, T& out) {
    get(key, out);
    if (out < T{0}) throw ConfigError(path(key), "must be non-negative");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

void parse_data(const json& j, DataConfig& d) {
  Section s(j, "data");
  s.positive("train_scenes", d.train_scenes);
  s.positive("eval_scenes", d.eval_scenes);
  s.positive("sentences", d.sentences);
  if (s.has("scenes")) {
    Section c(s.raw("scenes"), "data.scenes");
    SceneConfig& sc = d.scenes;
    c.get("min_objects", sc.min_objects);
    c.get("max_objects", sc.max_objects);
    c.get("min_described", sc.min_described);
    c.get("max_described", sc.max_described);
    c.get("min_tokens", sc.min_tokens);
    c.get("max_tokens", sc.max_tokens);
    c.get("object_noise", sc.object_noise);
    c.get("token_noise", sc.token_noise);
    c.get("references_per_scene", sc.references_per_scene);
    c.get("distractor_nouns", sc.distractor_nouns);
  }
}

void parse_model(const json& j, ModelConfig& m) {
  Section s(j, "model");
  s.positive("raw_dim", m.raw_dim);
  s.positive("d", m.d);
  s.positive("e", m.e);
  s.positive("K_rel", m.K_rel);
  s.positive("L_g", m.L_g);
  s.positive("N_k", m.N_k);
  s.get("epsilon", m.epsilon);
  if (!(m.epsilon > 0.0 && m.epsilon <= 1.0)) throw ConfigError("model.epsilon", "must lie in (0, 1]");
  s.positive("mapper_hidden", m.mapper_hidden);
  s.positive("critic_hidden", m.critic_hidden);
  s.positive("lang_hidden", m.lang_hidden);
}

void parse_pretrain(const json& j, PretrainOptions& a, LanguagePretrainOptions& l) {
  Section s(j, "pretrain");
  if (s.has("autoencoder")) {
    Section c(s.raw("autoencoder"), "pretrain.autoencoder");
    c.non_negative("epochs", a.epochs);
    c.positive("batch", a.batch);
    c.positive("lr", a.lr);
    c.positive("clip_norm", a.clip_norm);
    c.non_negative("distractor_candidates", a.distractor_candidates);
    c.non_negative("candidate_noise", a.candidate_noise);
    c.get("target_exact_match", a.target_exact_match);
    c.positive("eval_every", a.eval_every);
  }
  if (s.has("language")) {
    Section c(s.raw("language"), "pretrain.language");
    c.non_negative("epochs", l.epochs);
    c.positive("batch", l.batch);
    c.positive("lr", l.lr);
    c.positive("clip_norm", l.clip_norm);
    c.get("holdout_fraction", l.holdout_fraction);
    if (!(l.holdout_fraction > 0.0 && l.holdout_fraction < 1.0))
      throw ConfigError("pretrain.language.holdout_fraction", "must lie in (0, 1)");
  }
}

void parse_train(const json& j, TrainOptions& t) {
  Section s(j, "train");
  s.non_negative("iterations", t.iterations);
  s.positive("scene_batch", t.scene_batch);
  s.positive("n_critic", t.n_critic);
  s.non_negative("critic_warmup", t.critic_warmup);
  s.non_negative("warmup_critic_steps", t.warmup_critic_steps);
  s.non_negative("lambda_A", t.lambda_A);
  s.non_negative("lambda_C", t.lambda_C);
  s.non_negative("lambda_L", t.lambda_L);
  s.non_negative("lambda_GP", t.lambda_GP);
  s.positive("lr_critic", t.lr_critic);
  s.positive("lr_generator", t.lr_generator);
  s.positive("clip_norm", t.clip_norm);
  s.positive("lang_batch", t.lang_batch);
  s.get("score_weighting", t.score_weighting);
  s.get("warm_start", t.warm_start);
}

void check_rule(const std::string& name, const std::string& where) {
  try {
    selection_rule_from_string(name);
  } catch (const std::exception&) {
    throw ConfigError(where, "unknown selection rule '" + name + "'");
  }
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("", "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(key, "malformed dotted key");
    if (!node->is_object()) throw ConfigError(key, "cannot descend into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = parse_scalar(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig parse_config(const json& doc) {
  RunConfig c;
  Section root(doc, "");
  if (!doc.contains("seed")) throw ConfigError("seed", "missing");
  root.get("seed", c.seed);
  if (root.has("paths")) {
    Section p(root.raw("paths"), "paths");
    std::string dir = c.work_dir.string();
    p.get("work_dir", dir);
    if (dir.empty()) throw ConfigError("paths.work_dir", "must not be empty");
    c.work_dir = dir;
  }
  if (!doc.contains("grammar")) throw ConfigError("grammar", "missing");
  c.grammar = Grammar::from_json(root.raw("grammar"), "grammar");
  if (root.has("data")) parse_data(root.raw("data"), c.data);
  if (root.has("model")) parse_model(root.raw("model"), c.model);
  if (root.has("pretrain")) parse_pretrain(root.raw("pretrain"), c.autoencoder, c.language);
  if (root.has("train")) parse_train(root.raw("train"), c.train);
  if (root.has("eval")) {
    Section e(root.raw("eval"), "eval");
    e.get("rule", c.eval.rule);
    check_rule(c.eval.rule, "eval.rule");
    e.get("parallel", c.eval.parallel);
  }
  if (root.has("ablate")) {
    Section a(root.raw("ablate"), "ablate");
    a.get("N_k", c.ablate.N_k);
    a.get("rules", c.ablate.rules);
    for (std::size_t i = 0; i < c.ablate.N_k.size(); ++i)
      if (c.ablate.N_k[i] < 1) throw ConfigError("ablate.N_k[" + std::to_string(i) + "]", "must be positive");
    for (std::size_t i = 0; i < c.ablate.rules.size(); ++i)
      check_rule(c.ablate.rules[i], "ablate.rules[" + std::to_string(i) + "]");
  }

  c.data.scenes.raw_dim = c.model.raw_dim;
  c.data.scenes.word_seed = substream_seed(c.seed, "words");
  c.data.scenes.validate("data.scenes");
  c.autoencoder.seed = substream_seed(c.seed, "pretrain");
  c.language.seed = substream_seed(c.seed, "language");
  c.train.seed = substream_seed(c.seed, "train");
  return c;
}

json RunConfig::to_json() const {
  const SceneConfig& sc = data.scenes;
  return {
      {"seed", seed},
      {"paths", {{"work_dir", work_dir.string()}}},
      {"grammar", grammar.to_json()},
      {"data",
       {{"train_scenes", data.train_scenes},
        {"eval_scenes", data.eval_scenes},
        {"sentences", data.sentences},
        {"scenes",
         {{"min_objects", sc.min_objects},
          {"max_objects", sc.max_objects},
          {"min_described", sc.min_described},
          {"max_described", sc.max_described},
          {"min_tokens", sc.min_tokens},
          {"max_tokens", sc.max_tokens},
          {"object_noise", sc.object_noise},
          {"token_noise", sc.token_noise},
          {"references_per_scene", sc.references_per_scene},
          {"distractor_nouns", sc.distractor_nouns}}}}},
      {"model", model.to_json()},
      {"pretrain",
       {{"autoencoder",
         {{"epochs", autoencoder.epochs},
          {"batch", autoencoder.batch},
          {"lr", autoencoder.lr},
          {"clip_norm", autoencoder.clip_norm},
          {"distractor_candidates", autoencoder.distractor_candidates},
          {"candidate_noise", autoencoder.candidate_noise},
          {"target_exact_match", autoencoder.target_exact_match},
          {"eval_every", autoencoder.eval_every}}},
        {"language",
         {{"epochs", language.epochs},
          {"batch", language.batch},
          {"lr", language.lr},
          {"clip_norm", language.clip_norm},
          {"holdout_fraction", language.holdout_fraction}}}}},
      {"train",
       {{"iterations", train.iterations},
        {"scene_batch", train.scene_batch},
        {"n_critic", train.n_critic},
        {"critic_warmup", train.critic_warmup},
        {"warmup_critic_steps", train.warmup_critic_steps},
        {"lambda_A", train.lambda_A},
        {"lambda_C", train.lambda_C},
        {"lambda_L", train.lambda_L},
        {"lambda_GP", train.lambda_GP},
        {"lr_critic", train.lr_critic},
        {"lr_generator", train.lr_generator},
        {"clip_norm", train.clip_norm},
        {"lang_batch", train.lang_batch},
        {"score_weighting", train.score_weighting},
        {"warm_start", train.warm_start}}},
      {"eval", {{"rule", eval.rule}, {"parallel", eval.parallel}}},
      {"ablate", {{"N_k", ablate.N_k}, {"rules", ablate.rules}}},
  };
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      const std::optional<std::string>& env_seed) {
  std::ifstream in(path);
  if (!in) throw std::filesystem::filesystem_error("cannot open config", path, std::make_error_code(std::errc::no_such_file_or_directory));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "config is not valid JSON: " + std::string(e.what()));
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (env_seed && !env_seed->empty()) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(*env_seed, &used);
      if (used != env_seed->size() || (*env_seed)[0] == '-') throw std::invalid_argument("trailing");
      doc["seed"] = static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
      throw ConfigError("MAGIC_SEED", "expected a non-negative integer, got '" + *env_seed + "'");
    }
  }
  return parse_config(doc);
}

}  // namespace magic
