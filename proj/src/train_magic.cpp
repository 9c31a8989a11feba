#include "magic/train_magic.hpp"

#include "magic/bundle.hpp"
#include "magic/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace magic {

using ad::Matrix;
using ad::Var;

nlohmann::json ModelConfig::to_json() const {
  return {{"raw_dim", raw_dim},         {"d", d},
          {"e", e},                     {"K_rel", K_rel},
          {"L_g", L_g},                 {"N_k", N_k},
          {"epsilon", epsilon},         {"mapper_hidden", mapper_hidden},
          {"critic_hidden", critic_hidden}, {"lang_hidden", lang_hidden}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.raw_dim = j.at("raw_dim").get<int>();
  c.d = j.at("d").get<int>();
  c.e = j.at("e").get<int>();
  c.K_rel = j.at("K_rel").get<int>();
  c.L_g = j.at("L_g").get<int>();
  c.N_k = j.at("N_k").get<int>();
  c.epsilon = j.at("epsilon").get<double>();
  c.mapper_hidden = j.at("mapper_hidden").get<int>();
  c.critic_hidden = j.at("critic_hidden").get<int>();
  c.lang_hidden = j.at("lang_hidden").get<int>();
  return c;
}

CaptionModel::CaptionModel(const ModelConfig& cfg, Vocabulary v, std::uint64_t seed)
    : config(cfg), vocab(std::move(v)) {
  if (vocab.embedding_dim != cfg.raw_dim)
    throw std::invalid_argument("model: vocabulary embedding_dim must equal model raw_dim");
  Rng root(substream_seed(seed, "init"));
  Rng r_enc = root.substream("image_encoder");
  Rng r_sent = root.substream("sentence");
  Rng r_map = root.substream("mappers");
  Rng r_crit = root.substream("critics");
  Rng r_lang = root.substream("language");
  image_encoder = EncoderParams(cfg.encoder(), r_enc);
  sentence = SentenceModel(cfg.raw_dim, cfg.d, cfg.e, cfg.L_g, vocab.size(), r_sent);
  image_to_sentence = Mapper("map.image_to_sentence", cfg.d, cfg.e, cfg.mapper_hidden, r_map, false);
  sentence_to_image = Mapper("map.sentence_to_image", cfg.e, cfg.d, cfg.mapper_hidden, r_map, false);
  image_critic = Critic("critic.image", cfg.d, cfg.critic_hidden, r_crit);
  sentence_critic = Critic("critic.sentence", cfg.e, cfg.critic_hidden, r_crit);
  language = LanguageDiscriminator(cfg.raw_dim, cfg.lang_hidden, r_lang);
}

std::vector<ad::Parameter*> CaptionModel::generator_parameters() {
  auto out = image_encoder.parameters();
  for (auto* p : image_to_sentence.parameters()) out.push_back(p);
  for (auto* p : sentence_to_image.parameters()) out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> CaptionModel::critic_parameters() {
  auto out = image_critic.parameters();
  for (auto* p : sentence_critic.parameters()) out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> CaptionModel::parameters() {
  auto out = generator_parameters();
  for (auto* p : critic_parameters()) out.push_back(p);
  for (auto* p : sentence.parameters()) out.push_back(p);
  for (auto* p : language.parameters()) out.push_back(p);
  return out;
}

void CaptionModel::warm_start_image_encoder() {
  image_encoder.obj_proj.weight.value = sentence.encoder.word_proj.weight.value;
  image_encoder.obj_proj.bias.value = sentence.encoder.word_proj.bias.value;
  image_encoder.txt_proj.weight.value = sentence.encoder.text_proj.weight.value;
  image_encoder.txt_proj.bias.value = sentence.encoder.text_proj.bias.value;
  const auto& s = sentence.encoder;
  for (std::size_t l = 0; l < image_encoder.W_m0.size(); ++l) {
    if (l < s.W0.size()) {
      image_encoder.W_m0[l].value = s.W0[l].value;
      image_encoder.W_m1[l].value = s.W1[l].value;
    } else if (l == s.W0.size() && s.W_c0.value.rows() == image_encoder.W_m0[l].value.rows()) {
      image_encoder.W_m0[l].value = s.W_c0.value;
      image_encoder.W_m1[l].value = s.W_c1.value;
    }
  }
  image_encoder.W_r.value *= 0.1;
  image_encoder.W_a.value *= 0.1;
}

void save_model(const std::filesystem::path& path, CaptionModel& model) {
  ByteWriter w;
  const auto params = model.parameters();
  w.u64(params.size());
  for (const auto* p : params) {
    w.str(p->name);
    w.matrix(p->value);
  }
  write_bundle(path, BundleKind::kModel,
               {{"config", model.config.to_json().dump()}, {"vocabulary", encode_vocabulary(model.vocab)},
                {"parameters", w.take()}});
}

CaptionModel load_model(const std::filesystem::path& path) {
  const auto sections = read_bundle(path, BundleKind::kModel);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(nlohmann::json::parse(find_section(sections, "config").bytes));
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(BundleError::Code::kFormat, std::string("bundle: bad model config: ") + e.what());
  }
  CaptionModel model(cfg, decode_vocabulary(find_section(sections, "vocabulary").bytes), 0);
  std::map<std::string, ad::Parameter*> by_name;
  for (auto* p : model.parameters()) by_name[p->name] = p;
  ByteReader r(find_section(sections, "parameters").bytes);
  const std::uint64_t n = r.u64();
  if (n != by_name.size()) throw BundleError(BundleError::Code::kFormat, "bundle: parameter count mismatch");
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    Matrix value = r.matrix();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw BundleError(BundleError::Code::kFormat, "bundle: unknown parameter '" + name + "'");
    if (value.rows() != it->second->value.rows() || value.cols() != it->second->value.cols())
      throw BundleError(BundleError::Code::kFormat, "bundle: shape mismatch for '" + name + "'");
    it->second->value = std::move(value);
    it->second->zero_grad();
  }
  return model;
}

namespace {

struct BatchEncoding {
  Var G;        // d x K
  Var weights;  // 1 x K, sums to one
  std::vector<std::size_t> owner;  // scene of each column
};

BatchEncoding encode_batch(const nn::Binder& b, const SceneSet& scenes, const std::vector<std::size_t>& idx,
                           CaptionModel& model, const PoolOptions& pool) {
  std::vector<Var> cols, weights;
  BatchEncoding out;
  const double share = 1.0 / static_cast<double>(idx.size());
  for (std::size_t i : idx) {
    ImageEncoding enc = encode_image(b, scenes.scenes[i], model.image_encoder, pool);
    cols.push_back(enc.embeddings);
    weights.push_back(ad::scale(enc.pool_weights, share));
    for (std::size_t k = 0; k < enc.pool.size(); ++k) out.owner.push_back(i);
  }
  out.G = ad::concat_cols(cols);
  out.weights = ad::concat_cols(weights);
  return out;
}

void guard(double value, const char* what, int iteration) {
  if (!std::isfinite(value) || std::abs(value) > 1e6)
    throw DivergenceError(std::string("train: ") + what + " diverged at iteration " + std::to_string(iteration) +
                          " (value " + std::to_string(value) + ")");
}

}  // namespace

std::vector<TrainLogRow> train_magic(const SceneSet& scenes, const SentenceCorpus& corpus, const Grammar& grammar,
                                     CaptionModel& model, const TrainOptions& opt,
                                     const std::function<void(const TrainLogRow&)>& on_iteration) {
  if (scenes.scenes.empty() || corpus.sentences.empty()) throw std::invalid_argument("train: empty scene set or corpus");
  if (opt.n_critic < 1 || opt.scene_batch < 1 || opt.lang_batch < 1 || opt.iterations < 0)
    throw std::invalid_argument("train: n_critic, batch sizes must be positive");
  if (opt.lambda_A < 0 || opt.lambda_C < 0 || opt.lambda_L < 0 || opt.lambda_GP < 0)
    throw std::invalid_argument("train: weights must be non-negative");

  // Sentence-side embeddings never change: the sentence encoder is frozen.
  std::vector<SceneGraph> graphs;
  for (const auto& s : corpus.sentences) graphs.push_back(parse_scene_graph(s.words, grammar));
  Matrix GS(model.config.e, static_cast<Eigen::Index>(graphs.size()));
  for (std::size_t start = 0; start < graphs.size(); start += 256) {
    const std::size_t end = std::min(graphs.size(), start + 256);
    std::vector<const SceneGraph*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&graphs[i]);
    ad::Tape t;
    GS.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        encode_scene_graphs(nn::Binder{t, false}, chunk, model.vocab, model.sentence.encoder).value();
  }
  std::vector<CopyCandidateSet> scene_candidates;
  for (const auto& s : scenes.scenes) scene_candidates.push_back(candidates_from_scene(s));

  Rng root(opt.seed);
  Rng batch_rng = root.substream("shuffle");
  Rng mix_rng = root.substream("critic");
  nn::Adam critic_opt(model.critic_parameters(), {opt.lr_critic, 0.5, 0.9, 1e-8, opt.clip_norm});
  nn::Adam gen_opt(model.generator_parameters(), {opt.lr_generator, 0.5, 0.9, 1e-8, opt.clip_norm});
  PoolOptions pool;
  pool.N_k = model.config.N_k;
  pool.epsilon = model.config.epsilon;
  pool.K_rel = model.config.K_rel;
  AlignmentModules modules = model.alignment();

  auto sample_scenes = [&](int n) {
    std::vector<std::size_t> idx;
    for (int i = 0; i < n; ++i)
      idx.push_back(static_cast<std::size_t>(batch_rng.uniform_int(0, static_cast<int>(scenes.scenes.size()) - 1)));
    return idx;
  };
  auto sample_sentences = [&](Eigen::Index n) {
    Matrix m(GS.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) m.col(i) = GS.col(batch_rng.uniform_int(0, static_cast<int>(GS.cols()) - 1));
    return m;
  };
  auto mix_row = [&](Eigen::Index n) {
    Eigen::RowVectorXd m(n);
    for (Eigen::Index i = 0; i < n; ++i) m[i] = mix_rng.uniform();
    return m;
  };

  std::vector<TrainLogRow> log;
  for (int it = 1; it <= opt.iterations; ++it) {
    TrainLogRow row;
    row.iteration = it;

    const int critic_steps = it <= opt.critic_warmup ? std::max(opt.n_critic, opt.warmup_critic_steps) : opt.n_critic;
    for (int c = 0; c < critic_steps; ++c) {
      ad::Tape t;
      nn::Binder frozen{t, false}, train{t, true};
      const BatchEncoding enc = encode_batch(frozen, scenes, sample_scenes(opt.scene_batch), model, pool);
      Var gi = t.constant(enc.G.value());
      Var gs = t.constant(sample_sentences(gi.cols()));
      Var fake_s = model.image_to_sentence(frozen, gi);
      Var fake_i = model.sentence_to_image(frozen, gs);
      const Eigen::Index n = gi.cols();
      std::optional<Eigen::RowVectorXd> w;
      if (opt.score_weighting) w = Eigen::RowVectorXd(enc.weights.value());
      CriticTerms cs = critic_loss(train, model.sentence_critic, gs, fake_s, opt.lambda_GP, mix_row(n), {}, w);
      CriticTerms ci = critic_loss(train, model.image_critic, gi, fake_i, opt.lambda_GP, mix_row(n), w, {});
      Var loss = ad::add(cs.loss, ci.loss);
      guard(loss.scalar(), "critic loss", it);
      critic_opt.zero_grad();
      t.backward(loss);
      critic_opt.step();
      row.critic_loss = loss.scalar();
      row.gap_sentence = cs.gap.scalar();
      row.gap_image = ci.gap.scalar();
    }

    {
      ad::Tape t;
      const bool active = opt.lambda_A > 0.0;
      nn::Binder gen{t, active}, crit{t, false};
      const BatchEncoding enc = encode_batch(gen, scenes, sample_scenes(opt.scene_batch), model, pool);
      Var gs = t.constant(sample_sentences(enc.G.cols()));
      std::optional<Var> weights;
      if (opt.score_weighting) weights = enc.weights;
      AlignmentTerms terms = cycle_alignment_loss(gen, crit, enc.G, gs, modules, opt.lambda_A, opt.lambda_C, weights);
      guard(terms.total.scalar(), "alignment loss", it);
      row.adv_image = terms.adv_image.scalar();
      row.adv_sentence = terms.adv_sentence.scalar();
      row.cycle = terms.cycle.scalar();
      if (active) {
        gen_opt.zero_grad();
        t.backward(terms.total);
        gen_opt.step();
      }
    }

    if (opt.lambda_L > 0.0) {
      ad::Tape t;
      nn::Binder gen{t, true}, frozen{t, false};
      const BatchEncoding enc = encode_batch(gen, scenes, sample_scenes(opt.lang_batch), model, pool);
      Var mapped = model.image_to_sentence(gen, enc.G);
      std::vector<int> lengths;
      std::vector<const CopyCandidateSet*> cands;
      for (Eigen::Index k = 0; k < mapped.cols(); ++k) {
        const CopyCandidateSet& cs = scene_candidates[enc.owner[static_cast<std::size_t>(k)]];
        const DecodedSentence greedy = greedy_decode(mapped.value().col(k), cs, model.vocab, model.sentence.decoder);
        lengths.push_back(std::max<int>(1, static_cast<int>(greedy.tokens.size())));
        cands.push_back(&cs);
      }
      std::vector<Var> steps = soft_decode(frozen, mapped, cands, lengths, model.vocab, model.sentence.decoder);
      Var z = model.language.logits(frozen, steps, lengths);
      Var loss = ad::scale(ad::mean(ad::log_sigmoid(z)), -opt.lambda_L);
      guard(loss.scalar(), "language loss", it);
      row.language = loss.scalar();
      gen_opt.zero_grad();
      t.backward(loss);
      gen_opt.step();
    }

    log.push_back(row);
    if (on_iteration) on_iteration(row);
  }
  return log;
}

double window_mean(const std::vector<TrainLogRow>& log, int from, int to, double TrainLogRow::*field) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : log)
    if (r.iteration >= from && r.iteration <= to) {
      sum += r.*field;
      ++n;
    }
  return n ? sum / n : 0.0;
}

std::vector<DecodedSentence> generate_captions(const MultimodalScene& scene, CaptionModel& model, int N_k,
                                               SelectionRule rule, std::uint64_t seed) {
  ad::Tape t;
  nn::Binder frozen{t, false};
  PoolOptions pool;
  pool.N_k = N_k;
  pool.epsilon = model.config.epsilon;
  pool.K_rel = model.config.K_rel;
  pool.rule = rule;
  pool.seed = seed;
  const ImageEncoding enc = encode_image(frozen, scene, model.image_encoder, pool);
  const Var mapped = model.image_to_sentence(frozen, enc.embeddings);
  const CopyCandidateSet cands = candidates_from_scene(scene);
  std::vector<DecodedSentence> out;
  for (Eigen::Index k = 0; k < mapped.cols(); ++k)
    out.push_back(greedy_decode(mapped.value().col(k), cands, model.vocab, model.sentence.decoder));
  return out;
}

}  // namespace magic
