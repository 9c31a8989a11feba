#include "magic/sentence_autoencoder.hpp"

#include "magic/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace magic {

using ad::Matrix;
using ad::Var;

namespace {

constexpr double kMasked = -1e30;

}  // namespace

int CopyCandidateSet::find(const std::string& surface) const {
  for (std::size_t i = 0; i < surfaces.size(); ++i)
    if (surfaces[i] == surface) return static_cast<int>(i);
  return -1;
}

CopyCandidateSet candidates_from_scene(const MultimodalScene& scene) {
  CopyCandidateSet c;
  const Eigen::Index raw = scene.objects.empty() ? 0 : scene.objects.front().feature.size();
  c.features.resize(raw, static_cast<Eigen::Index>(scene.tokens.size()));
  for (std::size_t j = 0; j < scene.tokens.size(); ++j) {
    c.surfaces.push_back(scene.tokens[j].surface);
    c.features.col(static_cast<Eigen::Index>(j)) = scene.tokens[j].feature;
  }
  return c;
}

std::string DecodedSentence::text() const {
  std::string out;
  for (std::size_t i = 0; i < surfaces.size(); ++i) {
    if (i) out += ' ';
    out += surfaces[i];
  }
  return out;
}

DecodedSentence make_target(const Sentence& sentence, const Vocabulary& vocab, const CopyCandidateSet& candidates) {
  DecodedSentence t;
  t.ended = true;
  for (std::size_t i = 0; i < sentence.words.size(); ++i) {
    const std::string& w = sentence.words[i];
    DecodedToken tok;
    if (sentence.copy[i]) {
      const int c = candidates.find(w);
      if (c < 0) throw std::invalid_argument("caption target: copy word '" + w + "' is not among the candidates");
      tok = {true, c};
    } else {
      const int id = vocab.id(w);
      if (id == Vocabulary::kUnknown && !vocab.contains(w))
        throw std::invalid_argument("caption target: word '" + w + "' is not in the vocabulary");
      tok = {false, id};
    }
    t.tokens.push_back(tok);
    t.surfaces.push_back(w);
  }
  return t;
}

DecoderParams::DecoderParams(int raw_dim, int d, int e, int vocab_size, Rng& rng)
    : input_proj("dec.input_proj", d, raw_dim, rng),
      cell("dec.cell", d + e, d, rng),
      init("dec.init", d, e, rng),
      vocab_head("dec.vocab_head", vocab_size, d, rng),
      pointer("dec.pointer", nn::glorot(d, raw_dim, rng)) {}

std::vector<ad::Parameter*> DecoderParams::parameters() {
  std::vector<ad::Parameter*> out;
  input_proj.collect(out);
  cell.collect(out);
  init.collect(out);
  vocab_head.collect(out);
  out.push_back(&pointer);
  return out;
}

std::vector<ad::Parameter*> SentenceModel::parameters() {
  auto out = encoder.parameters();
  for (auto* p : decoder.parameters()) out.push_back(p);
  return out;
}

DecoderState initial_state(const Eigen::VectorXd& g, const Vocabulary& vocab, DecoderParams& params) {
  DecoderState s;
  s.h = (params.init.weight.value * g + params.init.bias.value.col(0)).array().tanh();
  s.c = Eigen::VectorXd::Zero(params.d());
  s.input = vocab.embeddings.col(Vocabulary::kBegin);
  return s;
}

namespace {

Eigen::VectorXd sigmoid(const Eigen::VectorXd& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

const Eigen::VectorXd token_feature(const DecodedToken& tok, const Vocabulary& vocab, const CopyCandidateSet& cands) {
  return tok.copy ? Eigen::VectorXd(cands.features.col(tok.index)) : Eigen::VectorXd(vocab.embeddings.col(tok.index));
}

}  // namespace

StepOutput decode_step(const DecoderState& state, const Eigen::VectorXd& g, const CopyCandidateSet& candidates,
                       DecoderParams& params) {
  const int d = params.d();
  Eigen::VectorXd x(params.cell.weight.value.cols());
  x << params.input_proj.weight.value * state.input + params.input_proj.bias.value.col(0), g, state.h;
  const Eigen::VectorXd z = params.cell.weight.value * x + params.cell.bias.value.col(0);
  const Eigen::VectorXd i = sigmoid(z.segment(0, d));
  const Eigen::VectorXd f = sigmoid(z.segment(d, d));
  const Eigen::VectorXd gg = z.segment(2 * d, d).array().tanh();
  const Eigen::VectorXd o = sigmoid(z.segment(3 * d, d));
  StepOutput out;
  out.next.c = f.cwiseProduct(state.c) + i.cwiseProduct(gg);
  out.next.h = o.cwiseProduct(Eigen::VectorXd(out.next.c.array().tanh()));
  out.vocab_scores = params.vocab_head.weight.value * out.next.h + params.vocab_head.bias.value.col(0);
  if (candidates.size() > 0)
    out.copy_scores = candidates.features.transpose() * (params.pointer.value.transpose() * out.next.h);
  else
    out.copy_scores.resize(0);
  Eigen::Index best_v = 0;
  const double vmax = out.vocab_scores.maxCoeff(&best_v);
  out.greedy = {false, static_cast<int>(best_v)};
  if (out.copy_scores.size() > 0) {
    Eigen::Index best_c = 0;
    if (out.copy_scores.maxCoeff(&best_c) > vmax) out.greedy = {true, static_cast<int>(best_c)};
  }
  return out;
}

DecodedSentence greedy_decode(const Eigen::VectorXd& g, const CopyCandidateSet& candidates, const Vocabulary& vocab,
                              DecoderParams& params, int max_length) {
  DecodedSentence out;
  DecoderState state = initial_state(g, vocab, params);
  for (int t = 0; t < max_length; ++t) {
    StepOutput step = decode_step(state, g, candidates, params);
    if (!step.greedy.copy && step.greedy.index == Vocabulary::kEnd) {
      out.ended = true;
      break;
    }
    out.tokens.push_back(step.greedy);
    out.surfaces.push_back(step.greedy.copy ? candidates.surfaces[static_cast<std::size_t>(step.greedy.index)]
                                            : vocab.words[static_cast<std::size_t>(step.greedy.index)]);
    state = std::move(step.next);
    state.input = token_feature(step.greedy, vocab, candidates);
  }
  return out;
}

namespace {

// Candidate features of a batch laid side by side, with per-item offsets.
struct PackedCandidates {
  Matrix features;  // raw x total
  std::vector<long> offset, count;
  long total = 0;
  long max_count = 0;
};

PackedCandidates pack(const std::vector<const CopyCandidateSet*>& cands, Eigen::Index raw) {
  PackedCandidates p;
  for (const auto* c : cands) {
    p.offset.push_back(p.total);
    p.count.push_back(static_cast<long>(c->size()));
    p.total += static_cast<long>(c->size());
    p.max_count = std::max(p.max_count, static_cast<long>(c->size()));
  }
  p.features.resize(raw, p.total);
  for (std::size_t b = 0; b < cands.size(); ++b)
    if (cands[b]->size() > 0) {
      if (cands[b]->features.rows() != raw) throw std::invalid_argument("decoder: candidate feature dimension mismatch");
      p.features.middleCols(p.offset[b], p.count[b]) = cands[b]->features;
    }
  return p;
}

// Vocabulary logits stacked over padded copy scores for hidden states H
// (d x B*steps, column = step * B + b).
Var output_logits(const nn::Binder& b, Var H, const PackedCandidates& pc, Var features, long batch,
                  DecoderParams& params) {
  ad::Tape& t = b.tape;
  Var vocab_logits = params.vocab_head(b, H);
  if (pc.max_count == 0) return vocab_logits;
  const Eigen::Index cols = H.cols();
  Var projected = ad::matmul(b(params.pointer), features);  // d x total
  Var all = ad::matmul(ad::transpose(projected), H);                          // total x cols
  std::vector<long> src(static_cast<std::size_t>(pc.max_count * cols), -1);
  Matrix mask = Matrix::Zero(pc.max_count, cols);
  for (Eigen::Index col = 0; col < cols; ++col) {
    const auto item = static_cast<std::size_t>(col % batch);
    for (long i = 0; i < pc.max_count; ++i) {
      if (i < pc.count[item])
        src[static_cast<std::size_t>(i + col * pc.max_count)] = pc.offset[item] + i + col * pc.total;
      else
        mask(i, col) = kMasked;
    }
  }
  Var copy = ad::add(ad::gather(all, src, pc.max_count, cols), t.constant(std::move(mask)));
  return ad::concat_rows({vocab_logits, copy});
}

}  // namespace

Var caption_nll(const nn::Binder& b, Var G, const std::vector<const CopyCandidateSet*>& candidates,
                const std::vector<const DecodedSentence*>& targets, const Vocabulary& vocab, DecoderParams& params) {
  const auto B = static_cast<long>(targets.size());
  if (B == 0 || G.cols() != B || static_cast<long>(candidates.size()) != B)
    throw std::invalid_argument("caption_nll: batch size mismatch");
  ad::Tape& t = b.tape;
  const Eigen::Index raw = vocab.embedding_dim;
  const int V = params.vocab_size();
  long steps = 0;
  for (const auto* tg : targets) steps = std::max(steps, static_cast<long>(tg->tokens.size()) + 1);
  const PackedCandidates pc = pack(candidates, raw);

  // Teacher-forced inputs and targets for every (step, item).
  Matrix inputs = Matrix::Zero(raw, steps * B);
  std::vector<int> target_index(static_cast<std::size_t>(steps * B), -1);
  for (long bi = 0; bi < B; ++bi) {
    const DecodedSentence& tg = *targets[static_cast<std::size_t>(bi)];
    const CopyCandidateSet& cs = *candidates[static_cast<std::size_t>(bi)];
    const long len = static_cast<long>(tg.tokens.size());
    for (long s = 0; s <= len; ++s) {
      const long col = s * B + bi;
      inputs.col(col) = s == 0 ? Eigen::VectorXd(vocab.embeddings.col(Vocabulary::kBegin))
                               : token_feature(tg.tokens[static_cast<std::size_t>(s - 1)], vocab, cs);
      if (s < len) {
        const DecodedToken& tok = tg.tokens[static_cast<std::size_t>(s)];
        if (tok.copy ? (tok.index < 0 || tok.index >= static_cast<int>(cs.size())) : (tok.index < 0 || tok.index >= V))
          throw std::invalid_argument("caption_nll: unresolvable target token");
        target_index[static_cast<std::size_t>(col)] = tok.copy ? V + tok.index : tok.index;
      } else {
        target_index[static_cast<std::size_t>(col)] = Vocabulary::kEnd;
      }
    }
  }
  Var X = params.input_proj(b, t.constant(std::move(inputs)));  // d x steps*B
  nn::LstmCell::State st{ad::tanh(params.init(b, G)), t.constant(Matrix::Zero(params.d(), B))};
  std::vector<Var> hs;
  for (long s = 0; s < steps; ++s) {
    st = params.cell.step(b, ad::concat_rows({ad::slice_cols(X, s * B, B), G}), st);
    hs.push_back(st.h);
  }
  Var logits = output_logits(b, ad::concat_cols(hs), pc, t.constant(pc.features), B, params);
  Var logp = ad::pick(ad::log_softmax_cols(logits), target_index);
  return ad::scale(ad::sum(logp), -1.0);
}

double caption_nll(const Eigen::VectorXd& g, const CopyCandidateSet& candidates, const DecodedSentence& target,
                   const Vocabulary& vocab, DecoderParams& params) {
  ad::Tape t;
  nn::Binder b{t, false};
  return caption_nll(b, t.constant(g), {&candidates}, {&target}, vocab, params).scalar();
}

std::vector<Var> soft_decode(const nn::Binder& b, Var G, const std::vector<const CopyCandidateSet*>& candidates,
                             const std::vector<int>& lengths, const Vocabulary& vocab, DecoderParams& params) {
  const auto B = static_cast<long>(lengths.size());
  if (B == 0 || G.cols() != B || static_cast<long>(candidates.size()) != B)
    throw std::invalid_argument("soft_decode: batch size mismatch");
  ad::Tape& t = b.tape;
  const int V = params.vocab_size();
  const PackedCandidates pc = pack(candidates, vocab.embedding_dim);
  const int steps = *std::max_element(lengths.begin(), lengths.end());
  Var E = t.constant_ref(vocab.embeddings);
  Var F = t.constant(pc.features);

  // Scatter of the copy probabilities back to packed candidate order.
  std::vector<long> scatter;
  if (pc.total > 0) {
    scatter.assign(static_cast<std::size_t>(pc.total * B), -1);
    const long rows = V + pc.max_count;
    for (long bi = 0; bi < B; ++bi)
      for (long i = 0; i < pc.count[static_cast<std::size_t>(bi)]; ++i)
        scatter[static_cast<std::size_t>(pc.offset[static_cast<std::size_t>(bi)] + i + bi * pc.total)] = V + i + bi * rows;
  }

  Matrix bos(vocab.embedding_dim, B);
  for (long bi = 0; bi < B; ++bi) bos.col(bi) = vocab.embeddings.col(Vocabulary::kBegin);
  Var input = t.constant(std::move(bos));
  nn::LstmCell::State st{ad::tanh(params.init(b, G)), t.constant(Matrix::Zero(params.d(), B))};
  std::vector<Var> out;
  for (int s = 0; s < steps; ++s) {
    st = params.cell.step(b, ad::concat_rows({params.input_proj(b, input), G}), st);
    Var p = ad::softmax_cols(output_logits(b, st.h, pc, F, B, params));
    Var mix = ad::matmul(E, ad::slice_rows(p, 0, V));
    if (pc.total > 0) mix = ad::add(mix, ad::matmul(F, ad::gather(p, scatter, pc.total, B)));
    out.push_back(mix);
    input = mix;
  }
  return out;
}

CopyCandidateSet sentence_candidates(const Sentence& s, const Grammar& grammar, const Vocabulary& vocab,
                                     int distractors, double noise, Rng& rng) {
  std::vector<std::string> surfaces;
  for (std::size_t i = 0; i < s.words.size(); ++i)
    if (s.copy[i] && std::find(surfaces.begin(), surfaces.end(), s.words[i]) == surfaces.end())
      surfaces.push_back(s.words[i]);
  for (int k = 0, tries = 0; k < distractors && !grammar.text_kinds.empty() && tries < 20 * distractors + 20; ++tries) {
    const auto kind = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(grammar.text_kinds.size()) - 1));
    std::string w = grammar.text_kinds[kind].sample(rng);
    if (std::find(surfaces.begin(), surfaces.end(), w) != surfaces.end()) continue;
    surfaces.push_back(std::move(w));
    ++k;
  }
  rng.shuffle(surfaces);
  CopyCandidateSet c;
  c.surfaces = surfaces;
  c.features.resize(vocab.embedding_dim, static_cast<Eigen::Index>(surfaces.size()));
  const double scale = noise / std::sqrt(static_cast<double>(vocab.embedding_dim));
  for (std::size_t i = 0; i < surfaces.size(); ++i) {
    Eigen::VectorXd f = vocab.surface_feature(surfaces[i]);
    for (Eigen::Index r = 0; r < f.size(); ++r) f[r] += scale * rng.normal();
    c.features.col(static_cast<Eigen::Index>(i)) = f;
  }
  return c;
}

namespace {

std::vector<SceneGraph> parse_corpus(const SentenceCorpus& corpus, const Grammar& grammar) {
  std::vector<SceneGraph> graphs;
  graphs.reserve(corpus.sentences.size());
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    try {
      graphs.push_back(parse_scene_graph(corpus.sentences[i].words, grammar));
    } catch (const ParseError& e) {
      throw std::invalid_argument("corpus sentence " + std::to_string(i) + " does not parse: " + e.what());
    }
  }
  return graphs;
}

}  // namespace

ReconstructionReport evaluate_reconstruction(const SentenceCorpus& corpus, const Vocabulary& vocab,
                                             const Grammar& grammar, SentenceModel& model, const PretrainOptions& opt,
                                             std::uint64_t seed) {
  const std::vector<SceneGraph> graphs = parse_corpus(corpus, grammar);
  Rng rng(seed);
  ReconstructionReport r;
  long exact = 0;
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const Sentence& s = corpus.sentences[i];
    const CopyCandidateSet cands = sentence_candidates(s, grammar, vocab, opt.distractor_candidates, opt.candidate_noise, rng);
    const Eigen::VectorXd g = encode_scene_graph(graphs[i], vocab, model.encoder);
    const DecodedSentence out = greedy_decode(g, cands, vocab, model.decoder);
    if (out.ended && out.surfaces == s.words) ++exact;
    for (std::size_t k = 0; k < s.words.size(); ++k) {
      if (!s.copy[k]) continue;
      ++r.copy_targets;
      if (k < out.tokens.size() && out.tokens[k].copy && out.surfaces[k] == s.words[k]) ++r.copy_hits;
    }
  }
  r.exact_match = corpus.sentences.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(corpus.sentences.size());
  return r;
}

std::vector<PretrainEpoch> pretrain_autoencoder(const SentenceCorpus& corpus, const Vocabulary& vocab,
                                                const Grammar& grammar, SentenceModel& model,
                                                const PretrainOptions& opt,
                                                const std::function<void(const PretrainEpoch&)>& on_epoch) {
  if (corpus.sentences.empty()) throw std::invalid_argument("pretrain: empty corpus");
  if (opt.batch < 1 || opt.epochs < 0) throw std::invalid_argument("pretrain: bad batch size or epoch count");
  const std::vector<SceneGraph> graphs = parse_corpus(corpus, grammar);
  Rng root(opt.seed);
  Rng shuffle_rng = root.substream("shuffle");
  Rng cand_rng = root.substream("candidates");
  const std::uint64_t eval_seed = substream_seed(opt.seed, "eval");

  nn::Adam adam(model.parameters(), {opt.lr, 0.9, 0.999, 1e-8, opt.clip_norm});
  std::vector<std::size_t> order(corpus.sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PretrainEpoch> curve;
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch));
      std::vector<CopyCandidateSet> cands;
      std::vector<DecodedSentence> targets;
      std::vector<const SceneGraph*> batch_graphs;
      for (std::size_t k = start; k < end; ++k) {
        const Sentence& s = corpus.sentences[order[k]];
        cands.push_back(sentence_candidates(s, grammar, vocab, opt.distractor_candidates, opt.candidate_noise, cand_rng));
        targets.push_back(make_target(s, vocab, cands.back()));
        batch_graphs.push_back(&graphs[order[k]]);
      }
      std::vector<const CopyCandidateSet*> cp;
      std::vector<const DecodedSentence*> tp;
      for (std::size_t k = 0; k < cands.size(); ++k) {
        cp.push_back(&cands[k]);
        tp.push_back(&targets[k]);
      }
      ad::Tape t;
      nn::Binder b{t, true};
      Var G = encode_scene_graphs(b, batch_graphs, vocab, model.encoder);
      Var nll = caption_nll(b, G, cp, tp, vocab, model.decoder);
      const double value = nll.scalar();
      if (!std::isfinite(value) || value / static_cast<double>(cands.size()) > 1e6)
        throw DivergenceError("pretrain: non-finite or exploding loss at epoch " + std::to_string(epoch));
      total += value;
      adam.zero_grad();
      t.backward(ad::scale(nll, 1.0 / static_cast<double>(cands.size())));
      adam.step();
    }
    PretrainEpoch rec;
    rec.epoch = epoch;
    rec.loss = total / static_cast<double>(corpus.sentences.size());
    if (opt.eval_every > 0 && (epoch % opt.eval_every == 0 || epoch == opt.epochs))
      rec.exact_match = evaluate_reconstruction(corpus, vocab, grammar, model, opt, eval_seed).exact_match;
    curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.exact_match >= opt.target_exact_match) break;
  }
  return curve;
}

}  // namespace magic
