#include "magic/grammar.hpp"
#include "magic/rng.hpp"
#include "magic/sentence_autoencoder.hpp"
#include "magic/vocabulary.hpp"
#include "oracles/loops.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace magic;
using oracle::Vec;

namespace {

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

struct Fixture {
  Grammar grammar = test::grammar();
  SentenceCorpus corpus = generate_sentence_corpus(1, grammar, 60);
  Vocabulary vocab = build_vocabulary(corpus, 8, 3);
  SentenceModel model;

  explicit Fixture(std::uint64_t seed, int L_g = 2) {
    Rng rng(seed);
    model = SentenceModel(8, 6, 5, L_g, vocab.size(), rng);
  }
};

Vec sigmoid(Vec v) {
  for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
  return v;
}

Vec tanh_v(Vec v) {
  for (double& x : v) x = std::tanh(x);
  return v;
}

Vec slice(const Vec& v, std::size_t at, std::size_t n) { return Vec(v.begin() + static_cast<long>(at), v.begin() + static_cast<long>(at + n)); }

// Teacher-forced NLL computed step by step with scalar loops.
double nll_oracle(const Eigen::VectorXd& g_e, const CopyCandidateSet& cands, const DecodedSentence& target,
                  const Vocabulary& vocab, DecoderParams& p) {
  const std::size_t d = static_cast<std::size_t>(p.d());
  const Vec g = oracle::to_vec(g_e);
  Vec h = tanh_v(oracle::affine(p.init.weight.value, p.init.bias.value, g));
  Vec c(d, 0.0);
  Vec prev = oracle::to_vec(vocab.embeddings.col(Vocabulary::kBegin));
  double loss = 0;
  const int V = p.vocab_size();
  for (std::size_t s = 0; s <= target.tokens.size(); ++s) {
    Vec x = oracle::affine(p.input_proj.weight.value, p.input_proj.bias.value, prev);
    x.insert(x.end(), g.begin(), g.end());
    x.insert(x.end(), h.begin(), h.end());
    const Vec z = oracle::affine(p.cell.weight.value, p.cell.bias.value, x);
    const Vec i = sigmoid(slice(z, 0, d)), f = sigmoid(slice(z, d, d)), gg = tanh_v(slice(z, 2 * d, d)),
              o = sigmoid(slice(z, 3 * d, d));
    for (std::size_t k = 0; k < d; ++k) {
      c[k] = f[k] * c[k] + i[k] * gg[k];
      h[k] = o[k] * std::tanh(c[k]);
    }
    Vec logits = oracle::affine(p.vocab_head.weight.value, p.vocab_head.bias.value, h);
    for (std::size_t j = 0; j < cands.size(); ++j) {
      double sc = 0;
      for (Eigen::Index r = 0; r < p.pointer.value.rows(); ++r)
        for (Eigen::Index q = 0; q < p.pointer.value.cols(); ++q)
          sc += h[static_cast<std::size_t>(r)] * p.pointer.value(r, q) * cands.features(q, static_cast<Eigen::Index>(j));
      logits.push_back(sc);
    }
    const Vec pr = oracle::softmax(logits);
    int tgt = Vocabulary::kEnd;
    if (s < target.tokens.size()) {
      const DecodedToken& t = target.tokens[s];
      tgt = t.copy ? V + t.index : t.index;
      prev = t.copy ? oracle::to_vec(cands.features.col(t.index)) : oracle::to_vec(vocab.embeddings.col(t.index));
    }
    loss -= std::log(pr[static_cast<std::size_t>(tgt)]);
  }
  return loss;
}

double train_step_nll(Fixture& f, const Eigen::VectorXd& g, const CopyCandidateSet& cands, const DecodedSentence& tgt,
                      double lr) {
  auto params = f.model.decoder.parameters();
  for (auto* p : params) p->zero_grad();
  ad::Tape t;
  nn::Binder b{t, true};
  ad::Var loss = caption_nll(b, t.constant(g), {&cands}, {&tgt}, f.vocab, f.model.decoder);
  t.backward(loss);
  for (auto* p : params) p->value -= lr * p->grad;
  return loss.scalar();
}

}  // namespace

TEST_CASE("parse_scene_graph examples") {
  const Grammar g = test::grammar();
  SceneGraph sg = parse_scene_graph(words("a red can"), g);
  REQUIRE(sg.objects.size() == 1);
  CHECK(sg.objects[0].noun == "can");
  REQUIRE(sg.objects[0].attachments.size() == 1);
  CHECK(sg.objects[0].attachments[0] == SceneGraphNode{NodeKind::kAttribute, "red", -1});

  sg = parse_scene_graph(words("a can of monster on a desk"), g);
  REQUIRE(sg.objects.size() == 2);
  CHECK(sg.objects[0].noun == "can");
  CHECK(sg.objects[1].noun == "desk");
  const auto& att = sg.objects[0].attachments;
  REQUIRE(att.size() == 2);
  CHECK(att[0] == SceneGraphNode{NodeKind::kText, "monster", -1});
  CHECK(att[1] == SceneGraphNode{NodeKind::kRelationship, "on", 1});
  CHECK(sg.objects[1].attachments.empty());

  try {
    parse_scene_graph(words("xyzzy can"), g);
    FAIL("parsed a non-derivable sentence");
  } catch (const ParseError& e) {
    CHECK(e.position() == 1);
    CHECK(e.token() == "xyzzy");
  }
  CHECK_THROWS_AS(parse_scene_graph(words("a can on"), g), ParseError);
  CHECK(verbalize(parse_scene_graph(words("a can priced at 4.99"), g), g) == words("a can priced at 4.99"));
}

TEST_CASE("encode_scene_graph") {
  Fixture f(13, 1);
  auto& enc = f.model.encoder;
  const SceneGraph sg = parse_scene_graph(words("a can of acme on a box"), f.grammar);
  const Eigen::VectorXd out = encode_scene_graph(sg, f.vocab, enc);

  auto wv = [&](const std::string& w) { return oracle::to_vec(f.vocab.embeddings.col(f.vocab.id(w))); };
  auto wp = [&](const Vec& x) { return oracle::affine(enc.word_proj.weight.value, enc.word_proj.bias.value, x); };
  Vec total(static_cast<std::size_t>(enc.e()), 0.0);
  for (const auto& obj : sg.objects) {
    Vec nodes(static_cast<std::size_t>(enc.d()), 0.0);
    for (const auto& n : obj.attachments)
      nodes = oracle::plus(nodes, n.kind == NodeKind::kText
                                      ? oracle::affine(enc.text_proj.weight.value, enc.text_proj.bias.value,
                                                       oracle::to_vec(f.vocab.surface_feature(n.word)))
                                      : wp(wv(n.word)));
    total = oracle::plus(total, oracle::plus(oracle::matvec(enc.W_c0.value, wp(wv(obj.noun))),
                                             oracle::matvec(enc.W_c1.value, nodes)));
  }
  CHECK(oracle::max_abs_diff(oracle::relu(oracle::times(total, 0.5)), out) <= 1e-10);

  // Duplicated object: mean aggregation leaves the output unchanged.
  SceneGraph one = parse_scene_graph(words("a red can"), f.grammar);
  SceneGraph two = one;
  two.objects.push_back(one.objects[0]);
  CHECK(encode_scene_graph(two, f.vocab, enc) == encode_scene_graph(one, f.vocab, enc));

  SceneGraph empty;
  CHECK_THROWS(encode_scene_graph(empty, f.vocab, enc));
}

TEST_CASE("encode_scene_graph identity configuration") {
  Fixture f(14, 1);
  Rng rng(1);
  SentenceEncoderParams enc(8, 5, 5, 1, rng);
  enc.word_proj.weight.value.setZero();
  enc.word_proj.bias.value = Eigen::VectorXd::LinSpaced(5, 0.1, 0.9);
  enc.W_c0.value.setIdentity();
  const SceneGraph sg = parse_scene_graph(words("a can"), f.grammar);
  CHECK(encode_scene_graph(sg, f.vocab, enc) == enc.word_proj.bias.value.col(0));
}

TEST_CASE("decode_step") {
  Fixture f(15);
  Rng rng(15);
  Eigen::VectorXd g(5);
  for (int i = 0; i < 5; ++i) g[i] = rng.normal();
  DecoderState st = initial_state(g, f.vocab, f.model.decoder);

  CopyCandidateSet none;
  none.features.resize(8, 0);
  StepOutput out = decode_step(st, g, none, f.model.decoder);
  CHECK(out.copy_scores.size() == 0);
  CHECK(!out.greedy.copy);
  Eigen::Index arg = 0;
  out.vocab_scores.maxCoeff(&arg);
  CHECK(out.greedy.index == arg);

  CopyCandidateSet cands;
  cands.surfaces = {"4.99", "acme"};
  cands.features.resize(8, 2);
  cands.features.col(0) = f.vocab.surface_feature("4.99");
  cands.features.col(1) = f.vocab.surface_feature("acme");
  out = decode_step(st, g, cands, f.model.decoder);
  const Eigen::VectorXd h = out.next.h, fe = cands.features.col(1);
  // Make candidate 1 dominate: its bilinear score becomes 1e6.
  DecoderParams p = f.model.decoder;
  p.pointer.value = 1e6 * h * fe.transpose() / (h.squaredNorm() * fe.squaredNorm());
  out = decode_step(st, g, cands, p);
  CHECK(out.greedy == DecodedToken{true, 1});
  CHECK(out.copy_scores[1] == doctest::Approx(1e6));

  // Scores form a proper distribution over vocabulary and candidates.
  out = decode_step(st, g, cands, f.model.decoder);
  Eigen::VectorXd all(out.vocab_scores.size() + out.copy_scores.size());
  all << out.vocab_scores, out.copy_scores;
  const Eigen::VectorXd pr = (all.array() - all.maxCoeff()).exp();
  CHECK(std::abs((pr / pr.sum()).sum() - 1.0) <= 1e-9);

  // Without an end token decoding stops at 20 tokens.
  p = f.model.decoder;
  p.vocab_head.bias.value(Vocabulary::kEnd, 0) = -1e6;
  const DecodedSentence long_out = greedy_decode(g, cands, f.vocab, p);
  CHECK(long_out.tokens.size() == 20);
  CHECK(!long_out.ended);
  CHECK(kMaxCaptionLength == 20);
}

TEST_CASE("caption_nll") {
  Fixture f(17);
  Rng rng(17);
  Eigen::VectorXd g(5);
  for (int i = 0; i < 5; ++i) g[i] = rng.normal();
  Sentence s{words("a can priced at 4.99"), {0, 0, 0, 0, 1}, 3};
  CopyCandidateSet cands;
  cands.surfaces = {"acme", "4.99"};
  cands.features.resize(8, 2);
  for (int j = 0; j < 2; ++j) cands.features.col(j) = f.vocab.surface_feature(cands.surfaces[static_cast<std::size_t>(j)]);
  const DecodedSentence target = make_target(s, f.vocab, cands);
  CHECK(target.tokens.back() == DecodedToken{true, 1});

  const double nll = caption_nll(g, cands, target, f.vocab, f.model.decoder);
  CHECK(nll >= 0.0);
  CHECK(std::abs(nll - nll_oracle(g, cands, target, f.vocab, f.model.decoder)) <= 1e-10);

  // Three-token target with a random model.
  Sentence three{words("a red can"), {0, 0, 0}, 1};
  const DecodedSentence t3 = make_target(three, f.vocab, cands);
  CHECK(std::abs(caption_nll(g, cands, t3, f.vocab, f.model.decoder) - nll_oracle(g, cands, t3, f.vocab, f.model.decoder)) <= 1e-10);

  // Uniform logits: every step costs ln(V + C).
  DecoderParams u = f.model.decoder;
  u.vocab_head.weight.value.setZero();
  u.vocab_head.bias.value.setZero();
  u.pointer.value.setZero();
  const double V = f.vocab.size() + 2;
  const double T = static_cast<double>(target.tokens.size()) + 1;
  CHECK(caption_nll(g, cands, target, f.vocab, u) == doctest::Approx(T * std::log(V)).epsilon(1e-12));

  // Engineered certainty on the end token: an empty target costs nothing.
  u.vocab_head.bias.value(Vocabulary::kEnd, 0) = 1e3;
  CHECK(caption_nll(g, cands, DecodedSentence{}, f.vocab, u) == 0.0);

  Sentence bad{words("a can priced at 9.99"), {0, 0, 0, 0, 1}, 3};
  CHECK_THROWS(make_target(bad, f.vocab, cands));
  DecodedSentence oob;
  oob.tokens.push_back({true, 5});
  CHECK_THROWS(caption_nll(g, cands, oob, f.vocab, f.model.decoder));

  // Batched evaluation equals the sum of individual losses.
  ad::Tape tape;
  Eigen::MatrixXd G(5, 2);
  G.col(0) = g;
  G.col(1) = -g;
  const double batched = caption_nll(nn::Binder{tape, false}, tape.constant(G), {&cands, &cands}, {&target, &t3},
                                     f.vocab, f.model.decoder).scalar();
  CHECK(batched == doctest::Approx(nll + caption_nll(-g, cands, t3, f.vocab, f.model.decoder)).epsilon(1e-12));

  // Small gradient steps decrease the loss monotonically.
  double prev = 1e300;
  for (int step = 0; step < 10; ++step) {
    const double l = train_step_nll(f, g, cands, target, 1e-3);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("pretrain_autoencoder memorises one sentence and learns to copy") {
  const Grammar g = test::grammar();
  SentenceCorpus corpus;
  corpus.sentences.push_back(Sentence{words("a red can priced at 7.88"), {0, 0, 0, 0, 0, 1}, 6});
  const Vocabulary vocab = build_vocabulary(corpus, 16, 2);
  PretrainOptions opt;
  opt.epochs = 200;
  opt.batch = 1;
  opt.lr = 1e-2;
  opt.eval_every = 5;
  opt.seed = 4;
  auto run = [&](SentenceModel& m) { return pretrain_autoencoder(corpus, vocab, g, m, opt); };
  Rng r1(5), r2(5);
  SentenceModel m1(16, 12, 12, 2, vocab.size(), r1), m2(16, 12, 12, 2, vocab.size(), r2);
  const auto c1 = run(m1), c2 = run(m2);
  REQUIRE(!c1.empty());
  CHECK(c1.size() == 200);
  CHECK(c1.back().exact_match == 1.0);
  CHECK(c1.back().loss == c2.back().loss);
  const ReconstructionReport rep = evaluate_reconstruction(corpus, vocab, g, m1, opt, 9);
  CHECK(rep.exact_match == 1.0);
  CHECK(rep.copy_targets == rep.copy_hits);

  // The copy token's share of the loss drops below ln 2.
  Rng cr(1);
  const CopyCandidateSet cands = sentence_candidates(corpus.sentences[0], g, vocab, 2, 0.05, cr);
  const SceneGraph sg = parse_scene_graph(corpus.sentences[0].words, g);
  const double nll = caption_nll(encode_scene_graph(sg, vocab, m1.encoder), cands,
                                 make_target(corpus.sentences[0], vocab, cands), vocab, m1.decoder);
  CHECK(nll < std::log(2.0));
}
