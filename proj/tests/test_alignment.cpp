#include "magic/alignment.hpp"
#include "magic/language_discriminator.hpp"
#include "magic/rng.hpp"
#include "magic/train_magic.hpp"
#include "oracles/loops.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace magic;
using oracle::Vec;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, Rng& rng) {
  Eigen::MatrixXd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

Vec tanh_v(Vec v) {
  for (double& x : v) x = std::tanh(x);
  return v;
}

double critic_oracle(Critic& c, const Vec& x) {
  const Vec a1 = tanh_v(oracle::affine(c.l1.weight.value, c.l1.bias.value, x));
  const Vec a2 = tanh_v(oracle::affine(c.l2.weight.value, c.l2.bias.value, a1));
  return oracle::affine(c.l3.weight.value, c.l3.bias.value, a2)[0];
}

// d critic / d x by the chain rule, written out with loops.
Vec critic_input_grad(Critic& c, const Vec& x) {
  const Vec a1 = tanh_v(oracle::affine(c.l1.weight.value, c.l1.bias.value, x));
  const Vec a2 = tanh_v(oracle::affine(c.l2.weight.value, c.l2.bias.value, a1));
  Vec g2(a2.size()), g1(a1.size(), 0.0), gx(x.size(), 0.0);
  for (std::size_t k = 0; k < a2.size(); ++k) g2[k] = (1 - a2[k] * a2[k]) * c.l3.weight.value(0, static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < a1.size(); ++j) {
    for (std::size_t k = 0; k < a2.size(); ++k) g1[j] += c.l2.weight.value(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) * g2[k];
    g1[j] *= 1 - a1[j] * a1[j];
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < a1.size(); ++j) gx[i] += c.l1.weight.value(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) * g1[j];
  return gx;
}

Vec col(const Eigen::MatrixXd& m, Eigen::Index j) { return oracle::to_vec(m.col(j)); }

Vec mapper_oracle(Mapper& m, const Vec& x) {
  return oracle::plus(oracle::affine(m.skip.weight.value, m.skip.bias.value, x),
                      oracle::affine(m.out.weight.value, m.out.bias.value,
                                     tanh_v(oracle::affine(m.hidden.weight.value, m.hidden.bias.value, x))));
}

Vec sigmoid(Vec v) {
  for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
  return v;
}

void lstm_step(nn::LstmCell& cell, const Vec& x, Vec& h, Vec& c) {
  Vec in = x;
  in.insert(in.end(), h.begin(), h.end());
  const Vec z = oracle::affine(cell.weight.value, cell.bias.value, in);
  const std::size_t n = h.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double i = 1 / (1 + std::exp(-z[k])), f = 1 / (1 + std::exp(-z[n + k])), g = std::tanh(z[2 * n + k]),
                 o = 1 / (1 + std::exp(-z[3 * n + k]));
    c[k] = f * c[k] + i * g;
    h[k] = o * std::tanh(c[k]);
  }
}

double dl_oracle(LanguageDiscriminator& dl, const Sentence& s, const Vocabulary& vocab) {
  const Eigen::MatrixXd f = sentence_features(s, vocab);
  std::vector<Vec> xs;
  for (Eigen::Index t = 0; t < f.cols(); ++t)
    xs.push_back(oracle::affine(dl.input_proj.weight.value, dl.input_proj.bias.value, col(f, t)));
  const std::size_t h = static_cast<std::size_t>(dl.forward.hidden);
  Vec fh(h, 0.0), fc(h, 0.0), bh(h, 0.0), bc(h, 0.0);
  for (const auto& x : xs) lstm_step(dl.forward, x, fh, fc);
  for (auto it = xs.rbegin(); it != xs.rend(); ++it) lstm_step(dl.backward, *it, bh, bc);
  fh.insert(fh.end(), bh.begin(), bh.end());
  return 1.0 / (1.0 + std::exp(-oracle::affine(dl.head.weight.value, dl.head.bias.value, fh)[0]));
}

std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

TEST_CASE("critic_loss") {
  Rng rng(19);
  Critic c("c", 3, 4, rng);
  const Eigen::MatrixXd real = random_matrix(3, 2, rng), fake = random_matrix(3, 2, rng);
  const Eigen::RowVectorXd mix = Eigen::RowVector2d(0.3, 0.8);
  ad::Tape t;
  nn::Binder b{t, false};
  const CriticTerms terms = critic_loss(b, c, t.constant(real), t.constant(fake), 10.0, mix);

  const double gap = 0.5 * (critic_oracle(c, col(real, 0)) + critic_oracle(c, col(real, 1))) -
                     0.5 * (critic_oracle(c, col(fake, 0)) + critic_oracle(c, col(fake, 1)));
  double pen = 0;
  for (int i = 0; i < 2; ++i) {
    const Vec xh = oracle::plus(oracle::times(col(real, i), mix[i]), oracle::times(col(fake, i), 1 - mix[i]));
    const Vec g = critic_input_grad(c, xh);
    pen += std::pow(std::sqrt(oracle::dot(g, g)) - 1.0, 2) / 2.0;
  }
  CHECK(std::abs(terms.gap.scalar() - gap) <= 1e-10);
  CHECK(std::abs(terms.penalty.scalar() - pen) <= 1e-10);
  CHECK(std::abs(terms.loss.scalar() - (-gap + 10.0 * pen)) <= 1e-10);

  // Antisymmetry of the gap and zero gap on identical batches.
  const CriticTerms swapped = critic_loss(b, c, t.constant(fake), t.constant(real), 10.0, mix);
  CHECK(swapped.gap.scalar() == doctest::Approx(-terms.gap.scalar()).epsilon(1e-14));
  CHECK(critic_loss(b, c, t.constant(real), t.constant(real), 10.0, mix).gap.scalar() == 0.0);

  // A constant critic has zero gap.
  Critic k = c;
  k.l3.weight.value.setZero();
  CHECK(critic_loss(b, k, t.constant(real), t.constant(fake), 10.0, mix).gap.scalar() == 0.0);

  CHECK_THROWS(critic_loss(b, c, t.constant(real), t.constant(random_matrix(2, 2, rng)), 10.0, mix));
  CHECK(generator_loss(b, c, t.constant(fake)).scalar() ==
        doctest::Approx(-0.5 * (critic_oracle(c, col(fake, 0)) + critic_oracle(c, col(fake, 1)))).epsilon(1e-12));
}

TEST_CASE("cycle_alignment_loss") {
  Rng rng(23);
  Mapper is("is", 4, 3, 5, rng, false), si("si", 3, 4, 5, rng, false);
  Critic di("di", 4, 5, rng), ds("ds", 3, 5, rng);
  AlignmentModules m{is, si, di, ds};
  const Eigen::MatrixXd gi = random_matrix(4, 3, rng), gs = random_matrix(3, 3, rng);
  ad::Tape t;
  nn::Binder b{t, false};
  const AlignmentTerms terms = cycle_alignment_loss(b, b, t.constant(gi), t.constant(gs), m, 0.7, 10.0);

  double adv_i = 0, adv_s = 0, cyc_i = 0, cyc_s = 0;
  for (int j = 0; j < 3; ++j) {
    const Vec mi = mapper_oracle(is, col(gi, j)), ms = mapper_oracle(si, col(gs, j));
    adv_i -= critic_oracle(ds, mi) / 3.0;
    adv_s -= critic_oracle(di, ms) / 3.0;
    const Vec bi = mapper_oracle(si, mi), bs = mapper_oracle(is, ms);
    for (int r = 0; r < 4; ++r) cyc_i += std::abs(bi[static_cast<std::size_t>(r)] - gi(r, j)) / 12.0;
    for (int r = 0; r < 3; ++r) cyc_s += std::abs(bs[static_cast<std::size_t>(r)] - gs(r, j)) / 9.0;
  }
  CHECK(std::abs(terms.adv_image.scalar() - adv_i) <= 1e-10);
  CHECK(std::abs(terms.adv_sentence.scalar() - adv_s) <= 1e-10);
  CHECK(std::abs(terms.cycle.scalar() - (cyc_i + cyc_s)) <= 1e-10);
  CHECK(std::abs(terms.total.scalar() - 0.7 * (adv_i + adv_s + 10.0 * (cyc_i + cyc_s))) <= 1e-10);
  CHECK(terms.cycle.scalar() >= 0.0);

  CHECK(cycle_alignment_loss(b, b, t.constant(gi), t.constant(gs), m, 0.0, 10.0).total.scalar() == 0.0);

  Mapper a("a", 3, 3, 4, rng), c("c", 3, 3, 4, rng);
  a.set_identity();
  c.set_identity();
  Critic d1("d1", 3, 4, rng), d2("d2", 3, 4, rng);
  const Eigen::MatrixXd x = random_matrix(3, 3, rng);
  CHECK(cycle_alignment_loss(b, b, t.constant(x), t.constant(gs), {a, c, d1, d2}, 1.0, 10.0).cycle.scalar() == 0.0);
}

TEST_CASE("corrupt_sentence") {
  Rng rng(31);
  Sentence one{{"a"}, {0}, 0};
  const Sentence r = corrupt_sentence(one, rng);
  CHECK(r.words == std::vector<std::string>{"a", "a"});
  CHECK(r.copy.size() == 2);

  const auto corpus = generate_sentence_corpus(3, test::grammar(), 300);
  int shuffles = 0;
  for (const auto& s : corpus.sentences) {
    const Sentence c = corrupt_sentence(s, rng);
    CHECK(c.words != s.words);
    CHECK(c.words.size() == c.copy.size());
    shuffles += c.words.size() == s.words.size();
  }
  CHECK(shuffles > 100);
  CHECK(shuffles < 200);
  Sentence same{{"a", "a", "a"}, {0, 0, 0}, 0};
  CHECK(corrupt_sentence(same, rng).words != same.words);

  Rng a(5), b(5);
  for (const auto& s : corpus.sentences) CHECK(corrupt_sentence(s, a) == corrupt_sentence(s, b));
}

TEST_CASE("language_discriminator_loss") {
  const auto corpus = generate_sentence_corpus(3, test::grammar(), 20);
  const Vocabulary vocab = build_vocabulary(corpus, 8, 1);
  Rng rng(29);
  LanguageDiscriminator dl(8, 3, rng);
  Rng cr(2);
  const Sentence c0 = corrupt_sentence(corpus.sentences[0], cr), c1 = corrupt_sentence(corpus.sentences[1], cr);
  std::vector<const Sentence*> real = {&corpus.sentences[2], &corpus.sentences[3]}, fake = {&c0, &c1};

  ad::Tape t;
  nn::Binder b{t, false};
  const double loss = language_discriminator_loss(b, dl, real, fake, vocab, 0.5).scalar();
  double expect = 0;
  for (const Sentence* s : real) expect -= std::log(dl_oracle(dl, *s, vocab)) / 2.0;
  for (const Sentence* s : fake) expect -= std::log(1.0 - dl_oracle(dl, *s, vocab)) / 2.0;
  CHECK(std::abs(loss - 0.5 * expect) <= 1e-10);
  const auto probs = discriminate(dl, real, vocab);
  CHECK(std::abs(probs[0] - dl_oracle(dl, *real[0], vocab)) <= 1e-12);
  CHECK(probs[1] > 0.0);
  CHECK(probs[1] < 1.0);

  CHECK(language_discriminator_loss(b, dl, real, fake, vocab, 0.0).scalar() == 0.0);

  LanguageDiscriminator half = dl;
  half.head.weight.value.setZero();
  half.head.bias.value.setZero();
  CHECK(language_discriminator_loss(b, half, real, fake, vocab, 0.5).scalar() ==
        doctest::Approx(0.5 * 2.0 * std::log(2.0)).epsilon(1e-14));
}

namespace {

struct Setup {
  Grammar grammar = test::grammar();
  SentenceCorpus corpus = generate_sentence_corpus(4, grammar, 60);
  Vocabulary vocab = build_vocabulary(corpus, 12, 7);
  SceneSet scenes;
  ModelConfig cfg;

  Setup() {
    SceneConfig sc = test::scene_config(12);
    sc.word_seed = 7;
    for (auto& g : generate_scenes(1, 12, sc, grammar, "s_")) scenes.scenes.push_back(g.scene);
    cfg.raw_dim = 12;
    cfg.d = cfg.e = 6;
    cfg.mapper_hidden = cfg.critic_hidden = 6;
    cfg.lang_hidden = 4;
  }

  TrainOptions options() const {
    TrainOptions o;
    o.iterations = 4;
    o.scene_batch = 4;
    o.n_critic = 2;
    o.critic_warmup = 1;
    o.warmup_critic_steps = 3;
    o.lang_batch = 2;
    o.seed = 11;
    return o;
  }
};

std::vector<Eigen::MatrixXd> snapshot(const std::vector<ad::Parameter*>& ps) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto* p : ps) out.push_back(p->value);
  return out;
}

}  // namespace

TEST_CASE("train_magic: null objective, frozen decoder, determinism") {
  Setup s;
  CaptionModel model(s.cfg, s.vocab, 3);
  auto mappers = model.image_to_sentence.parameters();
  for (auto* p : model.sentence_to_image.parameters()) mappers.push_back(p);
  const auto mappers0 = snapshot(mappers);
  const auto sentence0 = snapshot(model.sentence.parameters());
  const auto language0 = snapshot(model.language.parameters());

  TrainOptions opt = s.options();
  opt.lambda_A = 0.0;
  opt.lambda_L = 0.0;
  const auto log = train_magic(s.scenes, s.corpus, s.grammar, model, opt);
  CHECK(log.size() == 4);
  CHECK(snapshot(mappers) == mappers0);
  CHECK(snapshot(model.sentence.parameters()) == sentence0);

  CaptionModel a(s.cfg, s.vocab, 3), b(s.cfg, s.vocab, 3);
  const auto la = train_magic(s.scenes, s.corpus, s.grammar, a, s.options());
  const auto lb = train_magic(s.scenes, s.corpus, s.grammar, b, s.options());
  CHECK(snapshot(a.parameters()) == snapshot(b.parameters()));
  CHECK(la.back().cycle == lb.back().cycle);
  CHECK(snapshot(a.sentence.parameters()) == sentence0);
  CHECK(snapshot(a.language.parameters()) == language0);
  CHECK(snapshot(a.image_to_sentence.parameters()) != snapshot(CaptionModel(s.cfg, s.vocab, 3).image_to_sentence.parameters()));

  for (const auto& row : la) {
    CHECK(std::isfinite(row.critic_loss));
    CHECK(row.cycle >= 0.0);
  }
}

TEST_CASE("train_magic: divergence guard") {
  Setup s;
  CaptionModel model(s.cfg, s.vocab, 3);
  TrainOptions opt = s.options();
  opt.lambda_C = 1e9;
  CHECK_THROWS_AS(train_magic(s.scenes, s.corpus, s.grammar, model, opt), DivergenceError);
}

TEST_CASE("generate_captions and checkpoints") {
  Setup s;
  CaptionModel model(s.cfg, s.vocab, 5);
  const MultimodalScene& scene = s.scenes.scenes[0];
  CHECK(generate_captions(scene, model, 1).size() == 1);
  const auto three = generate_captions(scene, model, 3);
  CHECK(three.size() == std::min<std::size_t>(3, scene.objects.size()));
  for (const auto& c : three) CHECK(c.tokens.size() <= 20);

  train_magic(s.scenes, s.corpus, s.grammar, model, s.options());
  const auto dir = test::temp_dir("ckpt");
  save_model(dir / "m.bin", model);
  CaptionModel back = load_model(dir / "m.bin");
  CHECK(snapshot(back.parameters()) == snapshot(model.parameters()));
  CHECK(back.vocab == model.vocab);
  CHECK(back.config.to_json() == model.config.to_json());
  for (std::size_t k = 0; k < three.size(); ++k)
    CHECK(generate_captions(scene, back, 3)[k].text() == generate_captions(scene, model, 3)[k].text());
}

TEST_CASE("copy surfaces reach generated captions") {
  // Sentence decoder trained on a copy-heavy grammar emits an unseen price
  // string that is present only among the scene tokens.
  nlohmann::json gj = test::grammar_json();
  gj["templates"] = {"a <noun> priced at <text:price>"};
  gj["text_kinds"]["price"]["pattern"] = "##.##";
  const Grammar g = Grammar::from_json(gj);
  const auto corpus = generate_sentence_corpus(1, g, 80);
  const Vocabulary vocab = build_vocabulary(corpus, 16, 7);
  ModelConfig cfg;
  cfg.raw_dim = 16;
  cfg.d = cfg.e = 16;
  cfg.mapper_hidden = cfg.critic_hidden = 8;
  cfg.lang_hidden = 4;
  CaptionModel model(cfg, vocab, 2);
  PretrainOptions po;
  po.epochs = 40;
  po.lr = 5e-3;
  po.seed = 3;
  pretrain_autoencoder(corpus, vocab, g, model.sentence, po);

  SceneConfig sc = test::scene_config(16);
  sc.word_seed = 7;
  sc.min_tokens = 1;
  MultimodalScene scene = generate_scene(12, sc, g).scene;
  for (auto& t : scene.tokens) {
    t.surface = "17.88";
    t.feature = surface_embedding("17.88", 16, 7);
  }
  // The mapped image embedding is replaced by the encoding of a matching graph.
  const SceneGraph sg = parse_scene_graph(words("a can priced at 17.88"), g);
  const Eigen::VectorXd gs = encode_scene_graph(sg, vocab, model.sentence.encoder);
  const DecodedSentence out = greedy_decode(gs, candidates_from_scene(scene), vocab, model.sentence.decoder);
  CHECK(out.text().find("17.88") != std::string::npos);
}
