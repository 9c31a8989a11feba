#include "magic/language_discriminator.hpp"

#include "magic/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace magic {

using ad::Matrix;
using ad::Var;

namespace {

Sentence repeat_phrase(const Sentence& s, Rng& rng) {
  const int n = static_cast<int>(s.words.size());
  const int len = rng.uniform_int(1, std::min(3, n));
  const int start = rng.uniform_int(0, n - len);
  Sentence out = s;
  const auto at = static_cast<std::ptrdiff_t>(start + len);
  out.words.insert(out.words.begin() + at, s.words.begin() + start, s.words.begin() + start + len);
  out.copy.insert(out.copy.begin() + at, s.copy.begin() + start, s.copy.begin() + start + len);
  return out;
}

}  // namespace

Sentence corrupt_sentence(const Sentence& sentence, Rng& rng) {
  const std::size_t n = sentence.words.size();
  if (n == 0) throw std::invalid_argument("corrupt_sentence: empty sentence");
  const bool shuffle = n >= 2 && rng.bernoulli(0.5);
  const bool all_same = std::all_of(sentence.words.begin(), sentence.words.end(),
                                    [&](const std::string& w) { return w == sentence.words.front(); });
  if (!shuffle || all_same) return repeat_phrase(sentence, rng);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Sentence out = sentence;
  for (int attempt = 0; attempt < 64; ++attempt) {
    rng.shuffle(perm);
    for (std::size_t i = 0; i < n; ++i) {
      out.words[i] = sentence.words[perm[i]];
      out.copy[i] = sentence.copy[perm[i]];
    }
    if (out.words != sentence.words) return out;
  }
  // Pathological token multisets: swap the first pair of differing words.
  out = sentence;
  for (std::size_t i = 1; i < n; ++i) {
    if (out.words[i] != out.words[0]) {
      std::swap(out.words[0], out.words[i]);
      std::swap(out.copy[0], out.copy[i]);
      break;
    }
  }
  return out;
}

LanguageDiscriminator::LanguageDiscriminator(int raw_dim, int hidden, Rng& rng)
    : input_proj("lang.input_proj", hidden, raw_dim, rng),
      forward("lang.forward", hidden, hidden, rng),
      backward("lang.backward", hidden, hidden, rng),
      head("lang.head", 1, 2 * hidden, rng) {}

std::vector<ad::Parameter*> LanguageDiscriminator::parameters() {
  std::vector<ad::Parameter*> p;
  input_proj.collect(p);
  forward.collect(p);
  backward.collect(p);
  head.collect(p);
  return p;
}

Var LanguageDiscriminator::logits(const nn::Binder& b, const std::vector<Var>& steps, const std::vector<int>& lengths) {
  if (steps.empty() || lengths.empty()) throw std::invalid_argument("language discriminator: empty batch");
  ad::Tape& t = b.tape;
  const auto B = static_cast<Eigen::Index>(lengths.size());
  const Eigen::Index h = forward.hidden;
  std::vector<Var> x;
  std::vector<Matrix> mask;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    x.push_back(input_proj(b, steps[s]));
    Matrix m(1, B);
    for (Eigen::Index j = 0; j < B; ++j) m(0, j) = static_cast<int>(s) < lengths[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    mask.push_back(std::move(m));
  }
  nn::LstmCell::State fw{t.constant(Matrix::Zero(h, B)), t.constant(Matrix::Zero(h, B))};
  nn::LstmCell::State bw = fw;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    auto next = forward.step(b, x[s], fw);
    fw = {nn::blend_columns(t, next.h, fw.h, mask[s]), nn::blend_columns(t, next.c, fw.c, mask[s])};
  }
  for (std::size_t s = steps.size(); s-- > 0;) {
    auto next = backward.step(b, x[s], bw);
    bw = {nn::blend_columns(t, next.h, bw.h, mask[s]), nn::blend_columns(t, next.c, bw.c, mask[s])};
  }
  return head(b, ad::concat_rows({fw.h, bw.h}));
}

Eigen::MatrixXd sentence_features(const Sentence& s, const Vocabulary& vocab) {
  Eigen::MatrixXd f(vocab.embedding_dim, static_cast<Eigen::Index>(s.words.size()));
  for (std::size_t i = 0; i < s.words.size(); ++i)
    f.col(static_cast<Eigen::Index>(i)) =
        s.copy[i] ? vocab.surface_feature(s.words[i]) : Eigen::VectorXd(vocab.embeddings.col(vocab.id(s.words[i])));
  return f;
}

std::vector<Var> pack_sentences(ad::Tape& tape, const std::vector<const Sentence*>& batch, const Vocabulary& vocab,
                                std::vector<int>& lengths) {
  lengths.clear();
  std::size_t steps = 0;
  for (const Sentence* s : batch) {
    if (s->words.empty()) throw std::invalid_argument("language discriminator: empty sentence");
    lengths.push_back(static_cast<int>(s->words.size()));
    steps = std::max(steps, s->words.size());
  }
  const auto B = static_cast<Eigen::Index>(batch.size());
  std::vector<Matrix> cols(steps, Matrix::Zero(vocab.embedding_dim, B));
  for (Eigen::Index j = 0; j < B; ++j) {
    const Eigen::MatrixXd f = sentence_features(*batch[static_cast<std::size_t>(j)], vocab);
    for (Eigen::Index s = 0; s < f.cols(); ++s) cols[static_cast<std::size_t>(s)].col(j) = f.col(s);
  }
  std::vector<Var> out;
  for (auto& m : cols) out.push_back(tape.constant(std::move(m)));
  return out;
}

Var language_discriminator_loss(const nn::Binder& b, LanguageDiscriminator& dl, const std::vector<const Sentence*>& real,
                                const std::vector<const Sentence*>& corrupted, const Vocabulary& vocab,
                                double lambda_L) {
  if (real.empty() || corrupted.empty()) throw std::invalid_argument("language_discriminator_loss: empty batch");
  std::vector<int> len_real, len_fake;
  Var z_real = dl.logits(b, pack_sentences(b.tape, real, vocab, len_real), len_real);
  Var z_fake = dl.logits(b, pack_sentences(b.tape, corrupted, vocab, len_fake), len_fake);
  Var loss = ad::add(ad::mean(ad::log_sigmoid(z_real)), ad::mean(ad::log_sigmoid(ad::scale(z_fake, -1.0))));
  return ad::scale(loss, -lambda_L);
}

std::vector<double> discriminate(LanguageDiscriminator& dl, const std::vector<const Sentence*>& batch,
                                 const Vocabulary& vocab) {
  ad::Tape t;
  nn::Binder b{t, false};
  std::vector<int> lengths;
  Var z = dl.logits(b, pack_sentences(t, batch, vocab, lengths), lengths);
  std::vector<double> out;
  for (Eigen::Index j = 0; j < z.cols(); ++j) out.push_back(1.0 / (1.0 + std::exp(-z.value()(0, j))));
  return out;
}

double discriminator_accuracy(LanguageDiscriminator& dl, const std::vector<const Sentence*>& sentences,
                              const Vocabulary& vocab, std::uint64_t seed) {
  if (sentences.empty()) return 0.0;
  Rng rng(seed);
  std::vector<Sentence> corrupted;
  for (const Sentence* s : sentences) corrupted.push_back(corrupt_sentence(*s, rng));
  long correct = 0;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < sentences.size(); start += chunk) {
    const std::size_t end = std::min(sentences.size(), start + chunk);
    std::vector<const Sentence*> real(sentences.begin() + static_cast<std::ptrdiff_t>(start),
                                      sentences.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<const Sentence*> fake;
    for (std::size_t i = start; i < end; ++i) fake.push_back(&corrupted[i]);
    for (double p : discriminate(dl, real, vocab)) correct += p > 0.5;
    for (double p : discriminate(dl, fake, vocab)) correct += p < 0.5;
  }
  return static_cast<double>(correct) / static_cast<double>(2 * sentences.size());
}

std::vector<LanguagePretrainEpoch> pretrain_language_discriminator(
    const SentenceCorpus& corpus, const Vocabulary& vocab, LanguageDiscriminator& dl,
    const LanguagePretrainOptions& opt, const std::function<void(const LanguagePretrainEpoch&)>& on_epoch) {
  if (corpus.sentences.size() < 2) throw std::invalid_argument("language pretraining needs at least two sentences");
  Rng root(opt.seed);
  Rng split_rng = root.substream("split");
  Rng shuffle_rng = root.substream("shuffle");
  Rng corruption_rng = root.substream("corruption");
  const std::uint64_t holdout_seed = substream_seed(opt.seed, "holdout");

  std::vector<std::size_t> idx(corpus.sentences.size());
  std::iota(idx.begin(), idx.end(), 0);
  split_rng.shuffle(idx);
  auto n_hold = static_cast<std::size_t>(std::lround(opt.holdout_fraction * static_cast<double>(idx.size())));
  n_hold = std::clamp<std::size_t>(n_hold, 1, idx.size() - 1);
  std::vector<const Sentence*> holdout, train;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_hold ? holdout : train).push_back(&corpus.sentences[idx[i]]);

  nn::Adam adam(dl.parameters(), {opt.lr, 0.9, 0.999, 1e-8, opt.clip_norm});
  std::vector<LanguagePretrainEpoch> curve;
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    shuffle_rng.shuffle(train);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(opt.batch)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(opt.batch));
      std::vector<const Sentence*> real(train.begin() + static_cast<std::ptrdiff_t>(start),
                                        train.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<Sentence> fake_store;
      for (const Sentence* s : real) fake_store.push_back(corrupt_sentence(*s, corruption_rng));
      std::vector<const Sentence*> fake;
      for (const auto& s : fake_store) fake.push_back(&s);
      ad::Tape t;
      nn::Binder b{t, true};
      Var loss = language_discriminator_loss(b, dl, real, fake, vocab, 1.0);
      if (!std::isfinite(loss.scalar())) throw DivergenceError("language discriminator: non-finite loss");
      total += loss.scalar();
      ++batches;
      adam.zero_grad();
      t.backward(loss);
      adam.step();
    }
    LanguagePretrainEpoch rec{epoch, total / std::max(1, batches), discriminator_accuracy(dl, holdout, vocab, holdout_seed)};
    curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return curve;
}

}  // namespace magic
