#pragma once

// Bidirectional LSTM classifier of fluent versus corrupted sentences.

#include "magic/data_model.hpp"
#include "magic/nn.hpp"
#include "magic/vocabulary.hpp"

#include <functional>
#include <vector>

namespace magic {

/// With probability 1/2 shuffles the tokens (never returning the input
/// order), otherwise duplicates a random phrase of 1-3 tokens in place.
/// Length-1 sentences, and sentences whose shuffles all coincide with the
/// input, always use the repetition.
Sentence corrupt_sentence(const Sentence& sentence, Rng& rng);

struct LanguageDiscriminator {
  nn::Affine input_proj;  // h x raw
  nn::LstmCell forward, backward;
  nn::Affine head;  // 1 x 2h

  LanguageDiscriminator() = default;
  LanguageDiscriminator(int raw_dim, int hidden, Rng& rng);
  std::vector<ad::Parameter*> parameters();

  /// Logits (1 x B) for a batch given per-step token features (raw x B) and
  /// per-column lengths; steps beyond a column's length are ignored.
  ad::Var logits(const nn::Binder& b, const std::vector<ad::Var>& steps, const std::vector<int>& lengths);
};

/// Per-token raw features of a sentence: vocabulary embeddings for grammar
/// words, surface embeddings for copy words.
Eigen::MatrixXd sentence_features(const Sentence& s, const Vocabulary& vocab);

/// Packs sentences into per-step constants on `tape`.
std::vector<ad::Var> pack_sentences(ad::Tape& tape, const std::vector<const Sentence*>& batch, const Vocabulary& vocab,
                                    std::vector<int>& lengths);

/// lambda_L * (-mean log D(real) - mean log(1 - D(corrupted))).
ad::Var language_discriminator_loss(const nn::Binder& b, LanguageDiscriminator& dl,
                                    const std::vector<const Sentence*>& real,
                                    const std::vector<const Sentence*>& corrupted, const Vocabulary& vocab,
                                    double lambda_L);

/// D(s) for each sentence.
std::vector<double> discriminate(LanguageDiscriminator& dl, const std::vector<const Sentence*>& batch,
                                 const Vocabulary& vocab);

struct LanguagePretrainOptions {
  int epochs = 10;
  int batch = 32;
  double lr = 1e-3;
  double clip_norm = 5.0;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct LanguagePretrainEpoch {
  int epoch = 0;
  double loss = 0.0;
  double holdout_accuracy = 0.0;
};

/// Trains on a split of the corpus against fresh corruptions each epoch and
/// reports accuracy on the held-out split (real vs corrupted, threshold 1/2).
std::vector<LanguagePretrainEpoch> pretrain_language_discriminator(
    const SentenceCorpus& corpus, const Vocabulary& vocab, LanguageDiscriminator& dl,
    const LanguagePretrainOptions& opt, const std::function<void(const LanguagePretrainEpoch&)>& on_epoch = {});

/// Accuracy on `sentences` and one corruption of each.
double discriminator_accuracy(LanguageDiscriminator& dl, const std::vector<const Sentence*>& sentences,
                              const Vocabulary& vocab, std::uint64_t seed);

}  // namespace magic
