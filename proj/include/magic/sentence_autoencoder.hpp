#pragma once

// Sentence side: scene-graph encoder, LSTM decoder with a pointer over copy
// candidates, reconstruction loss and pretraining.

#include "magic/grammar.hpp"
#include "magic/nn.hpp"
#include "magic/vocabulary.hpp"

#include <functional>
#include <string>
#include <vector>

namespace magic {

inline constexpr int kMaxCaptionLength = 20;

// Scene-graph encoder ---------------------------------------------------------

struct SentenceEncoderParams {
  nn::Affine word_proj;  // d x raw: objects, attributes, relations
  nn::Affine text_proj;  // d x raw: copy surfaces
  /// L_g - 1 per-object layers binding attachments to their object.
  std::vector<ad::Parameter> W0, W1;  // d x d
  ad::Parameter W_c0, W_c1;            // e x d

  SentenceEncoderParams() = default;
  SentenceEncoderParams(int raw_dim, int d, int e, int L_g, Rng& rng);
  std::vector<ad::Parameter*> parameters();
  int d() const { return static_cast<int>(word_proj.out_dim()); }
  int e() const { return static_cast<int>(W_c0.value.rows()); }
};

/// Batched encoding; column b is the embedding of graphs[b] (e x B).
ad::Var encode_scene_graphs(const nn::Binder& b, const std::vector<const SceneGraph*>& graphs, const Vocabulary& vocab,
                            SentenceEncoderParams& params);

Eigen::VectorXd encode_scene_graph(const SceneGraph& graph, const Vocabulary& vocab, SentenceEncoderParams& params);

// Decoder ---------------------------------------------------------------------

struct CopyCandidateSet {
  std::vector<std::string> surfaces;
  Eigen::MatrixXd features;  // raw x C

  std::size_t size() const { return surfaces.size(); }
  int find(const std::string& surface) const;
};

CopyCandidateSet candidates_from_scene(const MultimodalScene& scene);

struct DecodedToken {
  bool copy = false;
  int index = 0;  // vocabulary id, or candidate index when copy
  bool operator==(const DecodedToken&) const = default;
};

struct DecodedSentence {
  std::vector<DecodedToken> tokens;  // without begin/end markers
  std::vector<std::string> surfaces;
  bool ended = false;  // emitted the end token (as opposed to hitting the length cap)

  std::string text() const;
};

/// Resolves a corpus sentence against the vocabulary and candidates. Copy
/// words must be present among the candidates, other words in the vocabulary.
DecodedSentence make_target(const Sentence& sentence, const Vocabulary& vocab, const CopyCandidateSet& candidates);

struct DecoderParams {
  nn::Affine input_proj;  // d x raw, previous token feature
  nn::LstmCell cell;      // input d + e, hidden d
  nn::Affine init;        // d x e, h0 = tanh(init(g))
  nn::Affine vocab_head;  // V x d
  ad::Parameter pointer;  // d x raw, bilinear copy scorer

  DecoderParams() = default;
  DecoderParams(int raw_dim, int d, int e, int vocab_size, Rng& rng);
  std::vector<ad::Parameter*> parameters();
  int d() const { return static_cast<int>(input_proj.out_dim()); }
  int vocab_size() const { return static_cast<int>(vocab_head.out_dim()); }
};

struct DecoderState {
  Eigen::VectorXd h, c;
  Eigen::VectorXd input;  // raw feature of the previous token
};

DecoderState initial_state(const Eigen::VectorXd& g, const Vocabulary& vocab, DecoderParams& params);

struct StepOutput {
  DecoderState next;  // next.input is left for the caller to fill
  Eigen::VectorXd vocab_scores;
  Eigen::VectorXd copy_scores;
  DecodedToken greedy;
};

StepOutput decode_step(const DecoderState& state, const Eigen::VectorXd& g, const CopyCandidateSet& candidates,
                       DecoderParams& params);

DecodedSentence greedy_decode(const Eigen::VectorXd& g, const CopyCandidateSet& candidates, const Vocabulary& vocab,
                              DecoderParams& params, int max_length = kMaxCaptionLength);

/// Sum over the batch of -log P(target) under teacher forcing (1 x 1). Every
/// target is terminated by the end token.
ad::Var caption_nll(const nn::Binder& b, ad::Var G, const std::vector<const CopyCandidateSet*>& candidates,
                    const std::vector<const DecodedSentence*>& targets, const Vocabulary& vocab, DecoderParams& params);

double caption_nll(const Eigen::VectorXd& g, const CopyCandidateSet& candidates, const DecodedSentence& target,
                   const Vocabulary& vocab, DecoderParams& params);

/// Relaxed decoding: each step feeds back the probability-weighted mixture of
/// token features. Returns per step the mixture (raw x B); column b is only
/// meaningful for steps < lengths[b].
std::vector<ad::Var> soft_decode(const nn::Binder& b, ad::Var G, const std::vector<const CopyCandidateSet*>& candidates,
                                 const std::vector<int>& lengths, const Vocabulary& vocab, DecoderParams& params);

// Pretraining -----------------------------------------------------------------

struct SentenceModel {
  SentenceEncoderParams encoder;
  DecoderParams decoder;

  SentenceModel() = default;
  SentenceModel(int raw_dim, int d, int e, int L_g, int vocab_size, Rng& rng)
      : encoder(raw_dim, d, e, L_g, rng), decoder(raw_dim, d, e, vocab_size, rng) {}
  std::vector<ad::Parameter*> parameters();
};

struct PretrainOptions {
  int epochs = 60;
  int batch = 32;
  double lr = 1e-3;
  double clip_norm = 5.0;
  /// Extra copy candidates per sentence drawn from the grammar's text kinds.
  int distractor_candidates = 2;
  /// Noise added to candidate features, matching scene tokens.
  double candidate_noise = 0.05;
  /// Stop once training exact-match reaches this value (checked every eval_every epochs).
  double target_exact_match = 1.01;
  int eval_every = 5;
  std::uint64_t seed = 0;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss = 0.0;        // mean NLL per sentence
  double exact_match = -1;  // -1 when not evaluated this epoch
};

struct ReconstructionReport {
  double exact_match = 0.0;
  /// Copy-slot occurrences and how many were emitted through the pointer
  /// with the right surface at the right position.
  long copy_targets = 0;
  long copy_hits = 0;
};

/// Copy candidates of a corpus sentence: its own copy surfaces plus
/// distractors, shuffled, features perturbed by `noise`.
CopyCandidateSet sentence_candidates(const Sentence& s, const Grammar& grammar, const Vocabulary& vocab,
                                     int distractors, double noise, Rng& rng);

std::vector<PretrainEpoch> pretrain_autoencoder(const SentenceCorpus& corpus, const Vocabulary& vocab,
                                                const Grammar& grammar, SentenceModel& model,
                                                const PretrainOptions& opt,
                                                const std::function<void(const PretrainEpoch&)>& on_epoch = {});

ReconstructionReport evaluate_reconstruction(const SentenceCorpus& corpus, const Vocabulary& vocab,
                                             const Grammar& grammar, SentenceModel& model, const PretrainOptions& opt,
                                             std::uint64_t seed);

}  // namespace magic
