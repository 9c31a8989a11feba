#pragma once

// The full caption model, its staged unpaired training and inference.

#include "magic/alignment.hpp"
#include "magic/language_discriminator.hpp"
#include "magic/mrg_encoder.hpp"
#include "magic/sentence_autoencoder.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>

namespace magic {

struct ModelConfig {
  int raw_dim = 300;
  int d = 128;
  int e = 128;
  int K_rel = 5;
  int L_g = 2;
  int N_k = 3;
  double epsilon = 0.1;
  int mapper_hidden = 128;
  int critic_hidden = 128;
  int lang_hidden = 64;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  EncoderConfig encoder() const { return {raw_dim, d, K_rel, L_g, epsilon}; }
};

struct CaptionModel {
  ModelConfig config;
  Vocabulary vocab;
  EncoderParams image_encoder;
  SentenceModel sentence;  // theta_S: frozen during unpaired training
  Mapper image_to_sentence;
  Mapper sentence_to_image;
  Critic image_critic;
  Critic sentence_critic;
  LanguageDiscriminator language;

  CaptionModel() = default;
  CaptionModel(const ModelConfig& cfg, Vocabulary vocab, std::uint64_t seed);

  /// Every parameter, in a fixed order with unique names.
  std::vector<ad::Parameter*> parameters();
  std::vector<ad::Parameter*> generator_parameters();  // image encoder + mappers
  std::vector<ad::Parameter*> critic_parameters();
  AlignmentModules alignment() {
    return {image_to_sentence, sentence_to_image, image_critic, sentence_critic};
  }

  /// Initialises the image encoder from the pretrained sentence encoder:
  /// projections are copied, GCN layers copied where shapes agree, and the
  /// neighbour-node weights are scaled down.
  void warm_start_image_encoder();
};

void save_model(const std::filesystem::path& path, CaptionModel& model);
CaptionModel load_model(const std::filesystem::path& path);

struct TrainOptions {
  int iterations = 2000;
  int scene_batch = 16;
  int n_critic = 5;
  /// The first critic_warmup iterations run warmup_critic_steps critic updates
  /// each, so the critic is near its optimum before alignment begins.
  int critic_warmup = 25;
  int warmup_critic_steps = 100;
  double lambda_A = 1.0;
  double lambda_C = 5.0;
  double lambda_L = 0.5;
  double lambda_GP = 10.0;
  double lr_critic = 3e-4;
  double lr_generator = 1e-4;
  double clip_norm = 5.0;
  int lang_batch = 4;
  /// Weight each pooled centre's adversarial term by its normalised score so
  /// that the scorer receives a training signal.
  bool score_weighting = true;
  /// Start from encoder weights that already land near the sentence manifold
  /// (applied by the train command).
  bool warm_start = true;
  std::uint64_t seed = 0;
};

struct TrainLogRow {
  int iteration = 0;
  double critic_loss = 0.0;
  double gap_image = 0.0;     // E D_I(g_I) - E D_I(M_SI(g_S))
  double gap_sentence = 0.0;  // E D_S(g_S) - E D_S(M_IS(g_I))
  double adv_image = 0.0;
  double adv_sentence = 0.0;
  double cycle = 0.0;
  double language = 0.0;
};

/// Alternates critic updates, mapper/encoder alignment updates and the
/// language refinement. Sentence-side parameters are never updated. Throws
/// DivergenceError before applying an update whose loss is non-finite or
/// above 1e6, leaving the model at its last good state.
std::vector<TrainLogRow> train_magic(const SceneSet& scenes, const SentenceCorpus& corpus, const Grammar& grammar,
                                     CaptionModel& model, const TrainOptions& opt,
                                     const std::function<void(const TrainLogRow&)>& on_iteration = {});

/// Mean of `field` over log rows with iteration in [from, to].
double window_mean(const std::vector<TrainLogRow>& log, int from, int to, double TrainLogRow::*field);

/// Captions for the pooled centres of a scene, decoded greedily with the
/// scene tokens as copy candidates.
std::vector<DecodedSentence> generate_captions(const MultimodalScene& scene, CaptionModel& model, int N_k,
                                               SelectionRule rule = SelectionRule::kTopScore, std::uint64_t seed = 0);

}  // namespace magic
