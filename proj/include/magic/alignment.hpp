#pragma once

// Domain mappers, Wasserstein critics with gradient penalty, and the cycle
// alignment objective between image-graph and scene-graph embeddings.

#include "magic/nn.hpp"

#include <optional>

namespace magic {

/// x -> A x + W2 tanh(W1 x + b1) + b2. The linear skip starts at the
/// identity when input and output dimensions agree.
struct Mapper {
  nn::Affine skip;
  nn::Affine hidden;
  nn::Affine out;

  Mapper() = default;
  Mapper(const std::string& name, int in, int out_dim, int hidden_dim, Rng& rng, bool identity_skip = true);
  ad::Var operator()(const nn::Binder& b, ad::Var x);
  std::vector<ad::Parameter*> parameters();
  /// Exact identity map (requires in == out).
  void set_identity();
};

/// Scalar critic: w3' tanh(W2 tanh(W1 x + b1) + b2) + b3.
struct Critic {
  nn::Affine l1, l2, l3;

  Critic() = default;
  Critic(const std::string& name, int in, int hidden, Rng& rng);
  /// 1 x B scores.
  ad::Var operator()(const nn::Binder& b, ad::Var x);
  /// Gradient of the score with respect to each input column (in x B),
  /// assembled in closed form so that it is itself differentiable.
  ad::Var input_gradient(const nn::Binder& b, ad::Var x);
  std::vector<ad::Parameter*> parameters();
};

struct CriticTerms {
  ad::Var loss;     // -(E D(real) - E D(fake)) + lambda_gp * penalty
  ad::Var gap;      // E D(real) - E D(fake)
  ad::Var penalty;  // E (|grad D(x_hat)| - 1)^2
};

/// Critic objective to minimise. Interpolates pair real/fake columns
/// i < min(B_real, B_fake) with mixing weights `mix` (one per pair).
/// Expectations are plain means unless per-column weights (rows summing to
/// one) are given.
CriticTerms critic_loss(const nn::Binder& b, Critic& critic, ad::Var real, ad::Var fake, double lambda_gp,
                        const Eigen::RowVectorXd& mix, const std::optional<Eigen::RowVectorXd>& real_weights = {},
                        const std::optional<Eigen::RowVectorXd>& fake_weights = {});

/// Generator-side adversarial loss -E D(fake), optionally weighted per column
/// by a 1 x B row summing to one.
ad::Var generator_loss(const nn::Binder& b, Critic& critic, ad::Var fake, std::optional<ad::Var> weights = {});

struct AlignmentModules {
  Mapper& image_to_sentence;  // M_IS: d -> e
  Mapper& sentence_to_image;  // M_SI: e -> d
  Critic& image_critic;       // D_I over d
  Critic& sentence_critic;    // D_S over e
};

struct AlignmentTerms {
  ad::Var total;
  ad::Var adv_image;     // -E D_S(M_IS(g_I))
  ad::Var adv_sentence;  // -E D_I(M_SI(g_S))
  ad::Var cycle;         // mean |M_SI(M_IS(g_I)) - g_I| + mean |M_IS(M_SI(g_S)) - g_S|
};

/// lambda_A * (adv_image + adv_sentence + lambda_C * cycle). `gen` binds the
/// mappers, `crit` the critics.
AlignmentTerms cycle_alignment_loss(const nn::Binder& gen, const nn::Binder& crit, ad::Var image_batch,
                                    ad::Var sentence_batch, const AlignmentModules& m, double lambda_A, double lambda_C,
                                    std::optional<ad::Var> image_weights = {});

}  // namespace magic
