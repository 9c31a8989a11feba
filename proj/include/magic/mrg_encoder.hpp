#pragma once

// Image side: text-augmented objects, central-object scoring and pooling,
// per-centre multimodal relational graphs and their GCN encoding.

#include "magic/data_model.hpp"
#include "magic/nn.hpp"

#include <cstdint>
#include <vector>

namespace magic {

struct EncoderConfig {
  int raw_dim = 300;
  int d = 128;
  int K_rel = 5;
  int L_g = 2;
  double epsilon = 0.1;
};

struct EncoderParams {
  nn::Affine obj_proj;  // d x raw
  nn::Affine txt_proj;  // d x raw
  nn::Affine scorer_hidden;  // d x 2d
  nn::Affine scorer_out;     // 1 x d
  ad::Parameter W_r;         // d x d
  ad::Parameter W_a;         // d x (d + 4)
  std::vector<ad::Parameter> W_m0, W_m1;  // L_g layers, d x d

  EncoderParams() = default;
  EncoderParams(const EncoderConfig& cfg, Rng& rng);
  std::vector<ad::Parameter*> parameters();
  int d() const { return static_cast<int>(W_r.value.rows()); }
  int layers() const { return static_cast<int>(W_m0.size()); }
};

struct Attention {
  Eigen::VectorXd attended;
  Eigen::VectorXd weights;
};

/// Scaled dot-product attention of `query` over token columns.
Attention attend_text(const Eigen::VectorXd& query, const Eigen::MatrixXd& tokens);

struct AugmentedObject {
  Eigen::VectorXd embedding;  // [o_i; t_i^a], 2d
  int source_index = 0;
};

std::vector<AugmentedObject> augment_objects(const MultimodalScene& scene, EncoderParams& params);

/// softmax(MLP(augmented)) over objects.
Eigen::VectorXd score_central_objects(const std::vector<AugmentedObject>& augmented, EncoderParams& params);

struct CentralObjectPool {
  std::vector<int> indices;
  Eigen::VectorXd scores;
};

/// The N_k highest scores, ties to the lower index.
CentralObjectPool select_pool(const Eigen::VectorXd& scores, int N_k);

enum class SelectionRule { kTopScore, kCenter, kLarge, kRandom };
const char* to_string(SelectionRule rule);
SelectionRule selection_rule_from_string(const std::string& name);

/// Pool chosen by a rule: learned scores, distance of the box centre to the
/// image centre, box area, or a seeded random draw.
std::vector<int> select_by_rule(const MultimodalScene& scene, const Eigen::VectorXd& scores, int N_k,
                                SelectionRule rule, std::uint64_t seed);

/// Indices of the K_rel objects nearest to `central` by box centre (ties to
/// the lower index), excluding `central`.
std::vector<int> nearest_neighbours(const MultimodalScene& scene, int central, int K_rel);

MultimodalRelationalGraph build_mrg(const MultimodalScene& scene, int central_index, EncoderParams& params,
                                    double epsilon, int K_rel);

Eigen::VectorXd encode_mrg(const MultimodalRelationalGraph& graph, EncoderParams& params);

struct PoolOptions {
  int N_k = 3;
  double epsilon = 0.1;
  int K_rel = 5;
  SelectionRule rule = SelectionRule::kTopScore;
  std::uint64_t seed = 0;  // kRandom only
};

/// Differentiable encoding of one scene.
struct ImageEncoding {
  ad::Var embeddings;    // d x k, one column per pooled centre
  ad::Var scores;        // N x 1
  ad::Var pool_weights;  // 1 x k, pooled scores renormalised to sum 1
  std::vector<int> pool;
};

ImageEncoding encode_image(const nn::Binder& b, const MultimodalScene& scene, EncoderParams& params,
                           const PoolOptions& opt);

/// Value-only convenience wrapper.
std::vector<Eigen::VectorXd> encode_image(const MultimodalScene& scene, EncoderParams& params, int N_k, double epsilon,
                                          int K_rel);

}  // namespace magic
