#include "magic/mrg_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace magic {

using ad::Matrix;
using ad::Var;

EncoderParams::EncoderParams(const EncoderConfig& cfg, Rng& rng)
    : obj_proj("enc.obj_proj", cfg.d, cfg.raw_dim, rng),
      txt_proj("enc.txt_proj", cfg.d, cfg.raw_dim, rng),
      scorer_hidden("enc.scorer_hidden", cfg.d, 2 * cfg.d, rng),
      scorer_out("enc.scorer_out", 1, cfg.d, rng),
      W_r("enc.W_r", nn::glorot(cfg.d, cfg.d, rng)),
      W_a("enc.W_a", nn::glorot(cfg.d, cfg.d + 4, rng)) {
  if (cfg.d < 1 || cfg.raw_dim < 1 || cfg.L_g < 1) throw std::invalid_argument("EncoderParams: bad dimensions");
  for (int l = 0; l < cfg.L_g; ++l) {
    W_m0.emplace_back("enc.W_m0." + std::to_string(l), nn::glorot(cfg.d, cfg.d, rng));
    W_m1.emplace_back("enc.W_m1." + std::to_string(l), nn::glorot(cfg.d, cfg.d, rng));
  }
}

std::vector<ad::Parameter*> EncoderParams::parameters() {
  std::vector<ad::Parameter*> out;
  obj_proj.collect(out);
  txt_proj.collect(out);
  scorer_hidden.collect(out);
  scorer_out.collect(out);
  out.push_back(&W_r);
  out.push_back(&W_a);
  for (auto& p : W_m0) out.push_back(&p);
  for (auto& p : W_m1) out.push_back(&p);
  return out;
}

namespace {

Eigen::VectorXd affine(const nn::Affine& a, const Eigen::VectorXd& x) { return a.weight.value * x + a.bias.value.col(0); }

Eigen::VectorXd relu(const Eigen::VectorXd& x) { return x.cwiseMax(0.0); }

Eigen::MatrixXd object_matrix(const MultimodalScene& s) {
  Eigen::MatrixXd m(s.objects.front().feature.size(), static_cast<Eigen::Index>(s.objects.size()));
  for (std::size_t i = 0; i < s.objects.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = s.objects[i].feature;
  return m;
}

Eigen::MatrixXd token_matrix(const MultimodalScene& s, Eigen::Index raw) {
  Eigen::MatrixXd m(raw, static_cast<Eigen::Index>(s.tokens.size()));
  for (std::size_t j = 0; j < s.tokens.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = s.tokens[j].feature;
  return m;
}

Eigen::MatrixXd projected_tokens(const MultimodalScene& s, EncoderParams& p) {
  Eigen::MatrixXd t(p.d(), static_cast<Eigen::Index>(s.tokens.size()));
  for (std::size_t j = 0; j < s.tokens.size(); ++j) t.col(static_cast<Eigen::Index>(j)) = affine(p.txt_proj, s.tokens[j].feature);
  return t;
}

void check_scene(const MultimodalScene& s, EncoderParams& p) {
  if (s.objects.empty()) throw std::invalid_argument("encoder: scene has no objects");
  const auto raw = p.obj_proj.in_dim();
  for (const auto& o : s.objects)
    if (o.feature.size() != raw) throw std::invalid_argument("encoder: object feature dimension mismatch");
  for (const auto& t : s.tokens)
    if (t.feature.size() != raw) throw std::invalid_argument("encoder: token feature dimension mismatch");
}

}  // namespace

Attention attend_text(const Eigen::VectorXd& query, const Eigen::MatrixXd& tokens) {
  Attention a;
  a.attended = Eigen::VectorXd::Zero(query.size());
  if (tokens.cols() == 0) return a;
  if (tokens.rows() != query.size()) throw std::invalid_argument("attend_text: dimension mismatch");
  Eigen::VectorXd s = tokens.transpose() * query / std::sqrt(static_cast<double>(query.size()));
  s = (s.array() - s.maxCoeff()).exp();
  a.weights = s / s.sum();
  a.attended = tokens * a.weights;
  return a;
}

std::vector<AugmentedObject> augment_objects(const MultimodalScene& scene, EncoderParams& params) {
  check_scene(scene, params);
  const Eigen::MatrixXd tokens = projected_tokens(scene, params);
  std::vector<AugmentedObject> out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const Eigen::VectorXd o = affine(params.obj_proj, scene.objects[i].feature);
    AugmentedObject a;
    a.embedding.resize(2 * o.size());
    a.embedding << o, attend_text(o, tokens).attended;
    a.source_index = static_cast<int>(i);
    out.push_back(std::move(a));
  }
  return out;
}

Eigen::VectorXd score_central_objects(const std::vector<AugmentedObject>& augmented, EncoderParams& params) {
  if (augmented.empty()) throw std::invalid_argument("score_central_objects: no objects");
  Eigen::VectorXd raw(static_cast<Eigen::Index>(augmented.size()));
  for (std::size_t i = 0; i < augmented.size(); ++i)
    raw[static_cast<Eigen::Index>(i)] = affine(params.scorer_out, relu(affine(params.scorer_hidden, augmented[i].embedding)))[0];
  raw = (raw.array() - raw.maxCoeff()).exp();
  return raw / raw.sum();
}

CentralObjectPool select_pool(const Eigen::VectorXd& scores, int N_k) {
  if (N_k < 1) throw std::invalid_argument("select_pool: N_k must be at least 1");
  std::vector<int> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  order.resize(std::min(order.size(), static_cast<std::size_t>(N_k)));
  return {order, scores};
}

const char* to_string(SelectionRule rule) {
  switch (rule) {
    case SelectionRule::kTopScore: return "top_score";
    case SelectionRule::kCenter: return "center";
    case SelectionRule::kLarge: return "large";
    case SelectionRule::kRandom: return "random";
  }
  return "?";
}

SelectionRule selection_rule_from_string(const std::string& name) {
  for (auto r : {SelectionRule::kTopScore, SelectionRule::kCenter, SelectionRule::kLarge, SelectionRule::kRandom})
    if (name == to_string(r)) return r;
  throw std::invalid_argument("unknown selection rule '" + name + "'");
}

std::vector<int> select_by_rule(const MultimodalScene& scene, const Eigen::VectorXd& scores, int N_k,
                                SelectionRule rule, std::uint64_t seed) {
  if (N_k < 1) throw std::invalid_argument("select_by_rule: N_k must be at least 1");
  const std::size_t n = scene.objects.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  switch (rule) {
    case SelectionRule::kTopScore: return select_pool(scores, N_k).indices;
    case SelectionRule::kCenter: {
      std::vector<double> dist(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = box_center(scene.objects[i].box);
        dist[i] = std::hypot(c[0] - 0.5, c[1] - 0.5);
      }
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)]; });
      break;
    }
    case SelectionRule::kLarge:
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return box_area(scene.objects[static_cast<std::size_t>(a)].box) > box_area(scene.objects[static_cast<std::size_t>(b)].box);
      });
      break;
    case SelectionRule::kRandom: {
      Rng rng(seed);
      rng.shuffle(order);
      break;
    }
  }
  order.resize(std::min(n, static_cast<std::size_t>(N_k)));
  return order;
}

std::vector<int> nearest_neighbours(const MultimodalScene& scene, int central, int K_rel) {
  const int n = static_cast<int>(scene.objects.size());
  if (central < 0 || central >= n) throw std::invalid_argument("nearest_neighbours: invalid central index");
  const auto c = box_center(scene.objects[static_cast<std::size_t>(central)].box);
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    if (i == central) continue;
    const auto p = box_center(scene.objects[static_cast<std::size_t>(i)].box);
    cand.emplace_back(std::hypot(p[0] - c[0], p[1] - c[1]), i);
  }
  std::sort(cand.begin(), cand.end());
  std::vector<int> out;
  for (int k = 0; k < std::min(K_rel, static_cast<int>(cand.size())); ++k) out.push_back(cand[static_cast<std::size_t>(k)].second);
  return out;
}

MultimodalRelationalGraph build_mrg(const MultimodalScene& scene, int central_index, EncoderParams& params,
                                    double epsilon, int K_rel) {
  check_scene(scene, params);
  if (central_index < 0 || central_index >= static_cast<int>(scene.objects.size()))
    throw std::invalid_argument("build_mrg: invalid central index");
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw std::invalid_argument("build_mrg: epsilon must lie in (0, 1]");
  MultimodalRelationalGraph g;
  g.central_index = central_index;
  g.central = affine(params.obj_proj, scene.objects[static_cast<std::size_t>(central_index)].feature);
  const int d = params.d();
  for (int j : nearest_neighbours(scene, central_index, K_rel)) {
    const auto& obj = scene.objects[static_cast<std::size_t>(j)];
    const Eigen::VectorXd o = affine(params.obj_proj, obj.feature);
    g.nodes.push_back({NodeKind::kRelationship, params.W_r.value * o, 1.0});
    Eigen::VectorXd os(d + 4);
    os << o, obj.box[0], obj.box[1], obj.box[2], obj.box[3];
    g.nodes.push_back({NodeKind::kAttribute, params.W_a.value * os, 1.0});
  }
  const Eigen::MatrixXd tokens = projected_tokens(scene, params);
  const Attention att = attend_text(g.central, tokens);
  for (Eigen::Index j = 0; j < att.weights.size(); ++j) {
    if (att.weights[j] > epsilon) {
      g.nodes.push_back({NodeKind::kText, att.weights[j] * tokens.col(j), att.weights[j]});
      g.text_sources.push_back(static_cast<int>(j));
    }
  }
  return g;
}

Eigen::VectorXd encode_mrg(const MultimodalRelationalGraph& graph, EncoderParams& params) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(params.d());
  for (const auto& n : graph.nodes) sum += n.embedding;
  Eigen::VectorXd h = graph.central;
  for (int l = 0; l < params.layers(); ++l) {
    const auto ul = static_cast<std::size_t>(l);
    h = relu(params.W_m0[ul].value * h + params.W_m1[ul].value * sum);
  }
  return h;
}

ImageEncoding encode_image(const nn::Binder& b, const MultimodalScene& scene, EncoderParams& params,
                           const PoolOptions& opt) {
  check_scene(scene, params);
  if (!(opt.epsilon > 0.0 && opt.epsilon <= 1.0)) throw std::invalid_argument("encode_image: epsilon must lie in (0, 1]");
  ad::Tape& t = b.tape;
  const auto n = static_cast<Eigen::Index>(scene.objects.size());
  const auto m = static_cast<Eigen::Index>(scene.tokens.size());
  const int d = params.d();
  const Eigen::MatrixXd X = object_matrix(scene);

  Var O = params.obj_proj(b, t.constant(X));  // d x N
  Var T, A;                                   // d x M, M x N
  Var attended;
  if (m > 0) {
    T = params.txt_proj(b, t.constant(token_matrix(scene, X.rows())));
    A = ad::softmax_cols(ad::scale(ad::matmul(ad::transpose(T), O), 1.0 / std::sqrt(static_cast<double>(d))));
    attended = ad::matmul(T, A);
  } else {
    attended = t.constant(Matrix::Zero(d, n));
  }
  Var aug = ad::concat_rows({O, attended});
  Var raw_scores = params.scorer_out(b, ad::relu(params.scorer_hidden(b, aug)));  // 1 x N
  Var scores = ad::softmax_cols(ad::transpose(raw_scores));                    // N x 1

  ImageEncoding enc;
  enc.scores = scores;
  enc.pool = select_by_rule(scene, scores.value().col(0), opt.N_k, opt.rule, opt.seed);
  const auto k = static_cast<Eigen::Index>(enc.pool.size());

  Matrix nbr = Matrix::Zero(n, k);
  Matrix boxes(4, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int r = 0; r < 4; ++r) boxes(r, i) = scene.objects[static_cast<std::size_t>(i)].box[static_cast<std::size_t>(r)];
  for (Eigen::Index c = 0; c < k; ++c)
    for (int j : nearest_neighbours(scene, enc.pool[static_cast<std::size_t>(c)], opt.K_rel)) nbr(j, c) = 1.0;
  Var nbr_v = t.constant(nbr);
  Var o_sum = ad::matmul(O, nbr_v);  // d x k
  Var box_sum = t.constant(boxes * nbr);
  Var S = ad::add(ad::matmul(b(params.W_r), o_sum), ad::matmul(b(params.W_a), ad::concat_rows({o_sum, box_sum})));
  if (m > 0) {
    Var a_pool = ad::gather_cols(A, enc.pool);  // M x k
    Matrix gate = (a_pool.value().array() > opt.epsilon).cast<double>().matrix();
    S = ad::add(S, ad::matmul(T, ad::mul(a_pool, t.constant(gate))));
  }
  Var H = ad::gather_cols(O, enc.pool);
  for (int l = 0; l < params.layers(); ++l) {
    const auto ul = static_cast<std::size_t>(l);
    H = ad::relu(ad::add(ad::matmul(b(params.W_m0[ul]), H), ad::matmul(b(params.W_m1[ul]), S)));
  }
  enc.embeddings = H;

  std::vector<long> src(enc.pool.begin(), enc.pool.end());
  Var pooled = ad::gather(scores, src, 1, k);  // 1 x k
  Var total = ad::matmul(pooled, t.constant(Matrix::Ones(k, k)));
  enc.pool_weights = ad::mul(pooled, ad::reciprocal(total));
  return enc;
}

std::vector<Eigen::VectorXd> encode_image(const MultimodalScene& scene, EncoderParams& params, int N_k, double epsilon,
                                          int K_rel) {
  ad::Tape t;
  nn::Binder b{t, false};
  PoolOptions opt;
  opt.N_k = N_k;
  opt.epsilon = epsilon;
  opt.K_rel = K_rel;
  const ImageEncoding enc = encode_image(b, scene, params, opt);
  std::vector<Eigen::VectorXd> out;
  for (Eigen::Index c = 0; c < enc.embeddings.cols(); ++c) out.push_back(enc.embeddings.value().col(c));
  return out;
}

}  // namespace magic
