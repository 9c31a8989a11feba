#include "magic/mrg_encoder.hpp"
#include "magic/rng.hpp"
#include "oracles/loops.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace magic;
using oracle::Vec;

namespace {

Eigen::VectorXd random_vector(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

MultimodalScene random_scene(int objects, int tokens, int raw, Rng& rng) {
  MultimodalScene s;
  s.scene_id = "t";
  for (int i = 0; i < objects; ++i) {
    ObjectFeature o;
    o.feature = random_vector(raw, rng);
    o.box = {rng.uniform(0, 0.6), rng.uniform(0, 0.6), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)};
    s.objects.push_back(o);
  }
  for (int j = 0; j < tokens; ++j) {
    TextToken t;
    t.feature = random_vector(raw, rng);
    t.surface = "w" + std::to_string(j);
    t.box = {rng.uniform(0, 0.6), rng.uniform(0, 0.6), 0.1, 0.05};
    s.tokens.push_back(t);
  }
  return s;
}

EncoderParams make_params(int raw, int d, int L_g, std::uint64_t seed) {
  Rng rng(seed);
  EncoderConfig cfg;
  cfg.raw_dim = raw;
  cfg.d = d;
  cfg.L_g = L_g;
  return EncoderParams(cfg, rng);
}

Vec proj(const nn::Affine& a, const Eigen::VectorXd& x) {
  return oracle::affine(a.weight.value, a.bias.value, oracle::to_vec(x));
}

// Attention of a query over token vectors, computed literally.
std::pair<Vec, Vec> attend(const Vec& q, const std::vector<Vec>& toks) {
  Vec attended(q.size(), 0.0);
  if (toks.empty()) return {attended, {}};
  Vec s;
  for (const auto& t : toks) s.push_back(oracle::dot(q, t) / std::sqrt(static_cast<double>(q.size())));
  const Vec w = oracle::softmax(s);
  for (std::size_t i = 0; i < toks.size(); ++i) attended = oracle::plus(attended, oracle::times(toks[i], w[i]));
  return {attended, w};
}

}  // namespace

TEST_CASE("attend_text") {
  Eigen::VectorXd q(3);
  q << 0.3, -0.2, 0.9;
  Eigen::MatrixXd one(3, 1);
  one << 1.0, 2.0, 3.0;
  Attention a = attend_text(q, one);
  CHECK(a.weights.size() == 1);
  CHECK(a.weights[0] == 1.0);
  CHECK(a.attended == one.col(0));

  Eigen::MatrixXd tied(3, 2);
  tied.col(0) = one.col(0);
  tied.col(1) = one.col(0);
  a = attend_text(q, tied);
  CHECK(a.weights[0] == 0.5);
  CHECK(a.weights[1] == 0.5);

  a = attend_text(q, Eigen::MatrixXd(3, 0));
  CHECK(a.weights.size() == 0);
  CHECK(a.attended.isZero());
  CHECK_THROWS(attend_text(q, Eigen::MatrixXd::Ones(4, 2)));

  Rng rng(11);
  const Eigen::VectorXd query = random_vector(5, rng);
  Eigen::MatrixXd toks(5, 3);
  std::vector<Vec> tv;
  for (int j = 0; j < 3; ++j) {
    toks.col(j) = random_vector(5, rng);
    tv.push_back(oracle::to_vec(toks.col(j)));
  }
  a = attend_text(query, toks);
  const auto [att, w] = attend(oracle::to_vec(query), tv);
  CHECK(oracle::max_abs_diff(att, a.attended) <= 1e-12);
  CHECK(oracle::max_abs_diff(w, a.weights) <= 1e-12);
  CHECK(std::abs(a.weights.sum() - 1.0) <= 1e-9);
}

TEST_CASE("score_central_objects") {
  EncoderParams p = make_params(6, 4, 2, 3);
  std::vector<AugmentedObject> same(4);
  for (auto& a : same) a.embedding = Eigen::VectorXd::Constant(8, 0.7);
  const Eigen::VectorXd u = score_central_objects(same, p);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(u[i] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS(score_central_objects({}, p));

  Rng rng(3);
  std::vector<AugmentedObject> aug(4);
  Vec raw;
  for (auto& a : aug) {
    a.embedding = random_vector(8, rng);
    const Vec h = oracle::relu(proj(p.scorer_hidden, a.embedding));
    raw.push_back(oracle::affine(p.scorer_out.weight.value, p.scorer_out.bias.value, h)[0]);
  }
  const Eigen::VectorXd s = score_central_objects(aug, p);
  CHECK(oracle::max_abs_diff(oracle::softmax(raw), s) <= 1e-10);
  CHECK(std::abs(s.sum() - 1.0) <= 1e-9);
  CHECK((s.array() >= 0).all());
}

TEST_CASE("select_pool") {
  Eigen::VectorXd s(3);
  s << 0.1, 0.6, 0.3;
  CHECK(select_pool(s, 1).indices == std::vector<int>{1});
  CHECK(select_pool(s, 2).indices == std::vector<int>{1, 2});
  CHECK(select_pool(s, 7).indices == std::vector<int>{1, 2, 0});
  Eigen::VectorXd tie(2);
  tie << 0.5, 0.5;
  CHECK(select_pool(tie, 1).indices == std::vector<int>{0});
  CHECK_THROWS(select_pool(s, 0));
  CHECK(PoolOptions{}.N_k == 3);

  // Permutation equivariance for distinct scores.
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd v(6);
    for (int i = 0; i < 6; ++i) v[i] = rng.uniform();
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Eigen::VectorXd pv(6);
    for (int i = 0; i < 6; ++i) pv[i] = v[perm[static_cast<std::size_t>(i)]];
    const auto a = select_pool(v, 3).indices;
    const auto b = select_pool(pv, 3).indices;
    for (std::size_t k = 0; k < 3; ++k) CHECK(perm[static_cast<std::size_t>(b[k])] == a[k]);
  }
}

TEST_CASE("build_mrg") {
  EncoderParams p = make_params(6, 4, 1, 5);
  Rng rng(5);
  const MultimodalScene single = random_scene(1, 2, 6, rng);
  MultimodalRelationalGraph g = build_mrg(single, 0, p, 0.1, 5);
  CHECK(g.count(NodeKind::kRelationship) == 0);
  CHECK(g.count(NodeKind::kAttribute) == 0);
  CHECK_THROWS(build_mrg(single, 1, p, 0.1, 5));

  const MultimodalScene s = random_scene(3, 2, 6, rng);
  CHECK(build_mrg(s, 0, p, 1.0, 5).count(NodeKind::kText) == 0);

  // Literal relationship/attribute/text node construction.
  for (int central = 0; central < 3; ++central) {
    g = build_mrg(s, central, p, 0.1, 5);
    const Vec c = proj(p.obj_proj, s.objects[static_cast<std::size_t>(central)].feature);
    CHECK(oracle::max_abs_diff(c, g.central) <= 1e-12);
    std::vector<int> nbrs = nearest_neighbours(s, central, 5);
    CHECK(nbrs.size() == 2);
    CHECK(std::find(nbrs.begin(), nbrs.end(), central) == nbrs.end());
    std::size_t node = 0;
    for (int j : nbrs) {
      const auto& obj = s.objects[static_cast<std::size_t>(j)];
      const Vec o = proj(p.obj_proj, obj.feature);
      CHECK(oracle::max_abs_diff(oracle::matvec(p.W_r.value, o), g.nodes[node++].embedding) <= 1e-10);
      Vec os = o;
      os.insert(os.end(), obj.box.begin(), obj.box.end());
      CHECK(oracle::max_abs_diff(oracle::matvec(p.W_a.value, os), g.nodes[node++].embedding) <= 1e-10);
    }
    std::vector<Vec> toks;
    for (const auto& t : s.tokens) toks.push_back(proj(p.txt_proj, t.feature));
    const Vec w = attend(c, toks).second;
    for (std::size_t j = 0; j < toks.size(); ++j) {
      if (w[j] <= 0.1) continue;
      REQUIRE(node < g.nodes.size());
      CHECK(g.nodes[node].kind == NodeKind::kText);
      CHECK(oracle::max_abs_diff(oracle::times(toks[j], w[j]), g.nodes[node++].embedding) <= 1e-10);
    }
    CHECK(node == g.nodes.size());
  }

  // Raising epsilon never adds a text node.
  const MultimodalScene many = random_scene(4, 8, 6, rng);
  std::size_t prev = 1000;
  for (double eps : {0.01, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 1.0}) {
    const std::size_t n = build_mrg(many, 0, p, eps, 5).count(NodeKind::kText);
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("encode_mrg") {
  EncoderParams p = make_params(4, 4, 1, 9);
  MultimodalRelationalGraph g;
  g.central = Eigen::VectorXd::LinSpaced(4, -1.0, 2.0);
  Vec expect = oracle::relu(oracle::matvec(p.W_m0[0].value, oracle::to_vec(g.central)));
  CHECK(oracle::max_abs_diff(expect, encode_mrg(g, p)) <= 1e-12);

  Rng rng(9);
  for (int n = 0; n < 3; ++n) g.nodes.push_back({NodeKind::kAttribute, random_vector(4, rng), 1.0});
  Vec sum(4, 0.0);
  for (const auto& n : g.nodes) sum = oracle::plus(sum, oracle::to_vec(n.embedding));
  expect = oracle::relu(oracle::plus(oracle::matvec(p.W_m0[0].value, oracle::to_vec(g.central)),
                                     oracle::matvec(p.W_m1[0].value, sum)));
  CHECK(oracle::max_abs_diff(expect, encode_mrg(g, p)) <= 1e-10);

  p.W_m0[0].value.setIdentity();
  p.W_m1[0].value.setZero();
  g.central = g.central.cwiseAbs();
  CHECK(encode_mrg(g, p) == g.central);
}

TEST_CASE("encode_image") {
  Rng rng(21);
  EncoderParams p = make_params(6, 5, 2, 21);
  const MultimodalScene s = random_scene(6, 4, 6, rng);

  // N_k = 1 equals encode_mrg of the argmax object's graph.
  const auto one = encode_image(s, p, 1, 0.1, 5);
  REQUIRE(one.size() == 1);
  const Eigen::VectorXd scores = score_central_objects(augment_objects(s, p), p);
  Eigen::Index arg = 0;
  scores.maxCoeff(&arg);
  const Eigen::VectorXd direct = encode_mrg(build_mrg(s, static_cast<int>(arg), p, 0.1, 5), p);
  CHECK((one[0] - direct).cwiseAbs().maxCoeff() <= 1e-10);

  const auto five = encode_image(s, p, 5, 0.1, 5);
  CHECK(five.size() == 5);
  const auto pool = select_pool(scores, 5).indices;
  for (std::size_t k = 0; k < 5; ++k)
    CHECK((five[k] - encode_mrg(build_mrg(s, pool[k], p, 0.1, 5), p)).cwiseAbs().maxCoeff() <= 1e-10);

  // Permuting the object list leaves the multiset of outputs unchanged.
  std::vector<int> perm = {3, 0, 5, 1, 4, 2};
  MultimodalScene q = s;
  for (std::size_t i = 0; i < perm.size(); ++i) q.objects[i] = s.objects[static_cast<std::size_t>(perm[i])];
  auto a = encode_image(s, p, 3, 0.1, 3), b = encode_image(q, p, 3, 0.1, 3);
  auto key = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  std::vector<std::vector<double>> ka, kb;
  for (const auto& v : a) ka.push_back(key(v));
  for (const auto& v : b) kb.push_back(key(v));
  std::sort(ka.begin(), ka.end());
  std::sort(kb.begin(), kb.end());
  REQUIRE(ka.size() == kb.size());
  for (std::size_t i = 0; i < ka.size(); ++i)
    for (std::size_t j = 0; j < ka[i].size(); ++j) CHECK(std::abs(ka[i][j] - kb[i][j]) <= 1e-10);

  // Same result when rerun (pure in parameters).
  CHECK(encode_image(s, p, 3, 0.1, 3) == a);
}

TEST_CASE("selection rules") {
  MultimodalScene s;
  s.objects.resize(3);
  for (auto& o : s.objects) o.feature = Eigen::VectorXd::Zero(2);
  s.objects[0].box = {0.0, 0.0, 0.2, 0.2};
  s.objects[1].box = {0.4, 0.4, 0.2, 0.2};  // centred
  s.objects[2].box = {0.5, 0.0, 0.5, 0.5};  // largest
  const Eigen::VectorXd scores = Eigen::Vector3d(0.2, 0.3, 0.5);
  CHECK(select_by_rule(s, scores, 1, SelectionRule::kCenter, 0) == std::vector<int>{1});
  CHECK(select_by_rule(s, scores, 1, SelectionRule::kLarge, 0) == std::vector<int>{2});
  CHECK(select_by_rule(s, scores, 1, SelectionRule::kTopScore, 0) == std::vector<int>{2});
  CHECK(select_by_rule(s, scores, 2, SelectionRule::kRandom, 77) == select_by_rule(s, scores, 2, SelectionRule::kRandom, 77));
  CHECK(selection_rule_from_string("large") == SelectionRule::kLarge);
  CHECK_THROWS(selection_rule_from_string("biggest"));
}
