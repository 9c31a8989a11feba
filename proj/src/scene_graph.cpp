#include "magic/sentence_autoencoder.hpp"

#include <stdexcept>

namespace magic {

using ad::Matrix;
using ad::Var;

SentenceEncoderParams::SentenceEncoderParams(int raw_dim, int d, int e, int L_g, Rng& rng)
    : word_proj("sent.word_proj", d, raw_dim, rng),
      text_proj("sent.text_proj", d, raw_dim, rng),
      W_c0("sent.W_c0", nn::glorot(e, d, rng)),
      W_c1("sent.W_c1", nn::glorot(e, d, rng)) {
  if (L_g < 1) throw std::invalid_argument("SentenceEncoderParams: L_g must be at least 1");
  for (int l = 0; l + 1 < L_g; ++l) {
    W0.emplace_back("sent.W0." + std::to_string(l), nn::glorot(d, d, rng));
    W1.emplace_back("sent.W1." + std::to_string(l), nn::glorot(d, d, rng));
  }
}

std::vector<ad::Parameter*> SentenceEncoderParams::parameters() {
  std::vector<ad::Parameter*> out;
  word_proj.collect(out);
  text_proj.collect(out);
  for (auto& p : W0) out.push_back(&p);
  for (auto& p : W1) out.push_back(&p);
  out.push_back(&W_c0);
  out.push_back(&W_c1);
  return out;
}

namespace {

Eigen::VectorXd word_feature(const Vocabulary& vocab, const std::string& w) {
  auto it = vocab.word_to_id.find(w);
  if (it != vocab.word_to_id.end()) return vocab.embeddings.col(it->second);
  return word_vector(w, vocab.embedding_dim, vocab.seed);
}

}  // namespace

Var encode_scene_graphs(const nn::Binder& b, const std::vector<const SceneGraph*>& graphs, const Vocabulary& vocab,
                        SentenceEncoderParams& params) {
  if (graphs.empty()) throw std::invalid_argument("encode_scene_graphs: empty batch");
  Eigen::Index total = 0;
  for (const SceneGraph* g : graphs) {
    if (g->objects.empty()) throw std::invalid_argument("encode_scene_graph: graph has no objects");
    total += static_cast<Eigen::Index>(g->objects.size());
  }
  const int raw = vocab.embedding_dim;
  const auto B = static_cast<Eigen::Index>(graphs.size());
  Matrix objects(raw, total), words = Matrix::Zero(raw, total), texts = Matrix::Zero(raw, total);
  Matrix word_count = Matrix::Zero(1, total), text_count = Matrix::Zero(1, total);
  Matrix membership = Matrix::Zero(total, B);
  Eigen::Index col = 0;
  for (Eigen::Index gi = 0; gi < B; ++gi) {
    const SceneGraph& g = *graphs[static_cast<std::size_t>(gi)];
    for (const auto& obj : g.objects) {
      objects.col(col) = word_feature(vocab, obj.noun);
      for (const auto& n : obj.attachments) {
        if (n.kind == NodeKind::kText) {
          texts.col(col) += vocab.surface_feature(n.word);
          text_count(0, col) += 1.0;
        } else {
          words.col(col) += word_feature(vocab, n.word);
          word_count(0, col) += 1.0;
        }
      }
      membership(col, gi) = 1.0 / static_cast<double>(g.objects.size());
      ++col;
    }
  }
  ad::Tape& t = b.tape;
  // Projections are affine, so a sum of projected nodes is the projected sum
  // plus count copies of the bias.
  Var nodes = ad::add(
      ad::add(ad::matmul(b(params.word_proj.weight), t.constant(std::move(words))),
              ad::matmul(b(params.word_proj.bias), t.constant(std::move(word_count)))),
      ad::add(ad::matmul(b(params.text_proj.weight), t.constant(std::move(texts))),
              ad::matmul(b(params.text_proj.bias), t.constant(std::move(text_count)))));
  Var state = params.word_proj(b, t.constant(std::move(objects)));
  for (std::size_t l = 0; l < params.W0.size(); ++l)
    state = ad::relu(ad::add(ad::matmul(b(params.W0[l]), state), ad::matmul(b(params.W1[l]), nodes)));
  Var z = ad::add(ad::matmul(b(params.W_c0), state), ad::matmul(b(params.W_c1), nodes));
  return ad::relu(ad::matmul(z, t.constant(std::move(membership))));
}

Eigen::VectorXd encode_scene_graph(const SceneGraph& graph, const Vocabulary& vocab, SentenceEncoderParams& params) {
  ad::Tape t;
  return encode_scene_graphs(nn::Binder{t, false}, {&graph}, vocab, params).value().col(0);
}

}  // namespace magic
