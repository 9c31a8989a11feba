#include "magic/data_model.hpp"

#include "magic/bundle.hpp"
#include "magic/rng.hpp"

#include <json.hpp>

#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace magic {

bool box_valid(const Box& b) {
  for (double v : b)
    if (!(v >= 0.0 && v <= 1.0)) return false;
  return true;
}

double box_area(const Box& b) { return b[2] * b[3]; }

std::array<double, 2> box_center(const Box& b) { return {b[0] + 0.5 * b[2], b[1] + 0.5 * b[3]}; }

void MultimodalScene::validate(std::size_t max_objects, std::size_t max_tokens) const {
  if (objects.empty()) throw std::invalid_argument("scene " + scene_id + ": needs at least one object");
  if (objects.size() > max_objects) throw std::invalid_argument("scene " + scene_id + ": too many objects");
  if (tokens.size() > max_tokens) throw std::invalid_argument("scene " + scene_id + ": too many tokens");
  for (const auto& o : objects) {
    if (!box_valid(o.box)) throw std::invalid_argument("scene " + scene_id + ": object box outside [0,1]");
    if (!o.feature.allFinite()) throw std::invalid_argument("scene " + scene_id + ": non-finite object feature");
    if (o.label_id < 0) throw std::invalid_argument("scene " + scene_id + ": negative label id");
  }
  for (const auto& t : tokens) {
    if (t.surface.empty()) throw std::invalid_argument("scene " + scene_id + ": empty token surface");
    if (!t.feature.allFinite()) throw std::invalid_argument("scene " + scene_id + ": non-finite token feature");
    if (!box_valid(t.box)) throw std::invalid_argument("scene " + scene_id + ": token box outside [0,1]");
  }
}

std::string Sentence::text() const {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::size_t MultimodalRelationalGraph::count(NodeKind kind) const {
  std::size_t n = 0;
  for (const auto& node : nodes) n += node.kind == kind;
  return n;
}

Eigen::VectorXd word_vector(std::string_view word, int dim, std::uint64_t seed) {
  Rng rng(splitmix64(seed ^ fnv1a(word)));
  Eigen::VectorXd v(dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int i = 0; i < dim; ++i) v[i] = s * rng.normal();
  return v;
}

std::string shape_key(std::string_view surface) {
  std::string key;
  for (char c : surface) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isdigit(uc)) {
      key += '9';
    } else if (std::isalpha(uc)) {
      if (key.empty() || key.back() != 'a') key += 'a';
    } else {
      key += c;
    }
  }
  return key;
}

Eigen::VectorXd surface_embedding(std::string_view surface, int dim, std::uint64_t seed) {
  const std::string shape = "#shape:" + shape_key(surface);
  return (word_vector(surface, dim, seed) + word_vector(shape, dim, seed)) / std::sqrt(2.0);
}

namespace {

void write_box(ByteWriter& w, const Box& b) {
  for (double v : b) w.f64(v);
}

Box read_box(ByteReader& r) {
  Box b;
  for (double& v : b) v = r.f64();
  return b;
}

void write_vector(ByteWriter& w, const Eigen::VectorXd& v) {
  w.u64(static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v[i]);
}

Eigen::VectorXd read_vector(ByteReader& r) {
  const std::uint64_t n = r.u64();
  if (n > (1u << 24)) throw BundleError(BundleError::Code::kFormat, "bundle: implausible vector length");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = r.f64();
  return v;
}

void write_scene(ByteWriter& w, const MultimodalScene& s) {
  w.str(s.scene_id);
  w.u64(s.objects.size());
  for (const auto& o : s.objects) {
    write_vector(w, o.feature);
    write_box(w, o.box);
    w.i64(o.label_id);
  }
  w.u64(s.tokens.size());
  for (const auto& t : s.tokens) {
    write_vector(w, t.feature);
    w.str(t.surface);
    write_box(w, t.box);
  }
}

MultimodalScene read_scene(ByteReader& r) {
  MultimodalScene s;
  s.scene_id = r.str();
  const std::uint64_t n_obj = r.u64();
  for (std::uint64_t i = 0; i < n_obj; ++i) {
    ObjectFeature o;
    o.feature = read_vector(r);
    o.box = read_box(r);
    o.label_id = static_cast<int>(r.i64());
    s.objects.push_back(std::move(o));
  }
  const std::uint64_t n_tok = r.u64();
  for (std::uint64_t i = 0; i < n_tok; ++i) {
    TextToken t;
    t.feature = read_vector(r);
    t.surface = r.str();
    t.box = read_box(r);
    s.tokens.push_back(std::move(t));
  }
  return s;
}

std::string encode_scenes(const std::vector<MultimodalScene>& scenes) {
  ByteWriter w;
  w.u64(scenes.size());
  for (const auto& s : scenes) write_scene(w, s);
  return w.take();
}

std::vector<MultimodalScene> decode_scenes(const std::string& bytes) {
  ByteReader r(bytes);
  const std::uint64_t n = r.u64();
  std::vector<MultimodalScene> scenes;
  for (std::uint64_t i = 0; i < n; ++i) scenes.push_back(read_scene(r));
  if (!r.done()) throw BundleError(BundleError::Code::kFormat, "bundle: trailing bytes in scenes section");
  return scenes;
}

}  // namespace

void save_scene_set(const std::filesystem::path& path, const SceneSet& set) {
  write_bundle(path, BundleKind::kSceneSet, {{"scenes", encode_scenes(set.scenes)}});
}

SceneSet load_scene_set(const std::filesystem::path& path) {
  const auto sections = read_bundle(path, BundleKind::kSceneSet);
  return SceneSet{decode_scenes(find_section(sections, "scenes").bytes)};
}

void save_evaluation_set(const std::filesystem::path& path, const EvaluationSet& set) {
  if (set.references.size() != set.scenes.size())
    throw std::invalid_argument("evaluation set: references must parallel scenes");
  ByteWriter refs;
  refs.u64(set.references.size());
  for (const auto& caps : set.references) {
    refs.u64(caps.size());
    for (const auto& c : caps) refs.str(c);
  }
  write_bundle(path, BundleKind::kEvaluationSet, {{"scenes", encode_scenes(set.scenes)}, {"references", refs.take()}});
}

EvaluationSet load_evaluation_set(const std::filesystem::path& path) {
  const auto sections = read_bundle(path, BundleKind::kEvaluationSet);
  EvaluationSet set;
  set.scenes = decode_scenes(find_section(sections, "scenes").bytes);
  ByteReader r(find_section(sections, "references").bytes);
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::vector<std::string> caps;
    const std::uint64_t m = r.u64();
    for (std::uint64_t j = 0; j < m; ++j) caps.push_back(r.str());
    set.references.push_back(std::move(caps));
  }
  if (set.references.size() != set.scenes.size())
    throw BundleError(BundleError::Code::kFormat, "bundle: reference count does not match scene count");
  return set;
}

void save_corpus(const std::filesystem::path& path, const SentenceCorpus& corpus) {
  ByteWriter w;
  w.u64(corpus.grammar_seed);
  w.u64(corpus.sentences.size());
  for (const auto& s : corpus.sentences) {
    w.i64(s.template_index);
    w.u64(s.words.size());
    for (std::size_t i = 0; i < s.words.size(); ++i) {
      w.str(s.words[i]);
      w.u32(s.copy[i]);
    }
  }
  write_bundle(path, BundleKind::kCorpus, {{"sentences", w.take()}});
}

SentenceCorpus load_corpus(const std::filesystem::path& path) {
  const auto sections = read_bundle(path, BundleKind::kCorpus);
  ByteReader r(find_section(sections, "sentences").bytes);
  SentenceCorpus c;
  c.grammar_seed = r.u64();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    Sentence s;
    s.template_index = static_cast<int>(r.i64());
    const std::uint64_t m = r.u64();
    for (std::uint64_t j = 0; j < m; ++j) {
      s.words.push_back(r.str());
      s.copy.push_back(static_cast<std::uint8_t>(r.u32()));
    }
    c.sentences.push_back(std::move(s));
  }
  return c;
}

namespace {

nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b[0], b[1], b[2], b[3]}); }

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

}  // namespace

void export_scenes_jsonl(const std::filesystem::path& path, const std::vector<MultimodalScene>& scenes,
                         const std::vector<std::vector<std::string>>* references) {
  std::ofstream out(path);
  if (!out) throw BundleError(BundleError::Code::kIo, "cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    nlohmann::json rec;
    rec["scene_id"] = s.scene_id;
    rec["objects"] = nlohmann::json::array();
    for (const auto& o : s.objects)
      rec["objects"].push_back({{"label_id", o.label_id}, {"box", box_json(o.box)}, {"feature", vector_json(o.feature)}});
    rec["tokens"] = nlohmann::json::array();
    for (const auto& t : s.tokens)
      rec["tokens"].push_back({{"surface", t.surface}, {"box", box_json(t.box)}, {"feature", vector_json(t.feature)}});
    if (references) rec["references"] = (*references)[i];
    out << rec.dump() << '\n';
  }
}

void export_corpus_jsonl(const std::filesystem::path& path, const SentenceCorpus& corpus) {
  std::ofstream out(path);
  if (!out) throw BundleError(BundleError::Code::kIo, "cannot write '" + path.string() + "'");
  for (const auto& s : corpus.sentences) {
    nlohmann::json rec;
    rec["text"] = s.text();
    rec["copy"] = s.copy;
    rec["template"] = s.template_index;
    out << rec.dump() << '\n';
  }
}

}  // namespace magic
