#include "magic/vocabulary.hpp"

#include "magic/bundle.hpp"

#include <set>
#include <stdexcept>

namespace magic {

namespace {

const char* const kSpecialNames[Vocabulary::kNumSpecials] = {"<pad>", "<bos>", "<eos>", "<unk>"};

void index_words(Vocabulary& v) {
  v.word_to_id.clear();
  for (int i = 0; i < v.size(); ++i) v.word_to_id.emplace(v.words[static_cast<std::size_t>(i)], i);
}

}  // namespace

int Vocabulary::id(const std::string& w) const {
  auto it = word_to_id.find(w);
  return it == word_to_id.end() ? kUnknown : it->second;
}

Eigen::VectorXd Vocabulary::surface_feature(const std::string& surface) const {
  return surface_embedding(surface, embedding_dim, seed);
}

Vocabulary build_vocabulary(const SentenceCorpus& corpus, int embedding_dim, std::uint64_t seed) {
  if (corpus.sentences.empty()) throw std::invalid_argument("build_vocabulary: empty corpus");
  if (embedding_dim < 1) throw std::invalid_argument("build_vocabulary: embedding_dim must be positive");
  std::set<std::string> seen;
  for (const auto& s : corpus.sentences)
    for (std::size_t i = 0; i < s.words.size(); ++i)
      if (!s.copy[i]) seen.insert(s.words[i]);
  Vocabulary v;
  v.embedding_dim = embedding_dim;
  v.seed = seed;
  for (const char* name : kSpecialNames) v.words.emplace_back(name);
  for (const auto& w : seen) v.words.push_back(w);
  index_words(v);
  v.embeddings.resize(embedding_dim, v.size());
  for (int i = 0; i < v.size(); ++i) v.embeddings.col(i) = word_vector(v.words[static_cast<std::size_t>(i)], embedding_dim, seed);
  return v;
}

std::string encode_vocabulary(const Vocabulary& vocab) {
  ByteWriter w;
  w.u64(static_cast<std::uint64_t>(vocab.embedding_dim));
  w.u64(vocab.seed);
  w.u64(vocab.words.size());
  for (const auto& word : vocab.words) w.str(word);
  w.matrix(vocab.embeddings);
  return w.take();
}

Vocabulary decode_vocabulary(const std::string& bytes) {
  ByteReader r(bytes);
  Vocabulary v;
  v.embedding_dim = static_cast<int>(r.u64());
  v.seed = r.u64();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) v.words.push_back(r.str());
  v.embeddings = r.matrix();
  index_words(v);
  if (v.word_to_id.size() != v.words.size() || v.embeddings.cols() != v.size() ||
      v.embeddings.rows() != v.embedding_dim)
    throw BundleError(BundleError::Code::kFormat, "bundle: inconsistent vocabulary");
  return v;
}

void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  write_bundle(path, BundleKind::kVocabulary, {{"vocabulary", encode_vocabulary(vocab)}});
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  return decode_vocabulary(find_section(read_bundle(path, BundleKind::kVocabulary), "vocabulary").bytes);
}

}  // namespace magic
