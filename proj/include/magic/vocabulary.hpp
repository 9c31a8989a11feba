#pragma once

#include "magic/data_model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace magic {

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kBegin = 1;
  static constexpr int kEnd = 2;
  static constexpr int kUnknown = 3;
  static constexpr int kNumSpecials = 4;

  std::vector<std::string> words;  // id -> word
  std::unordered_map<std::string, int> word_to_id;
  int embedding_dim = 0;
  std::uint64_t seed = 0;
  /// embedding_dim x size, column per id.
  Eigen::MatrixXd embeddings;

  int size() const { return static_cast<int>(words.size()); }
  bool contains(const std::string& w) const { return word_to_id.count(w) != 0; }
  /// Id of `w`, or kUnknown.
  int id(const std::string& w) const;
  /// Raw feature of a surface that fills a copy slot (same space as embeddings).
  Eigen::VectorXd surface_feature(const std::string& surface) const;
  bool operator==(const Vocabulary& o) const {
    return words == o.words && embedding_dim == o.embedding_dim && seed == o.seed && embeddings == o.embeddings;
  }
};

/// Ids: the four specials, then every non-copy corpus word in lexicographic
/// order. Embedding columns are word_vector(word, embedding_dim, seed).
Vocabulary build_vocabulary(const SentenceCorpus& corpus, int embedding_dim, std::uint64_t seed);

void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocabulary(const std::filesystem::path& path);

/// Section codec shared with model checkpoints.
std::string encode_vocabulary(const Vocabulary& vocab);
Vocabulary decode_vocabulary(const std::string& bytes);

}  // namespace magic
