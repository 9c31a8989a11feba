#pragma once

// Captioning and diversity metrics: BLEU, CIDEr-D, Div-n, RE-4, SelfCIDEr.

#include <Eigen/Dense>
#include <json.hpp>

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace magic {

using Tokens = std::vector<std::string>;

/// Lowercase, split on whitespace, strip leading and trailing punctuation of
/// each token (inner punctuation such as "17.88" survives), drop empties.
Tokens tokenize(std::string_view text);

/// Sentence BLEU with clipped n-gram precisions and brevity penalty; 0 when
/// any order has zero matches (no smoothing).
double bleu(const Tokens& candidate, const std::vector<Tokens>& references, int max_n = 4);

/// Corpus BLEU: counts and lengths pooled over all candidates.
double corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references,
                   int max_n = 4);

/// CIDEr-D with document frequencies from the reference corpus.
class CiderScorer {
 public:
  explicit CiderScorer(const std::vector<std::vector<Tokens>>& references, double sigma = 6.0);
  /// Score of `candidate` against the references of image `image`.
  double score(std::size_t image, const Tokens& candidate) const;
  std::size_t images() const { return refs_.size(); }

  struct Vec {
    std::vector<std::map<Tokens, double>> weights;  // per n
    std::vector<double> norms;
    int length = 0;
  };

 private:
  Vec vectorize(const std::map<Tokens, int>& counts) const;
  std::map<Tokens, int> df_;
  double log_images_ = 0.0;
  double sigma_;
  std::vector<std::vector<Vec>> refs_;
};

/// Per-image CIDEr-D of one candidate per image. `parallel` selects the
/// OpenMP kernel; results are identical either way.
std::vector<double> cider_per_image(const std::vector<Tokens>& candidates,
                                    const std::vector<std::vector<Tokens>>& references, bool parallel = true);

/// Corpus mean of cider_per_image.
double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references);

/// Unique n-grams across the set over total words across the set.
double div_n(const std::vector<Tokens>& set, int n);

/// Repeated 4-gram mass per caption, averaged over captions with 4-grams.
double re_4(const std::vector<Tokens>& set);

/// Pairwise similarity kernel used by self_cider: mean over n = 1..4 of the
/// cosine between n-gram count vectors, normalised to a unit diagonal.
Eigen::MatrixXd self_cider_kernel(const std::vector<Tokens>& set, bool parallel = true);

inline constexpr double kRankTolerance = 1e-12;

/// (sum_i sqrt(l_i) / sqrt(l_max) - 1) / (m - 1) over kernel eigenvalues,
/// clamped to [0, 1]. Eigenvalues below kRankTolerance * l_max count as zero.
/// Requires m >= 2.
double self_cider(const std::vector<Tokens>& set);

struct ImageScores {
  std::string image_id;
  std::string best_caption;
  double cider = 0.0;  // best of the candidates
  double bleu4 = 0.0;  // sentence BLEU of the best candidate
  double div1 = 0.0, div2 = 0.0, re4 = 0.0, self_cider = 0.0;
};

struct EvaluationReport {
  std::map<std::string, double> scores;
  std::vector<ImageScores> per_image;
  nlohmann::json provenance;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Best-of-N captioning scores per image plus set-level diversity scores.
/// Every image with references must have at least one prediction.
EvaluationReport evaluate_run(const std::map<std::string, std::vector<std::string>>& predictions,
                              const std::map<std::string, std::vector<std::string>>& references,
                              const nlohmann::json& provenance = nlohmann::json::object(), bool parallel = true);

}  // namespace magic
