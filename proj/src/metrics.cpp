#include "magic/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

namespace magic {

namespace {

std::map<Tokens, int> ngram_counts(const Tokens& t, int n) {
  std::map<Tokens, int> c;
  if (static_cast<int>(t.size()) < n) return c;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i)
    ++c[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return c;
}

struct BleuStats {
  std::vector<double> matched, total;
  double cand_len = 0.0, ref_len = 0.0;
};

void accumulate_bleu(BleuStats& s, const Tokens& cand, const std::vector<Tokens>& refs, int max_n) {
  if (refs.empty()) throw std::invalid_argument("bleu: no references");
  for (int n = 1; n <= max_n; ++n) {
    std::map<Tokens, int> max_ref;
    for (const auto& r : refs)
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : ngram_counts(cand, n)) {
      auto it = max_ref.find(g);
      s.matched[static_cast<std::size_t>(n - 1)] += std::min(c, it == max_ref.end() ? 0 : it->second);
      s.total[static_cast<std::size_t>(n - 1)] += c;
    }
  }
  // Closest reference length, shorter on ties.
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto diff = [&](std::size_t l) { return l > cand.size() ? l - cand.size() : cand.size() - l; };
    if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
  }
  s.cand_len += static_cast<double>(cand.size());
  s.ref_len += static_cast<double>(best);
}

double finish_bleu(const BleuStats& s, int max_n) {
  double log_p = 0.0;
  for (int n = 0; n < max_n; ++n) {
    if (s.matched[static_cast<std::size_t>(n)] <= 0.0) return 0.0;
    log_p += std::log(s.matched[static_cast<std::size_t>(n)] / s.total[static_cast<std::size_t>(n)]);
  }
  const double bp = s.cand_len > s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.cand_len);
  return bp * std::exp(log_p / max_n);
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0, e = cur.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) out.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

double bleu(const Tokens& candidate, const std::vector<Tokens>& references, int max_n) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be positive");
  if (candidate.empty() || references.empty()) throw std::invalid_argument("bleu: empty candidate or references");
  for (const auto& r : references)
    if (r.empty()) throw std::invalid_argument("bleu: empty reference");
  BleuStats s{std::vector<double>(static_cast<std::size_t>(max_n)), std::vector<double>(static_cast<std::size_t>(max_n))};
  accumulate_bleu(s, candidate, references, max_n);
  return finish_bleu(s, max_n);
}

double corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references,
                   int max_n) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be positive");
  if (candidates.size() != references.size()) throw std::invalid_argument("corpus_bleu: size mismatch");
  BleuStats s{std::vector<double>(static_cast<std::size_t>(max_n)), std::vector<double>(static_cast<std::size_t>(max_n))};
  for (std::size_t i = 0; i < candidates.size(); ++i) accumulate_bleu(s, candidates[i], references[i], max_n);
  return finish_bleu(s, max_n);
}

CiderScorer::CiderScorer(const std::vector<std::vector<Tokens>>& references, double sigma) : sigma_(sigma) {
  if (references.empty()) throw std::invalid_argument("cider: no images");
  std::vector<std::vector<std::map<Tokens, int>>> counts(references.size());
  for (std::size_t i = 0; i < references.size(); ++i) {
    if (references[i].empty()) throw std::invalid_argument("cider: image without references");
    std::set<Tokens> seen;
    for (const auto& r : references[i]) {
      std::map<Tokens, int> c;
      for (int n = 1; n <= 4; ++n)
        for (const auto& [g, k] : ngram_counts(r, n)) c[g] += k;
      for (const auto& kv : c) seen.insert(kv.first);
      counts[i].push_back(std::move(c));
    }
    for (const auto& g : seen) ++df_[g];
  }
  log_images_ = std::log(static_cast<double>(references.size()));
  refs_.resize(references.size());
  for (std::size_t i = 0; i < references.size(); ++i)
    for (const auto& c : counts[i]) refs_[i].push_back(vectorize(c));
}

CiderScorer::Vec CiderScorer::vectorize(const std::map<Tokens, int>& counts) const {
  Vec v;
  v.weights.resize(4);
  v.norms.assign(4, 0.0);
  for (const auto& [g, tf] : counts) {
    const auto n = g.size() - 1;
    auto it = df_.find(g);
    const double df = std::log(std::max(1.0, it == df_.end() ? 0.0 : static_cast<double>(it->second)));
    const double w = tf * (log_images_ - df);
    v.weights[n][g] = w;
    v.norms[n] += w * w;
    if (n == 1) v.length += tf;
  }
  for (auto& n : v.norms) n = std::sqrt(n);
  return v;
}

double CiderScorer::score(std::size_t image, const Tokens& candidate) const {
  if (image >= refs_.size()) throw std::out_of_range("cider: image index");
  std::map<Tokens, int> c;
  for (int n = 1; n <= 4; ++n)
    for (const auto& [g, k] : ngram_counts(candidate, n)) c[g] += k;
  const Vec hyp = vectorize(c);
  double total = 0.0;
  for (const Vec& ref : refs_[image]) {
    const double delta = static_cast<double>(hyp.length - ref.length);
    double sum_n = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
      double val = 0.0;
      for (const auto& [g, w] : hyp.weights[n]) {
        auto it = ref.weights[n].find(g);
        if (it != ref.weights[n].end()) val += std::min(w, it->second) * it->second;
      }
      if (hyp.norms[n] != 0.0 && ref.norms[n] != 0.0) val /= hyp.norms[n] * ref.norms[n];
      val *= std::exp(-(delta * delta) / (2.0 * sigma_ * sigma_));
      sum_n += val;
    }
    total += sum_n / 4.0;
  }
  return total / static_cast<double>(refs_[image].size()) * 10.0;
}

double cider(const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
  const auto s = cider_per_image(candidates, references);
  double sum = 0.0;
  for (double x : s) sum += x;
  return s.empty() ? 0.0 : sum / static_cast<double>(s.size());
}

double div_n(const std::vector<Tokens>& set, int n) {
  if (n < 1) throw std::invalid_argument("div_n: n must be positive");
  std::set<Tokens> unique;
  std::size_t words = 0;
  for (const auto& t : set) {
    words += t.size();
    for (const auto& kv : ngram_counts(t, n)) unique.insert(kv.first);
  }
  return words == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(words);
}

double re_4(const std::vector<Tokens>& set) {
  double sum = 0.0;
  int counted = 0;
  for (const auto& t : set) {
    const auto c = ngram_counts(t, 4);
    if (c.empty()) continue;
    int repeated = 0, total = 0;
    for (const auto& kv : c) {
      repeated += kv.second - 1;
      total += kv.second;
    }
    sum += static_cast<double>(repeated) / total;
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / counted;
}

double self_cider(const std::vector<Tokens>& set) {
  const auto m = static_cast<Eigen::Index>(set.size());
  if (m < 2) throw std::invalid_argument("self_cider: needs at least two captions");
  const Eigen::MatrixXd K = self_cider_kernel(set, false);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K, Eigen::EigenvaluesOnly);
  Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  const double lmax = lambda.maxCoeff();
  if (lmax <= 0.0) return 0.0;
  // Below this the kernel is rank deficient up to round-off.
  lambda = (lambda.array() < kRankTolerance * lmax).select(0.0, lambda);
  const double r = (lambda.cwiseSqrt().sum() / std::sqrt(lmax) - 1.0) / static_cast<double>(m - 1);
  return std::clamp(r, 0.0, 1.0);
}

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json j;
  j["scores"] = scores;
  j["provenance"] = provenance;
  auto& arr = j["per_image"] = nlohmann::json::array();
  for (const auto& s : per_image)
    arr.push_back({{"image_id", s.image_id},
                   {"best_caption", s.best_caption},
                   {"CIDEr-D", s.cider},
                   {"BLEU-4", s.bleu4},
                   {"Div-1", s.div1},
                   {"Div-2", s.div2},
                   {"RE-4", s.re4},
                   {"SelfCIDEr", s.self_cider}});
  return j;
}

std::string EvaluationReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  for (const auto& [k, v] : scores) os << std::left << std::setw(12) << k << v << "\n";
  for (const char* key : {"seed", "N_k", "rule", "selection"})
    if (provenance.contains(key)) os << std::left << std::setw(12) << key << provenance.at(key).dump() << "\n";
  return os.str();
}

EvaluationReport evaluate_run(const std::map<std::string, std::vector<std::string>>& predictions,
                              const std::map<std::string, std::vector<std::string>>& references,
                              const nlohmann::json& provenance, bool parallel) {
  if (references.empty()) throw std::invalid_argument("evaluate_run: no reference images");
  std::vector<std::string> missing;
  for (const auto& [id, refs] : references) {
    auto it = predictions.find(id);
    if (it == predictions.end() || it->second.empty()) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "predictions missing for " + std::to_string(missing.size()) + " image(s):";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ...";
    throw std::invalid_argument(msg);
  }

  std::vector<std::string> ids;
  std::vector<std::vector<Tokens>> refs;
  std::vector<std::vector<Tokens>> cands;
  for (const auto& [id, r] : references) {
    ids.push_back(id);
    std::vector<Tokens> rt;
    for (const auto& s : r) rt.push_back(tokenize(s));
    refs.push_back(std::move(rt));
    std::vector<Tokens> ct;
    for (const auto& s : predictions.at(id)) ct.push_back(tokenize(s));
    cands.push_back(std::move(ct));
  }

  const CiderScorer scorer(refs);
  EvaluationReport report;
  report.provenance = provenance;
  report.per_image.resize(ids.size());
  std::vector<Tokens> best(ids.size());
  const auto n = static_cast<long>(ids.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (long ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    ImageScores& s = report.per_image[i];
    s.image_id = ids[i];
    std::size_t arg = 0;
    double top = -1.0;
    for (std::size_t c = 0; c < cands[i].size(); ++c) {
      const double v = scorer.score(i, cands[i][c]);
      if (v > top) {
        top = v;
        arg = c;
      }
    }
    best[i] = cands[i][arg];
    s.best_caption = predictions.at(ids[i])[arg];
    s.cider = top;
    s.bleu4 = best[i].empty() ? 0.0 : bleu(best[i], refs[i], 4);
    s.div1 = div_n(cands[i], 1);
    s.div2 = div_n(cands[i], 2);
    s.re4 = re_4(cands[i]);
    s.self_cider = cands[i].size() >= 2 ? self_cider(cands[i]) : 0.0;
  }

  double c = 0, d1 = 0, d2 = 0, r4 = 0, sc = 0;
  for (const auto& s : report.per_image) {
    c += s.cider;
    d1 += s.div1;
    d2 += s.div2;
    r4 += s.re4;
    sc += s.self_cider;
  }
  const double count = static_cast<double>(report.per_image.size());
  report.scores["CIDEr-D"] = c / count;
  for (int k = 1; k <= 4; ++k) report.scores["BLEU-" + std::to_string(k)] = corpus_bleu(best, refs, k);
  report.scores["Div-1"] = d1 / count;
  report.scores["Div-2"] = d2 / count;
  report.scores["RE-4"] = r4 / count;
  report.scores["SelfCIDEr"] = sc / count;
  report.scores["images"] = count;
  return report;
}

}  // namespace magic
