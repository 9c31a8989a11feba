#include "magic/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace magic {

namespace {

std::vector<std::map<Tokens, double>> order_counts(const Tokens& t) {
  std::vector<std::map<Tokens, double>> out(4);
  for (int n = 1; n <= 4; ++n)
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i)
      out[static_cast<std::size_t>(n - 1)][Tokens(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                  t.begin() + static_cast<std::ptrdiff_t>(i) + n)] += 1.0;
  return out;
}

double cosine(const std::map<Tokens, double>& a, const std::map<Tokens, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [g, w] : a) {
    na += w * w;
    auto it = b.find(g);
    if (it != b.end()) dot += w * it->second;
  }
  for (const auto& kv : b) nb += kv.second * kv.second;
  return na > 0.0 && nb > 0.0 ? dot / std::sqrt(na * nb) : 0.0;
}

}  // namespace

std::vector<double> cider_per_image(const std::vector<Tokens>& candidates,
                                    const std::vector<std::vector<Tokens>>& references, bool parallel) {
  if (candidates.size() != references.size()) throw std::invalid_argument("cider: size mismatch");
  const CiderScorer scorer(references);
  std::vector<double> out(candidates.size());
  const auto n = static_cast<long>(candidates.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (long i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] = scorer.score(static_cast<std::size_t>(i), candidates[static_cast<std::size_t>(i)]);
  return out;
}

Eigen::MatrixXd self_cider_kernel(const std::vector<Tokens>& set, bool parallel) {
  const auto m = static_cast<long>(set.size());
  std::vector<std::vector<std::map<Tokens, double>>> counts(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) counts[i] = order_counts(set[i]);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(m, m);
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (long i = 0; i < m; ++i) {
    for (long j = i; j < m; ++j) {
      double s = 0.0;
      for (std::size_t n = 0; n < 4; ++n)
        s += cosine(counts[static_cast<std::size_t>(i)][n], counts[static_cast<std::size_t>(j)][n]);
      K(i, j) = K(j, i) = s / 4.0;
    }
  }
  // Short captions lack higher orders, so the raw diagonal can be below one.
  const Eigen::VectorXd diag = K.diagonal();
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < m; ++j) {
      const double dd = diag(i) * diag(j);
      K(i, j) = dd > 0.0 ? K(i, j) / std::sqrt(dd) : (i == j ? 1.0 : 0.0);
    }
  return K;
}

}  // namespace magic
