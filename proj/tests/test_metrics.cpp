#include "magic/metrics.hpp"
#include "magic/rng.hpp"
#include "oracles/metric_oracles.hpp"

#include <doctest.h>

#include <algorithm>

using namespace magic;

namespace {

Tokens random_caption(Rng& rng, int min_len = 1, int max_len = 9) {
  static const std::vector<std::string> words = {"a", "red", "can", "on", "the", "desk", "of", "17.88"};
  Tokens t;
  const int n = rng.uniform_int(min_len, max_len);
  for (int i = 0; i < n; ++i) t.push_back(words[static_cast<std::size_t>(rng.uniform_int(0, 7))]);
  return t;
}

std::vector<Tokens> random_set(Rng& rng, int min_m, int max_m) {
  std::vector<Tokens> s;
  const int m = rng.uniform_int(min_m, max_m);
  for (int i = 0; i < m; ++i) s.push_back(random_caption(rng));
  return s;
}

}  // namespace

TEST_CASE("tokenize lowercases and strips outer punctuation") {
  CHECK(tokenize("A Red CAN, priced at 17.88!") == Tokens{"a", "red", "can", "priced", "at", "17.88"});
  CHECK(tokenize("  ... ").empty());
}

TEST_CASE("bleu anchors") {
  const Tokens c = tokenize("a red can on the desk");
  CHECK(bleu(c, {c}) == 1.0);
  CHECK(bleu(tokenize("x y z w"), {c}) == 0.0);
  CHECK_THROWS(bleu({}, {c}));
  CHECK_THROWS(bleu(c, {}));
  // "the cat sat" vs "the cat sat down": p1 = p2 = p3 = 1, no 4-grams -> 0
  // for BLEU-4, brevity penalty exp(1 - 4/3) for BLEU-3.
  const Tokens cand = tokenize("the cat sat"), ref = tokenize("the cat sat down");
  CHECK(bleu(cand, {ref}) == 0.0);
  CHECK(bleu(cand, {ref}, 3) == doctest::Approx(std::exp(1.0 - 4.0 / 3.0)).epsilon(1e-12));
  CHECK(bleu(cand, {ref}, 3) == doctest::Approx(oracle::bleu(cand, {ref}, 3)).epsilon(1e-12));
}

TEST_CASE("bleu matches oracle on random instances") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const Tokens c = random_caption(rng);
    std::vector<Tokens> refs = random_set(rng, 1, 4);
    for (int n = 1; n <= 4; ++n) CHECK(std::abs(bleu(c, refs, n) - oracle::bleu(c, refs, n)) <= 1e-9);
  }
}

TEST_CASE("cider anchors") {
  const std::vector<std::vector<Tokens>> refs = {{tokenize("one red can here")}, {tokenize("a book on the desk")},
                                                 {tokenize("some sign of acme")}};
  const std::vector<Tokens> same = {refs[0][0], refs[1][0], refs[2][0]};
  for (double s : cider_per_image(same, refs)) CHECK(s == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(cider_per_image({tokenize("zz qq"), refs[1][0], refs[2][0]}, refs)[0] == 0.0);
  CHECK_THROWS(cider({}, {}));
}

TEST_CASE("cider matches oracle on random corpora") {
  Rng rng(202);
  for (int trial = 0; trial < 100; ++trial) {
    const int images = rng.uniform_int(2, 5);
    std::vector<Tokens> cands;
    std::vector<std::vector<Tokens>> refs;
    for (int i = 0; i < images; ++i) {
      cands.push_back(random_caption(rng));
      refs.push_back(random_set(rng, 1, 4));
    }
    const auto got = cider_per_image(cands, refs, false);
    const auto want = oracle::cider(cands, refs);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-9);
    CHECK(cider_per_image(cands, refs, true) == got);
  }
}

TEST_CASE("div_n anchors and oracle") {
  CHECK(div_n({tokenize("a a a a")}, 1) == 0.25);
  CHECK(div_n({tokenize("a red can"), tokenize("on the desk")}, 1) == 1.0);
  // Bigrams: {a red, red can, a blue, blue can, a red} -> 4 unique over 8 words.
  CHECK(div_n({tokenize("a red can"), tokenize("a blue can"), tokenize("a red")}, 2) == 0.5);
  Rng rng(303);
  for (int trial = 0; trial < 100; ++trial) {
    const auto set = random_set(rng, 1, 5);
    for (int n = 1; n <= 2; ++n) CHECK(std::abs(div_n(set, n) - oracle::div_n(set, n)) <= 1e-9);
  }
}

TEST_CASE("re_4 anchors and oracle") {
  CHECK(re_4({tokenize("a b c d e f")}) == 0.0);
  CHECK(re_4({tokenize("a b c")}) == 0.0);
  // 9 four-grams; abcd x3, bcda x2, cdab x2, dabc x2 -> 5 repeats.
  CHECK(re_4({tokenize("a b c d a b c d a b c d")}) == doctest::Approx(5.0 / 9.0).epsilon(1e-15));
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    const auto set = random_set(rng, 1, 4);
    CHECK(std::abs(re_4(set) - oracle::re_4(set)) <= 1e-9);
  }
}

TEST_CASE("self_cider anchors") {
  const Tokens c = tokenize("a red can on the desk");
  CHECK(self_cider({c, c, c}) == 0.0);
  CHECK(self_cider({tokenize("a b"), tokenize("c d"), tokenize("e f")}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(self_cider({c}));
}

TEST_CASE("self_cider kernel and score match oracles") {
  Rng rng(505);
  for (int trial = 0; trial < 100; ++trial) {
    const auto set = random_set(rng, 2, 5);
    const Eigen::MatrixXd K = self_cider_kernel(set, false);
    const auto want = oracle::self_kernel(set);
    for (std::size_t i = 0; i < set.size(); ++i)
      for (std::size_t j = 0; j < set.size(); ++j)
        CHECK(std::abs(K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - want[i][j]) <= 1e-12);
    CHECK(self_cider_kernel(set, true) == K);
    const double expect = oracle::self_cider_from_eigenvalues(oracle::jacobi_eigenvalues(want));
    CHECK(std::abs(self_cider(set) - expect) <= 1e-9);
  }
}

TEST_CASE("self_cider on three captions matches the characteristic polynomial") {
  Rng rng(606);
  for (int trial = 0; trial < 100; ++trial) {
    const auto set = random_set(rng, 3, 3);
    const auto K = oracle::self_kernel(set);
    const double expect = oracle::self_cider_from_eigenvalues(oracle::eigen3x3(K));
    CHECK(std::abs(self_cider(set) - expect) <= 1e-9);
  }
}

TEST_CASE("metric invariants") {
  Rng rng(707);
  for (int trial = 0; trial < 50; ++trial) {
    auto set = random_set(rng, 2, 5);
    auto shuffled = set;
    rng.shuffle(shuffled);
    CHECK(div_n(set, 1) == doctest::Approx(div_n(shuffled, 1)).epsilon(1e-15));
    CHECK(re_4(set) == doctest::Approx(re_4(shuffled)).epsilon(1e-15));
    CHECK(self_cider(set) == doctest::Approx(self_cider(shuffled)).epsilon(1e-9));
    const double s = self_cider(set);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    auto dup = set;
    dup.push_back(set[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(set.size()) - 1))]);
    CHECK(self_cider(dup) <= s + 1e-12);
  }
}

TEST_CASE("evaluate_run: identity run, coverage and diversity ordering") {
  const std::map<std::string, std::vector<std::string>> refs = {
      {"i0", {"a red can on the desk"}}, {"i1", {"a book of acme"}}, {"i2", {"a sign priced at 4.99"}}};
  const auto rep = evaluate_run(refs, refs);
  CHECK(rep.scores.at("BLEU-4") == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.scores.at("CIDEr-D") == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(rep.scores.at("SelfCIDEr") == 0.0);
  CHECK(rep.per_image.size() == 3);
  for (const auto& [k, v] : rep.scores) CHECK(std::isfinite(v));

  auto missing = refs;
  missing.erase("i1");
  try {
    evaluate_run(missing, refs);
    FAIL("coverage gap accepted");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("i1") != std::string::npos);
  }

  std::map<std::string, std::vector<std::string>> diverse, dup;
  for (const auto& [id, r] : refs) {
    diverse[id] = {r[0], "a blue box near a lamp", "a card of orbit"};
    dup[id] = {r[0], r[0], r[0]};
  }
  const auto rd = evaluate_run(diverse, refs), ru = evaluate_run(dup, refs);
  CHECK(rd.scores.at("SelfCIDEr") > ru.scores.at("SelfCIDEr"));
  for (const auto* r : {&rd, &ru})
    for (const char* k : {"Div-1", "Div-2", "RE-4", "SelfCIDEr", "BLEU-1", "BLEU-4"}) {
      CHECK(r->scores.at(k) >= 0.0);
      CHECK(r->scores.at(k) <= 1.0);
    }
  CHECK(evaluate_run(diverse, refs, {}, true).to_json() == evaluate_run(diverse, refs, {}, false).to_json());
}
