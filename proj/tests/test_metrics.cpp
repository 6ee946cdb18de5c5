#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <string>
#include <vector>

#include "treplina/metrics.hpp"
#include "treplina/rng.hpp"

using namespace treplina;

namespace {

// Brute-force ChrF counter, kept independent of the library: its own UTF-8
// walk and per-order F computation over naive substring maps.
std::vector<uint32_t> naive_codepoints(const std::string& s) {
  std::vector<uint32_t> cps;
  size_t i = 0;
  while (i < s.size()) {
    unsigned char b = s[i];
    int extra = b < 0x80 ? 0 : (b >> 5) == 6 ? 1 : (b >> 4) == 14 ? 2 : 3;
    uint32_t cp = b & (0xFF >> (extra + 2));
    if (extra == 0) cp = b;
    for (int k = 1; k <= extra && i + k < s.size(); ++k)
      cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    cps.push_back(cp);
    i += extra + 1;
  }
  return cps;
}

double brute_force_chrf(const std::vector<std::string>& hyps,
                        const std::vector<std::string>& refs) {
  long match[6] = {0}, htot[6] = {0}, rtot[6] = {0};
  for (size_t s = 0; s < hyps.size(); ++s) {
    std::string h, r;
    for (char c : hyps[s])
      if (!isspace(static_cast<unsigned char>(c))) h.push_back(c);
    for (char c : refs[s])
      if (!isspace(static_cast<unsigned char>(c))) r.push_back(c);
    auto hc = naive_codepoints(h), rc = naive_codepoints(r);
    for (int n = 1; n <= 6; ++n) {
      std::map<std::vector<uint32_t>, long> hm, rm;
      for (size_t i = 0; i + n <= hc.size(); ++i)
        ++hm[std::vector<uint32_t>(hc.begin() + i, hc.begin() + i + n)];
      for (size_t i = 0; i + n <= rc.size(); ++i)
        ++rm[std::vector<uint32_t>(rc.begin() + i, rc.begin() + i + n)];
      for (auto& [k, c] : hm) {
        htot[n - 1] += c;
        if (rm.count(k)) match[n - 1] += std::min(c, rm[k]);
      }
      for (auto& [k, c] : rm) rtot[n - 1] += c;
    }
  }
  double fsum = 0;
  int eff = 0;
  for (int n = 0; n < 6; ++n) {
    if (htot[n] == 0 || rtot[n] == 0) continue;
    ++eff;
    double p = double(match[n]) / htot[n];
    double rr = double(match[n]) / rtot[n];
    double den = 4 * p + rr;
    if (den > 0) fsum += 5 * p * rr / den;
  }
  return eff == 0 ? 0.0 : 100.0 * fsum / eff;
}

std::string random_word(Rng& rng) {
  static const std::vector<std::string> chars = {"a", "b", "c", "d", "क", "ख", "ग", "ᱚ", "ᱛ"};
  std::string w;
  int len = 1 + static_cast<int>(rng.uniform_below(5));
  for (int i = 0; i < len; ++i) w += chars[rng.uniform_below(chars.size())];
  return w;
}

std::string random_sentence(Rng& rng) {
  std::vector<std::string> words;
  int len = 1 + static_cast<int>(rng.uniform_below(8));
  for (int i = 0; i < len; ++i) words.push_back(random_word(rng));
  return join(words, " ");
}

}  // namespace

TEST_CASE("bleu hand values") {
  SECTION("perfect match is 100") {
    REQUIRE(bleu({"a b c d"}, {"a b c d"}) == Catch::Approx(100.0));
  }
  SECTION("brevity penalty only") {
    // all precisions 1, BP = exp(1 - 5/4)
    REQUIRE(bleu({"a b c d"}, {"a b c d e"}) == Catch::Approx(77.88).margin(0.01));
  }
  SECTION("disjoint vocabulary scores ~0") {
    REQUIRE(bleu({"x y z w"}, {"a b c d"}) < 1e-6);
  }
  SECTION("empty corpus rejected") {
    REQUIRE_THROWS_AS(bleu({}, {}), ValueError);
  }
  SECTION("length mismatch rejected") {
    REQUIRE_THROWS_AS(bleu({"a"}, {"a", "b"}), ValueError);
  }
  SECTION("empty hypothesis string scores 0") {
    REQUIRE(bleu({""}, {"a b"}) == 0.0);
  }
}

TEST_CASE("chrf hand values") {
  SECTION("perfect match is 100") {
    REQUIRE(chrf({"a b c d"}, {"a b c d"}) == Catch::Approx(100.0));
    REQUIRE(chrf({"a"}, {"a"}) == Catch::Approx(100.0));
  }
  SECTION("abc vs abd, frozen from the brute-force counter") {
    // orders: F1=2/3, F2=1/2, F3=0 (both sides have 3-grams, none match)
    REQUIRE(chrf({"abc"}, {"abd"}) == Catch::Approx(100.0 * (2.0 / 3 + 0.5) / 3).epsilon(1e-9));
    REQUIRE(chrf({"abc"}, {"abd"}) == Catch::Approx(brute_force_chrf({"abc"}, {"abd"})).epsilon(1e-9));
  }
  SECTION("empty hypothesis, nonempty reference") {
    REQUIRE(chrf({""}, {"abc"}) == 0.0);
  }
}

TEST_CASE("chrf matches brute-force counter on random pairs") {
  Rng rng(20250810);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> hyps, refs;
    int n = 1 + static_cast<int>(rng.uniform_below(4));
    for (int i = 0; i < n; ++i) {
      hyps.push_back(random_sentence(rng));
      // reference shares material with the hypothesis half of the time
      refs.push_back(rng.uniform01() < 0.5 ? hyps.back() + " " + random_word(rng)
                                           : random_sentence(rng));
    }
    double got = chrf(hyps, refs);
    double want = brute_force_chrf(hyps, refs);
    INFO("trial " << trial);
    REQUIRE(got == Catch::Approx(want).margin(1e-6));
  }
}

TEST_CASE("metrics are permutation invariant and bounded") {
  Rng rng(99);
  std::vector<std::string> hyps, refs;
  for (int i = 0; i < 12; ++i) {
    hyps.push_back(random_sentence(rng));
    refs.push_back(rng.uniform01() < 0.7 ? hyps.back() : random_sentence(rng));
  }
  double b0 = bleu(hyps, refs), c0 = chrf(hyps, refs);
  REQUIRE(b0 >= 0.0);
  REQUIRE(b0 <= 100.0);
  REQUIRE(c0 >= 0.0);
  REQUIRE(c0 <= 100.0);

  std::vector<size_t> idx(hyps.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(idx);
  std::vector<std::string> h2, r2;
  for (size_t i : idx) {
    h2.push_back(hyps[i]);
    r2.push_back(refs[i]);
  }
  REQUIRE(bleu(h2, r2) == Catch::Approx(b0).epsilon(1e-12));
  REQUIRE(chrf(h2, r2) == Catch::Approx(c0).epsilon(1e-12));
}

TEST_CASE("composite weighting") {
  REQUIRE(composite(40.15, 59.67) == Catch::Approx(47.96).margin(0.01));
  REQUIRE(composite(25.94, 46.68) == Catch::Approx(34.24).margin(0.01));
  REQUIRE(composite(0, 0) == 0.0);
}

TEST_CASE("nfc composes decomposed sequences") {
  // "e" + U+0301 and precomposed U+00E9 must score identically
  std::string decomposed = "caf\x65\xcc\x81";  // cafe with combining acute
  std::string composed = "caf\xc3\xa9";
  REQUIRE(chrf({decomposed}, {composed}) == Catch::Approx(100.0));
  REQUIRE(bleu({decomposed}, {composed}) == Catch::Approx(100.0));
}

TEST_CASE("report assembly") {
  EvalReport r = make_report({"a b"}, {"a b"}, "x->y");
  REQUIRE(r.bleu == Catch::Approx(100.0));
  REQUIRE(r.chrf == Catch::Approx(100.0));
  REQUIRE(r.composite == Catch::Approx(100.0));
  REQUIRE(r.n_examples == 1);
  REQUIRE(r.direction == "x->y");
}
