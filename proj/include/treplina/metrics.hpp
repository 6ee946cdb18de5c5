#pragma once

#include <unicode/bytestream.h>
#include <unicode/normalizer2.h>
#include <unicode/stringpiece.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "treplina/common.hpp"

namespace treplina {

struct EvalReport {
  double bleu = 0.0;
  double chrf = 0.0;
  double composite = 0.0;
  int64_t n_examples = 0;
  std::string direction;
};

/// Unicode NFC; both metrics normalize text before counting.
inline std::string nfc(const std::string& s) {
  UErrorCode ec = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(ec);
  if (U_FAILURE(ec)) throw Error("ICU NFC instance unavailable");
  std::string out;
  icu::StringByteSink<std::string> sink(&out);
  norm->normalizeUTF8(0, icu::StringPiece(s.data(), static_cast<int32_t>(s.size())), sink, nullptr,
                      ec);
  if (U_FAILURE(ec)) throw Error("NFC normalization failed");
  return out;
}

namespace detail {

constexpr int kBleuOrder = 4;
constexpr int kChrfOrder = 6;
constexpr double kChrfBeta = 2.0;
constexpr double kPrecisionFloor = 1e-16;

inline std::map<std::string, int64_t> token_ngrams(const std::vector<std::string>& toks, int n) {
  std::map<std::string, int64_t> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key.push_back('\x1f');
      key += toks[i + j];
    }
    ++counts[key];
  }
  return counts;
}

inline std::map<std::u32string, int64_t> char_ngrams(const std::vector<uint32_t>& cps, int n) {
  std::map<std::u32string, int64_t> counts;
  if (static_cast<int>(cps.size()) < n) return counts;
  for (size_t i = 0; i + n <= cps.size(); ++i) {
    std::u32string key(cps.begin() + i, cps.begin() + i + n);
    ++counts[key];
  }
  return counts;
}

inline void check_corpus(const std::vector<std::string>& hyps,
                         const std::vector<std::string>& refs) {
  if (hyps.empty()) throw ValueError("metric: empty corpus");
  if (hyps.size() != refs.size())
    throw ValueError("metric: " + std::to_string(hyps.size()) + " hypotheses vs " +
                     std::to_string(refs.size()) + " references");
}

}  // namespace detail

/// Corpus BLEU-4 over NFC + whitespace tokens: geometric mean of modified
/// n-gram precisions times the brevity penalty. Zero precisions are floored
/// at 1e-16 so fully disjoint corpora score ~0 instead of -inf.
inline double bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  detail::check_corpus(hyps, refs);
  int64_t matched[detail::kBleuOrder] = {0};
  int64_t total[detail::kBleuOrder] = {0};
  int64_t hyp_len = 0, ref_len = 0;
  for (size_t s = 0; s < hyps.size(); ++s) {
    auto hyp_toks = split_whitespace(nfc(hyps[s]));
    auto ref_toks = split_whitespace(nfc(refs[s]));
    hyp_len += static_cast<int64_t>(hyp_toks.size());
    ref_len += static_cast<int64_t>(ref_toks.size());
    for (int n = 1; n <= detail::kBleuOrder; ++n) {
      auto h = detail::token_ngrams(hyp_toks, n);
      auto r = detail::token_ngrams(ref_toks, n);
      for (auto& [key, cnt] : h) {
        total[n - 1] += cnt;
        auto it = r.find(key);
        if (it != r.end()) matched[n - 1] += std::min(cnt, it->second);
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  // Orders with no hypothesis n-grams at all (corpus shorter than n) are
  // excluded from the geometric mean; the floor handles zero matches.
  double log_prec = 0.0;
  int effective = 0;
  for (int n = 0; n < detail::kBleuOrder; ++n) {
    if (total[n] == 0) continue;
    ++effective;
    double p = matched[n] > 0 ? static_cast<double>(matched[n]) / static_cast<double>(total[n])
                              : detail::kPrecisionFloor;
    log_prec += std::log(p);
  }
  if (effective == 0) return 0.0;
  double bp = hyp_len < ref_len
                  ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                  : 1.0;
  return 100.0 * bp * std::exp(log_prec / effective);
}

/// Corpus ChrF: character n-grams n=1..6 over NFC text with whitespace
/// removed, F_beta with beta=2, statistics summed across segments, then the
/// per-order F scores averaged over orders where both sides have n-grams.
inline double chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  detail::check_corpus(hyps, refs);
  int64_t matched[detail::kChrfOrder] = {0};
  int64_t hyp_total[detail::kChrfOrder] = {0};
  int64_t ref_total[detail::kChrfOrder] = {0};
  auto strip_ws = [](const std::string& s) {
    std::string out;
    for (char c : s)
      if (!(c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'))
        out.push_back(c);
    return out;
  };
  for (size_t s = 0; s < hyps.size(); ++s) {
    auto hyp_cps = utf8_codepoints(strip_ws(nfc(hyps[s])));
    auto ref_cps = utf8_codepoints(strip_ws(nfc(refs[s])));
    for (int n = 1; n <= detail::kChrfOrder; ++n) {
      auto h = detail::char_ngrams(hyp_cps, n);
      auto r = detail::char_ngrams(ref_cps, n);
      for (auto& [key, cnt] : h) {
        hyp_total[n - 1] += cnt;
        auto it = r.find(key);
        if (it != r.end()) matched[n - 1] += std::min(cnt, it->second);
      }
      for (auto& [key, cnt] : r) ref_total[n - 1] += cnt;
    }
  }
  const double beta2 = detail::kChrfBeta * detail::kChrfBeta;
  double f_sum = 0.0;
  int effective = 0;
  for (int n = 0; n < detail::kChrfOrder; ++n) {
    if (hyp_total[n] == 0 || ref_total[n] == 0) continue;
    ++effective;
    double prec = static_cast<double>(matched[n]) / static_cast<double>(hyp_total[n]);
    double rec = static_cast<double>(matched[n]) / static_cast<double>(ref_total[n]);
    double denom = beta2 * prec + rec;
    if (denom > 0.0) f_sum += (1.0 + beta2) * prec * rec / denom;
  }
  if (effective == 0) return 0.0;
  return 100.0 * f_sum / effective;
}

inline double composite(double bleu_score, double chrf_score) {
  return 0.6 * bleu_score + 0.4 * chrf_score;
}

inline EvalReport make_report(const std::vector<std::string>& hyps,
                              const std::vector<std::string>& refs, std::string direction) {
  EvalReport r;
  r.bleu = bleu(hyps, refs);
  r.chrf = chrf(hyps, refs);
  r.composite = composite(r.bleu, r.chrf);
  r.n_examples = static_cast<int64_t>(hyps.size());
  r.direction = std::move(direction);
  return r;
}

}  // namespace treplina
