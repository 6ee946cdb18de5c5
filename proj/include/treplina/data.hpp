#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "treplina/common.hpp"
#include "treplina/model.hpp"
#include "treplina/rng.hpp"

namespace treplina {

struct ParallelExample {
  std::string src_text;  // low-resource side
  std::string tgt_text;  // high-resource / pivot side
  std::string src_lang;
  std::string tgt_lang;
};

// ---- synthetic language pairs ----

enum class ReorderRule { identity, reverse, swap_adjacent, rotate };

inline std::string reorder_rule_name(ReorderRule r, int64_t k) {
  switch (r) {
    case ReorderRule::identity: return "identity";
    case ReorderRule::reverse: return "reverse";
    case ReorderRule::swap_adjacent: return "swap-adjacent";
    case ReorderRule::rotate: return "rotate-" + std::to_string(k);
  }
  return "identity";
}

inline std::pair<ReorderRule, int64_t> parse_reorder_rule(const std::string& s) {
  if (s == "identity") return {ReorderRule::identity, 0};
  if (s == "reverse") return {ReorderRule::reverse, 0};
  if (s == "swap-adjacent") return {ReorderRule::swap_adjacent, 0};
  if (s.rfind("rotate-", 0) == 0) {
    try {
      return {ReorderRule::rotate, std::stoll(s.substr(7))};
    } catch (...) {
    }
  }
  throw UsageError("unknown reorder rule '" + s +
                   "' (expected identity, reverse, swap-adjacent or rotate-<k>)");
}

/// A toy low-resource language: a token-substitution cipher of the base
/// vocabulary, a word-order rule, and a fertility factor (pieces emitted per
/// base token). The map is invertible, so a perfect translator exists.
/// cipher_seed 0 means the identity permutation.
struct SyntheticLangSpec {
  int64_t base_vocab_size = 48;
  uint64_t cipher_seed = 1;
  ReorderRule reorder_rule = ReorderRule::identity;
  int64_t rotate_k = 1;
  int64_t fertility = 1;
  std::string lrl_name = "lowlang";
  std::string hrl_name = "highlang";

  void validate() const {
    if (base_vocab_size < 1) throw ConfigError("synthetic spec: base_vocab_size must be positive");
    if (fertility < 1) throw ConfigError("synthetic spec: fertility must be >= 1");
  }

  std::vector<int64_t> cipher() const {
    if (cipher_seed == 0) {
      std::vector<int64_t> id(base_vocab_size);
      for (int64_t i = 0; i < base_vocab_size; ++i) id[i] = i;
      return id;
    }
    return Rng(cipher_seed).permutation(base_vocab_size);
  }
};

namespace detail {

inline std::vector<int64_t> apply_reorder(const std::vector<int64_t>& in, ReorderRule rule,
                                          int64_t k) {
  const int64_t n = static_cast<int64_t>(in.size());
  std::vector<int64_t> out(n);
  switch (rule) {
    case ReorderRule::identity: out = in; break;
    case ReorderRule::reverse:
      for (int64_t t = 0; t < n; ++t) out[t] = in[n - 1 - t];
      break;
    case ReorderRule::swap_adjacent:
      out = in;
      for (int64_t t = 0; t + 1 < n; t += 2) std::swap(out[t], out[t + 1]);
      break;
    case ReorderRule::rotate:
      for (int64_t t = 0; t < n; ++t) out[t] = in[((t + k) % n + n) % n];
      break;
  }
  return out;
}

inline std::vector<int64_t> invert_reorder(const std::vector<int64_t>& in, ReorderRule rule,
                                           int64_t k) {
  if (rule == ReorderRule::rotate) return apply_reorder(in, rule, -k);
  return apply_reorder(in, rule, k);  // the other rules are involutions
}

}  // namespace detail

inline std::string hrl_word(int64_t idx) { return "w" + std::to_string(idx); }

inline std::string lrl_piece(int64_t ciphered_idx, int64_t piece, int64_t fertility) {
  std::string w = "w" + std::to_string(ciphered_idx);
  if (fertility > 1) w += "." + std::to_string(piece);
  return w;
}

inline std::string lrl_sentence_from_base(const SyntheticLangSpec& spec,
                                          const std::vector<int64_t>& base) {
  const auto pi = spec.cipher();
  const auto reordered = detail::apply_reorder(base, spec.reorder_rule, spec.rotate_k);
  std::vector<std::string> words;
  words.reserve(reordered.size() * spec.fertility);
  for (int64_t idx : reordered)
    for (int64_t j = 0; j < spec.fertility; ++j) words.push_back(lrl_piece(pi[idx], j, spec.fertility));
  return join(words, " ");
}

/// Recovers the high-resource sentence from a generated low-resource one;
/// nullopt when the text is not a well-formed output of this spec.
inline std::optional<std::string> invert_lrl(const SyntheticLangSpec& spec,
                                             const std::string& lrl_text) {
  const auto toks = split_whitespace(lrl_text);
  if (toks.empty() || toks.size() % spec.fertility != 0) return std::nullopt;
  const auto pi = spec.cipher();
  std::vector<int64_t> inverse(pi.size());
  for (size_t i = 0; i < pi.size(); ++i) inverse[pi[i]] = static_cast<int64_t>(i);
  std::vector<int64_t> reordered;
  for (size_t c = 0; c < toks.size(); c += spec.fertility) {
    int64_t idx = -1;
    for (int64_t j = 0; j < spec.fertility; ++j) {
      const std::string& w = toks[c + j];
      if (w.size() < 2 || w[0] != 'w') return std::nullopt;
      int64_t parsed;
      try {
        parsed = std::stoll(w.substr(1, w.find('.') == std::string::npos ? std::string::npos
                                                                         : w.find('.') - 1));
      } catch (...) {
        return std::nullopt;
      }
      if (j == 0)
        idx = parsed;
      else if (parsed != idx)
        return std::nullopt;
    }
    if (idx < 0 || idx >= static_cast<int64_t>(pi.size())) return std::nullopt;
    reordered.push_back(inverse[idx]);
  }
  const auto base = detail::invert_reorder(reordered, spec.reorder_rule, spec.rotate_k);
  std::vector<std::string> words;
  for (int64_t idx : base) words.push_back(hrl_word(idx));
  return join(words, " ");
}

inline std::vector<ParallelExample> gen_corpus(const SyntheticLangSpec& spec, int64_t n,
                                               int64_t len_lo, int64_t len_hi, uint64_t seed) {
  spec.validate();
  if (n < 1) throw ValueError("gen_corpus: n must be >= 1");
  if (len_lo < 1 || len_lo > len_hi)
    throw ValueError("gen_corpus: invalid sentence length range [" + std::to_string(len_lo) +
                     ", " + std::to_string(len_hi) + "]");
  Rng rng(seed);
  std::vector<ParallelExample> out;
  out.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    const int64_t len = len_lo + static_cast<int64_t>(rng.uniform_below(len_hi - len_lo + 1));
    std::vector<int64_t> base(len);
    for (int64_t& b : base) b = static_cast<int64_t>(rng.uniform_below(spec.base_vocab_size));
    std::vector<std::string> hrl_words;
    for (int64_t idx : base) hrl_words.push_back(hrl_word(idx));
    ParallelExample ex;
    ex.src_text = lrl_sentence_from_base(spec, base);
    ex.tgt_text = join(hrl_words, " ");
    ex.src_lang = spec.lrl_name;
    ex.tgt_lang = spec.hrl_name;
    out.push_back(std::move(ex));
  }
  return out;
}

// ---- CSV ingestion ----

struct CsvLoadResult {
  std::vector<ParallelExample> examples;
  int64_t dropped_rows = 0;  // rows with an empty side
};

namespace detail {

struct CsvRecord {
  std::vector<std::string> fields;
  int64_t line = 0;
};

inline std::vector<CsvRecord> parse_csv(const std::string& content) {
  std::vector<CsvRecord> records;
  CsvRecord cur;
  std::string field;
  bool in_quotes = false, field_started = false;
  int64_t line = 1;
  cur.line = 1;
  auto end_field = [&]() {
    cur.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&](int64_t next_line) {
    end_field();
    records.push_back(std::move(cur));
    cur = CsvRecord{};
    cur.line = next_line;
  };
  for (size_t i = 0; i < content.size(); ++i) {
    char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field_started = true;
        break;
      case ',': end_field(); break;
      case '\r': break;
      case '\n':
        ++line;
        end_record(line);
        break;
      default:
        field.push_back(c);
        field_started = true;
        break;
    }
  }
  if (in_quotes) throw DataError("line " + std::to_string(cur.line) + ": unterminated quoted field");
  if (field_started || !field.empty() || !cur.fields.empty()) end_record(line);
  return records;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

}  // namespace detail

inline CsvLoadResult load_csv(const std::string& path, const std::string& src_col,
                              const std::string& tgt_col, const std::string& src_lang,
                              const std::string& tgt_lang) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  auto records = detail::parse_csv(content);
  if (records.empty()) throw DataError("'" + path + "' is empty");
  const auto& header = records[0].fields;
  auto col_of = [&](const std::string& name) {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int64_t>(i);
    throw DataError("column '" + name + "' not found in header of '" + path + "'");
  };
  const int64_t si = col_of(src_col), ti = col_of(tgt_col);
  CsvLoadResult result;
  for (size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != header.size())
      throw DataError("line " + std::to_string(rec.line) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(rec.fields.size()));
    ParallelExample ex;
    ex.src_text = rec.fields[si];
    ex.tgt_text = rec.fields[ti];
    ex.src_lang = src_lang;
    ex.tgt_lang = tgt_lang;
    if (trim(ex.src_text).empty() || trim(ex.tgt_text).empty()) {
      ++result.dropped_rows;
      continue;
    }
    result.examples.push_back(std::move(ex));
  }
  return result;
}

inline void write_csv(const std::string& path, const std::vector<ParallelExample>& examples,
                      const std::string& src_col, const std::string& tgt_col) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << detail::csv_quote(src_col) << ',' << detail::csv_quote(tgt_col) << '\n';
  for (const auto& ex : examples)
    f << detail::csv_quote(ex.src_text) << ',' << detail::csv_quote(ex.tgt_text) << '\n';
}

// ---- train/dev split ----

/// 10% dev for corpora up to 1k examples, otherwise 5% clamped to [1000, 2000].
inline int64_t dev_count_for(int64_t total) {
  if (total <= 1000) return total / 10;
  return std::clamp<int64_t>(total / 20, 1000, 2000);
}

struct SplitResult {
  std::vector<ParallelExample> train, dev;
};

inline SplitResult split_examples(std::vector<ParallelExample> examples, uint64_t seed) {
  if (examples.empty()) throw ValueError("split: no examples");
  Rng rng(seed);
  rng.shuffle(examples);
  const int64_t dev_n = dev_count_for(static_cast<int64_t>(examples.size()));
  SplitResult out;
  out.dev.assign(examples.begin(), examples.begin() + dev_n);
  out.train.assign(examples.begin() + dev_n, examples.end());
  return out;
}

// ---- whitespace tokenizer ----

class Vocabulary {
 public:
  static constexpr int64_t kPad = 0, kBos = 1, kEos = 2, kUnk = 3;

  Vocabulary() : words_{"<pad>", "<bos>", "<eos>", "<unk>"} {}

  /// Builds from the training split only: every token the trainer will see,
  /// i.e. the prompt template words per target language plus both sides.
  static Vocabulary build(const std::vector<ParallelExample>& train) {
    Vocabulary v;
    for (const auto& ex : train) {
      v.add_tokens(split_whitespace("Translate to " + ex.tgt_lang + ":"));
      v.add_tokens(split_whitespace(ex.src_text));
      v.add_tokens(split_whitespace(ex.tgt_text));
    }
    return v;
  }

  static Vocabulary from_words(std::vector<std::string> words) {
    Vocabulary v;
    if (words.size() < 4) throw DataError("vocabulary: missing special tokens");
    v.words_ = std::move(words);
    for (size_t i = 4; i < v.words_.size(); ++i) v.index_[v.words_[i]] = static_cast<int64_t>(i);
    return v;
  }

  int64_t size() const { return static_cast<int64_t>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& word(int64_t id) const { return words_[id]; }

  int64_t id_of(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<int64_t> tokenize(const std::string& text) const {
    std::vector<int64_t> ids;
    for (const auto& w : split_whitespace(text)) ids.push_back(id_of(w));
    return ids;
  }

  std::string detokenize(const std::vector<int64_t>& ids) const {
    std::vector<std::string> words;
    for (int64_t id : ids) {
      if (id == kPad || id == kBos || id == kEos) continue;
      if (id < 0 || id >= size()) continue;
      words.push_back(words_[id]);
    }
    return join(words, " ");
  }

 private:
  void add_tokens(const std::vector<std::string>& toks) {
    for (const auto& w : toks)
      if (!index_.count(w)) {
        index_[w] = size();
        words_.push_back(w);
      }
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int64_t> index_;
};

// ---- prompt formatting ----

enum class PromptMode { train, zero_shot, few_shot };

constexpr int64_t kIgnoreLabel = -100;

struct FormattedExample {
  std::vector<int64_t> ids;
  std::vector<int64_t> labels;  // kIgnoreLabel everywhere except target tokens
  int64_t prompt_len = 0;       // tokens before the target, including BOS
  int64_t src_begin = 0, src_end = 0;  // query source span, truncated first
};

inline std::vector<int64_t> prompt_template_ids(const Vocabulary& v, const std::string& tgt_lang) {
  return v.tokenize("Translate to " + tgt_lang + ":");
}

/// "Translate to {lang}:\n{src}\n", optionally preceded by k exemplar blocks
/// (the first k training pairs); train mode appends the target and masks the
/// prompt out of the labels.
inline FormattedExample format_example(const ParallelExample& ex, const Vocabulary& v,
                                       PromptMode mode, int64_t max_src_tokens = 0,
                                       int64_t max_tgt_tokens = 0, int64_t k = 0,
                                       const std::vector<ParallelExample>* pool = nullptr) {
  auto cap = [](std::vector<int64_t> ids, int64_t limit) {
    if (limit > 0 && static_cast<int64_t>(ids.size()) > limit) ids.resize(limit);
    return ids;
  };
  FormattedExample out;
  out.ids.push_back(Vocabulary::kBos);
  if (mode == PromptMode::few_shot) {
    if (pool == nullptr || k > static_cast<int64_t>(pool->size()))
      throw ValueError("few-shot: k=" + std::to_string(k) + " exceeds exemplar pool");
    for (int64_t i = 0; i < k; ++i) {
      const auto& shot = (*pool)[i];
      for (int64_t id : prompt_template_ids(v, shot.tgt_lang)) out.ids.push_back(id);
      for (int64_t id : cap(v.tokenize(shot.src_text), max_src_tokens)) out.ids.push_back(id);
      for (int64_t id : cap(v.tokenize(shot.tgt_text), max_tgt_tokens)) out.ids.push_back(id);
    }
  }
  for (int64_t id : prompt_template_ids(v, ex.tgt_lang)) out.ids.push_back(id);
  out.src_begin = static_cast<int64_t>(out.ids.size());
  for (int64_t id : cap(v.tokenize(ex.src_text), max_src_tokens)) out.ids.push_back(id);
  out.src_end = static_cast<int64_t>(out.ids.size());
  out.prompt_len = static_cast<int64_t>(out.ids.size());
  if (mode == PromptMode::train) {
    for (int64_t id : cap(v.tokenize(ex.tgt_text), max_tgt_tokens)) out.ids.push_back(id);
    out.ids.push_back(Vocabulary::kEos);
  }
  out.labels.assign(out.ids.size(), kIgnoreLabel);
  for (size_t i = out.prompt_len; i < out.ids.size(); ++i) out.labels[i] = out.ids[i];
  return out;
}

// ---- batch assembly ----

enum class PadSide { left, right };

struct Batch {
  TokenBatch tokens;
  std::vector<int64_t> labels;  // kIgnoreLabel on prompt and pad positions
};

/// Pads a group of formatted examples into a rectangle. Sequences over
/// max_len lose source tokens first, then target tokens from the end; an
/// example whose target is truncated away entirely is an error.
inline Batch make_batch(std::vector<FormattedExample> exs, PadSide side, int64_t max_len) {
  if (exs.empty()) throw ValueError("make_batch: no examples");
  if (max_len < 1) throw ValueError("make_batch: max_len must be positive");
  for (auto& ex : exs) {
    const bool had_target = std::any_of(ex.labels.begin(), ex.labels.end(),
                                        [](int64_t l) { return l != kIgnoreLabel; });
    while (static_cast<int64_t>(ex.ids.size()) > max_len && ex.src_end > ex.src_begin) {
      ex.ids.erase(ex.ids.begin() + ex.src_end - 1);
      ex.labels.erase(ex.labels.begin() + ex.src_end - 1);
      --ex.src_end;
      --ex.prompt_len;
    }
    while (static_cast<int64_t>(ex.ids.size()) > max_len &&
           static_cast<int64_t>(ex.ids.size()) > ex.prompt_len) {
      ex.ids.pop_back();
      ex.labels.pop_back();
    }
    if (had_target && std::none_of(ex.labels.begin(), ex.labels.end(),
                                   [](int64_t l) { return l != kIgnoreLabel; }))
      throw DataError("make_batch: target fully truncated at max_len " + std::to_string(max_len));
    // Prompt-only examples that still exceed the budget lose leading context
    // after BOS (few-shot exemplars go first).
    while (static_cast<int64_t>(ex.ids.size()) > max_len) {
      ex.ids.erase(ex.ids.begin() + 1);
      ex.labels.erase(ex.labels.begin() + 1);
      if (ex.prompt_len > 1) --ex.prompt_len;
    }
  }
  int64_t width = 0;
  for (const auto& ex : exs) width = std::max<int64_t>(width, ex.ids.size());
  Batch out;
  out.tokens.size = static_cast<int64_t>(exs.size());
  out.tokens.seq_len = width;
  out.tokens.ids.assign(exs.size() * width, Vocabulary::kPad);
  out.tokens.mask.assign(exs.size() * width, 0);
  out.labels.assign(exs.size() * width, kIgnoreLabel);
  for (size_t b = 0; b < exs.size(); ++b) {
    const auto& ex = exs[b];
    const int64_t n = static_cast<int64_t>(ex.ids.size());
    const int64_t off = side == PadSide::left ? width - n : 0;
    for (int64_t t = 0; t < n; ++t) {
      out.tokens.ids[b * width + off + t] = ex.ids[t];
      out.tokens.mask[b * width + off + t] = 1;
      out.labels[b * width + off + t] = ex.labels[t];
    }
  }
  return out;
}

/// Raw source-only strings, no prompt or specials; used by alignment passes.
inline Batch make_source_batch(const std::vector<std::string>& texts, const Vocabulary& v,
                               PadSide side, int64_t max_len) {
  std::vector<FormattedExample> exs;
  for (const auto& text : texts) {
    FormattedExample fe;
    fe.ids = v.tokenize(text);
    fe.labels.assign(fe.ids.size(), kIgnoreLabel);
    fe.prompt_len = static_cast<int64_t>(fe.ids.size());
    fe.src_begin = 0;
    fe.src_end = fe.prompt_len;
    exs.push_back(std::move(fe));
  }
  return make_batch(std::move(exs), side, max_len);
}

}  // namespace treplina
