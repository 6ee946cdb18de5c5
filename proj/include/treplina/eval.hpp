#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "treplina/data.hpp"
#include "treplina/metrics.hpp"
#include "treplina/model.hpp"

namespace treplina {

/// Greedy continuation of a prompt; returns generated ids, EOS excluded.
/// Ties break toward the lowest id.
inline std::vector<int64_t> greedy_decode(const Model& model, std::vector<int64_t> ids,
                                          int64_t max_new_tokens) {
  NoGradGuard ng;
  const int64_t V = model.config().vocab_size;
  std::vector<int64_t> generated;
  while (static_cast<int64_t>(generated.size()) < max_new_tokens &&
         static_cast<int64_t>(ids.size()) < model.config().max_seq_len) {
    ForwardOutput out = model.forward(single_sequence(ids), /*collect_hidden=*/false);
    const int64_t T = static_cast<int64_t>(ids.size());
    const double* row = out.logits.value().data() + (T - 1) * V;
    int64_t best = 0;
    for (int64_t v = 1; v < V; ++v)
      if (row[v] > row[best]) best = v;
    if (best == Vocabulary::kEos) break;
    generated.push_back(best);
    ids.push_back(best);
  }
  return generated;
}

struct DecodeSettings {
  int64_t max_src_tokens = 256;
  int64_t max_new_tokens = 256;
};

inline std::string translate_one(const Model& model, const Vocabulary& vocab,
                                 const ParallelExample& ex, PromptMode mode,
                                 const DecodeSettings& ds, int64_t k = 0,
                                 const std::vector<ParallelExample>* pool = nullptr) {
  FormattedExample fe = format_example(ex, vocab, mode == PromptMode::train ? PromptMode::zero_shot : mode,
                                       ds.max_src_tokens, ds.max_new_tokens, k, pool);
  // leave room to generate
  const int64_t prompt_budget =
      std::max<int64_t>(2, model.config().max_seq_len - ds.max_new_tokens);
  Batch b = make_batch({fe}, PadSide::right, prompt_budget);
  std::vector<int64_t> prompt(b.tokens.ids.begin(), b.tokens.ids.begin() + b.tokens.seq_len);
  auto generated = greedy_decode(model, prompt, ds.max_new_tokens);
  return vocab.detokenize(generated);
}

/// Greedy-decodes every example and scores the corpus.
inline EvalReport evaluate_examples(const Model& model, const Vocabulary& vocab,
                                    const std::vector<ParallelExample>& examples, PromptMode mode,
                                    const DecodeSettings& ds, int64_t k = 0,
                                    const std::vector<ParallelExample>* pool = nullptr) {
  if (examples.empty()) throw ValueError("evaluate: no examples");
  std::vector<std::string> hyps, refs;
  hyps.reserve(examples.size());
  for (const auto& ex : examples) {
    hyps.push_back(translate_one(model, vocab, ex, mode, ds, k, pool));
    refs.push_back(ex.tgt_text);
  }
  return make_report(hyps, refs, examples.front().src_lang + "->" + examples.front().tgt_lang);
}

}  // namespace treplina
