#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <set>

#include "treplina/data.hpp"

using namespace treplina;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/treplina_test_") + name;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  f << content;
}

}  // namespace

TEST_CASE("gen_corpus degenerate spec copies the sentence") {
  SyntheticLangSpec spec;
  spec.cipher_seed = 0;  // identity
  spec.reorder_rule = ReorderRule::identity;
  spec.fertility = 1;
  auto corpus = gen_corpus(spec, 20, 3, 6, 42);
  REQUIRE(corpus.size() == 20);
  for (const auto& ex : corpus) REQUIRE(ex.src_text == ex.tgt_text);
}

TEST_CASE("reverse rule applies the cipher to reversed tokens") {
  SyntheticLangSpec spec;
  spec.base_vocab_size = 10;
  spec.cipher_seed = 7;
  spec.reorder_rule = ReorderRule::reverse;
  auto pi = spec.cipher();
  // base t1 t2 t3 -> pi(t3) pi(t2) pi(t1)
  std::string lrl = lrl_sentence_from_base(spec, {1, 2, 3});
  std::string want = "w" + std::to_string(pi[3]) + " w" + std::to_string(pi[2]) + " w" +
                     std::to_string(pi[1]);
  REQUIRE(lrl == want);
}

TEST_CASE("gen_corpus is deterministic at scale") {
  SyntheticLangSpec spec;
  spec.reorder_rule = ReorderRule::reverse;
  spec.fertility = 2;
  auto a = gen_corpus(spec, 20000, 3, 8, 123);
  auto b = gen_corpus(spec, 20000, 3, 8, 123);
  REQUIRE(a.size() == 20000);
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].src_text == b[i].src_text);
    REQUIRE(a[i].tgt_text == b[i].tgt_text);
  }
}

TEST_CASE("gen_corpus rejects bad arguments") {
  SyntheticLangSpec spec;
  REQUIRE_THROWS_AS(gen_corpus(spec, 0, 3, 6, 1), ValueError);
  REQUIRE_THROWS_AS(gen_corpus(spec, 5, 6, 3, 1), ValueError);
  REQUIRE_THROWS_AS(gen_corpus(spec, 5, 0, 3, 1), ValueError);
}

TEST_CASE("synthetic pairs invert exactly") {
  for (auto rule : {ReorderRule::identity, ReorderRule::reverse, ReorderRule::swap_adjacent,
                    ReorderRule::rotate}) {
    for (int64_t fertility : {1, 2, 3}) {
      SyntheticLangSpec spec;
      spec.reorder_rule = rule;
      spec.rotate_k = 2;
      spec.fertility = fertility;
      spec.cipher_seed = 99;
      auto corpus = gen_corpus(spec, 50, 1, 9, 7);
      for (const auto& ex : corpus) {
        auto back = invert_lrl(spec, ex.src_text);
        REQUIRE(back.has_value());
        REQUIRE(*back == ex.tgt_text);
      }
    }
  }
}

TEST_CASE("reorder rule names round trip") {
  REQUIRE(parse_reorder_rule("identity").first == ReorderRule::identity);
  REQUIRE(parse_reorder_rule("rotate-3") == std::pair{ReorderRule::rotate, int64_t{3}});
  REQUIRE(reorder_rule_name(ReorderRule::swap_adjacent, 0) == "swap-adjacent");
  REQUIRE_THROWS_AS(parse_reorder_rule("shuffle"), UsageError);
}

TEST_CASE("csv loading") {
  SECTION("well-formed file passes through") {
    auto path = temp_path("ok.csv");
    write_file(path, "src,tgt\na b,c d\n\"x, y\",\"quoted \"\"q\"\"\"\nm,n\n");
    auto r = load_csv(path, "src", "tgt", "A", "B");
    REQUIRE(r.examples.size() == 3);
    REQUIRE(r.dropped_rows == 0);
    REQUIRE(r.examples[1].src_text == "x, y");
    REQUIRE(r.examples[1].tgt_text == "quoted \"q\"");
    REQUIRE(r.examples[0].src_lang == "A");
  }
  SECTION("missing column is named") {
    auto path = temp_path("cols.csv");
    write_file(path, "src,other\na,b\n");
    REQUIRE_THROWS_WITH(load_csv(path, "src", "tgt", "A", "B"),
                        Catch::Matchers::ContainsSubstring("tgt"));
  }
  SECTION("malformed row reports the line") {
    auto path = temp_path("bad.csv");
    write_file(path, "src,tgt\na,b\nc,d,e\n");
    REQUIRE_THROWS_WITH(load_csv(path, "src", "tgt", "A", "B"),
                        Catch::Matchers::ContainsSubstring("line 3"));
  }
  SECTION("rows with an empty side are dropped and counted") {
    auto path = temp_path("drop.csv");
    write_file(path, "src,tgt\na,b\n,x\ny,\n  ,z\nc,d\n");
    auto r = load_csv(path, "src", "tgt", "A", "B");
    REQUIRE(r.examples.size() == 2);
    REQUIRE(r.dropped_rows == 3);
  }
  SECTION("round trip through the writer") {
    auto path = temp_path("rt.csv");
    std::vector<ParallelExample> exs = {{"a \"b\"", "c,d", "A", "B"}, {"e", "f\ng", "A", "B"}};
    write_csv(path, exs, "s", "t");
    auto r = load_csv(path, "s", "t", "A", "B");
    REQUIRE(r.examples.size() == 2);
    REQUIRE(r.examples[0].src_text == "a \"b\"");
    REQUIRE(r.examples[0].tgt_text == "c,d");
    REQUIRE(r.examples[1].tgt_text == "f\ng");
  }
}

TEST_CASE("split rules") {
  auto dummy = [](int64_t n) {
    std::vector<ParallelExample> v(n);
    for (int64_t i = 0; i < n; ++i) v[i].src_text = "s" + std::to_string(i);
    return v;
  };
  REQUIRE(dev_count_for(1000) == 100);
  REQUIRE(dev_count_for(20000) == 1000);
  REQUIRE(dev_count_for(60000) == 2000);
  REQUIRE(dev_count_for(64) == 6);

  auto s = split_examples(dummy(1000), 5);
  REQUIRE(s.dev.size() == 100);
  REQUIRE(s.train.size() + s.dev.size() == 1000);

  SECTION("membership is deterministic under the seed") {
    auto s2 = split_examples(dummy(1000), 5);
    for (size_t i = 0; i < s.dev.size(); ++i) REQUIRE(s.dev[i].src_text == s2.dev[i].src_text);
    auto s3 = split_examples(dummy(1000), 6);
    bool same = true;
    for (size_t i = 0; i < s.dev.size(); ++i) same = same && s.dev[i].src_text == s3.dev[i].src_text;
    REQUIRE_FALSE(same);
  }
  SECTION("large corpora hit the caps") {
    REQUIRE(split_examples(dummy(20000), 1).dev.size() == 1000);
    REQUIRE(split_examples(dummy(60000), 1).dev.size() == 2000);
  }
}

TEST_CASE("tokenizer") {
  std::vector<ParallelExample> train = {{"w1 w2", "w3 w4", "L", "H"}, {"w2 w5", "w3", "L", "H"}};
  Vocabulary v = Vocabulary::build(train);

  SECTION("round trip for in-vocabulary text") {
    auto ids = v.tokenize("w1 w2");
    REQUIRE(ids.size() == 2);
    REQUIRE(v.detokenize(ids) == "w1 w2");
  }
  SECTION("unknown tokens map to UNK, never PAD") {
    auto ids = v.tokenize("w1 zzz");
    REQUIRE(ids[1] == Vocabulary::kUnk);
    for (int64_t id : ids) REQUIRE(id != Vocabulary::kPad);
  }
  SECTION("vocabulary size is distinct train tokens plus specials") {
    std::set<std::string> distinct;
    for (const auto& ex : train) {
      for (auto& w : split_whitespace("Translate to " + ex.tgt_lang + ":")) distinct.insert(w);
      for (auto& w : split_whitespace(ex.src_text)) distinct.insert(w);
      for (auto& w : split_whitespace(ex.tgt_text)) distinct.insert(w);
    }
    REQUIRE(v.size() == static_cast<int64_t>(distinct.size()) + 4);
  }
  SECTION("serialized word list round trips") {
    Vocabulary w = Vocabulary::from_words(v.words());
    REQUIRE(w.size() == v.size());
    REQUIRE(w.tokenize("w1 w5") == v.tokenize("w1 w5"));
  }
}

TEST_CASE("format_example") {
  std::vector<ParallelExample> pool = {{"w1 w2", "w3", "L", "H"},
                                       {"w4", "w5 w6", "L", "H"},
                                       {"w2", "w4", "L", "H"}};
  Vocabulary v = Vocabulary::build(pool);
  const ParallelExample& ex = pool[2];

  SECTION("train mode masks exactly the prompt prefix") {
    auto fe = format_example(ex, v, PromptMode::train);
    // BOS + [Translate to H:] + src
    REQUIRE(fe.prompt_len == 1 + 3 + 1);
    for (int64_t i = 0; i < fe.prompt_len; ++i) REQUIRE(fe.labels[i] == kIgnoreLabel);
    for (size_t i = fe.prompt_len; i < fe.ids.size(); ++i) REQUIRE(fe.labels[i] == fe.ids[i]);
    // target then EOS
    REQUIRE(fe.ids.back() == Vocabulary::kEos);
    REQUIRE(fe.ids.size() == static_cast<size_t>(fe.prompt_len) + 2);
  }
  SECTION("zero-shot is the bare template") {
    auto fe = format_example(ex, v, PromptMode::zero_shot);
    REQUIRE(fe.ids.size() == static_cast<size_t>(fe.prompt_len));
    for (int64_t l : fe.labels) REQUIRE(l == kIgnoreLabel);
  }
  SECTION("few-shot prepends exactly k exemplar blocks") {
    auto fe0 = format_example(ex, v, PromptMode::zero_shot);
    auto fe1 = format_example(ex, v, PromptMode::few_shot, 0, 0, 1, &pool);
    // one extra block: template(3) + src(2) + tgt(1) from pool[0]
    REQUIRE(fe1.ids.size() == fe0.ids.size() + 6);
    int64_t translate_id = v.tokenize("Translate")[0];
    int64_t count = 0;
    for (int64_t id : fe1.ids) count += id == translate_id ? 1 : 0;
    REQUIRE(count == 2);
  }
  SECTION("k beyond the pool is rejected") {
    REQUIRE_THROWS_AS(format_example(ex, v, PromptMode::few_shot, 0, 0, 9, &pool), ValueError);
  }
}

TEST_CASE("make_batch") {
  std::vector<ParallelExample> pool = {{"w1 w2 w3 w4", "w5", "L", "H"}, {"w1", "w2 w3", "L", "H"}};
  Vocabulary v = Vocabulary::build(pool);

  SECTION("left padding leads with pads") {
    auto a = format_example(pool[1], v, PromptMode::train);  // shorter
    auto b = format_example(pool[0], v, PromptMode::train);
    Batch batch = make_batch({a, b}, PadSide::left, 64);
    REQUIRE(batch.tokens.seq_len == static_cast<int64_t>(b.ids.size()));
    const int64_t lead = batch.tokens.seq_len - static_cast<int64_t>(a.ids.size());
    REQUIRE(lead > 0);
    for (int64_t t = 0; t < lead; ++t) {
      REQUIRE(batch.tokens.id(0, t) == Vocabulary::kPad);
      REQUIRE_FALSE(batch.tokens.on(0, t));
      REQUIRE(batch.labels[t] == kIgnoreLabel);
    }
    REQUIRE(batch.tokens.on(0, lead));
  }
  SECTION("right padding trails with pads") {
    auto a = format_example(pool[1], v, PromptMode::train);
    auto b = format_example(pool[0], v, PromptMode::train);
    Batch batch = make_batch({a, b}, PadSide::right, 64);
    const int64_t n = static_cast<int64_t>(a.ids.size());
    for (int64_t t = n; t < batch.tokens.seq_len; ++t) {
      REQUIRE(batch.tokens.id(0, t) == Vocabulary::kPad);
      REQUIRE_FALSE(batch.tokens.on(0, t));
    }
  }
  SECTION("source is truncated before the target") {
    auto fe = format_example(pool[0], v, PromptMode::train);  // 4 src + 1 tgt
    const int64_t full = static_cast<int64_t>(fe.ids.size());
    Batch batch = make_batch({fe}, PadSide::left, full - 2);
    // two source tokens removed, full target kept
    int64_t kept_targets = 0;
    for (int64_t l : batch.labels) kept_targets += l != kIgnoreLabel ? 1 : 0;
    REQUIRE(kept_targets == 2);  // target token + EOS
    REQUIRE(batch.tokens.seq_len == full - 2);
  }
  SECTION("fully truncated target is an error") {
    auto fe = format_example(pool[0], v, PromptMode::train);
    REQUIRE_THROWS_AS(make_batch({fe}, PadSide::left, 3), DataError);
  }
  SECTION("generous caps accommodate long-fertility sources") {
    SyntheticLangSpec spec;
    spec.fertility = 3;
    spec.reorder_rule = ReorderRule::reverse;
    auto corpus = gen_corpus(spec, 4, 80, 100, 3);
    Vocabulary vv = Vocabulary::build(corpus);
    std::vector<FormattedExample> fes;
    for (auto& ex : corpus) fes.push_back(format_example(ex, vv, PromptMode::train, 368, 256));
    REQUIRE_NOTHROW(make_batch(fes, PadSide::left, 368 + 256 + 8));
  }
  SECTION("source-only batches carry no labels") {
    Batch b = make_source_batch({"w1 w2", "w3"}, v, PadSide::right, 16);
    REQUIRE(b.tokens.size == 2);
    for (int64_t l : b.labels) REQUIRE(l == kIgnoreLabel);
    REQUIRE(b.tokens.on(0, 0));
    REQUIRE_FALSE(b.tokens.on(1, 1));  // padded
  }
}
