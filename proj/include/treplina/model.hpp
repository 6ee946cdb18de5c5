#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "treplina/tensor.hpp"

namespace treplina {

struct ModelConfig {
  int64_t vocab_size = 0;
  int64_t d_model = 32;
  int64_t n_layers = 4;
  int64_t n_heads = 4;
  int64_t d_ff = 96;
  int64_t max_seq_len = 64;
  uint64_t seed = 0;

  void validate() const {
    if (vocab_size < 1) throw ConfigError("model config: vocab_size must be positive");
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_seq_len < 1)
      throw ConfigError("model config: all dimensions must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("model config: d_model=" + std::to_string(d_model) +
                        " not divisible by n_heads=" + std::to_string(n_heads));
  }
};

inline const std::array<std::string, 7>& lora_site_names() {
  static const std::array<std::string, 7> names = {"q", "k", "v", "o", "gate", "up", "down"};
  return names;
}

struct LoraConfig {
  int64_t rank = 4;
  double alpha = 8.0;
  double dropout = 0.05;
  std::vector<std::string> target_sites{lora_site_names().begin(), lora_site_names().end()};

  double scaling() const { return alpha / static_cast<double>(rank); }

  void validate() const {
    if (rank < 1) throw ConfigError("lora config: rank must be positive");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("lora config: alpha must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("lora config: dropout must be in [0, 1)");
    if (target_sites.empty()) throw ConfigError("lora config: no target sites");
    for (const auto& s : target_sites) {
      bool known = false;
      for (const auto& n : lora_site_names()) known = known || n == s;
      if (!known) throw ConfigError("lora config: unknown site '" + s + "'");
    }
  }

  bool targets(const std::string& site) const {
    for (const auto& s : target_sites)
      if (s == site) return true;
    return false;
  }
};

/// Token id matrix plus attention mask, row-major [size x seq_len].
struct TokenBatch {
  int64_t size = 0;
  int64_t seq_len = 0;
  std::vector<int64_t> ids;
  std::vector<uint8_t> mask;

  int64_t id(int64_t b, int64_t t) const { return ids[b * seq_len + t]; }
  bool on(int64_t b, int64_t t) const { return mask[b * seq_len + t] != 0; }
  int64_t active_tokens() const {
    int64_t n = 0;
    for (uint8_t m : mask) n += m ? 1 : 0;
    return n;
  }
};

inline TokenBatch single_sequence(const std::vector<int64_t>& ids) {
  TokenBatch b;
  b.size = 1;
  b.seq_len = static_cast<int64_t>(ids.size());
  b.ids = ids;
  b.mask.assign(ids.size(), 1);
  return b;
}

struct ForwardOutput {
  Tensor logits;               // [batch, T, vocab]
  std::vector<Tensor> hidden;  // L+1 entries of [batch, T, d_model]; 0 = embedding output
};

/// Frozen-capable linear map with an optional low-rank additive adapter:
/// y = x W + (alpha/r) * ((dropout x) A) B, where A is random and B starts
/// at zero so attaching is a no-op until trained.
class SiteLinear {
 public:
  SiteLinear() = default;
  SiteLinear(int64_t in, int64_t out, Rng& rng, std::string name)
      : in_(in), out_(out), name_(std::move(name)) {
    weight_ = Tensor::randn({in, out}, rng, 0.02).set_requires_grad(true);
  }

  void attach_adapter(const LoraConfig& cfg, Rng& rng) {
    weight_.set_requires_grad(false);
    down_ = Tensor::randn({in_, cfg.rank}, rng, 0.02).set_requires_grad(true);
    up_ = Tensor::zeros({cfg.rank, out_}).set_requires_grad(true);
    scaling_ = cfg.scaling();
    dropout_ = cfg.dropout;
    has_adapter_ = true;
  }

  Tensor forward(const Tensor& x, bool adapters_on, bool train_mode, Rng* dropout_rng) const {
    Tensor y = matmul(x, weight_);
    if (!has_adapter_ || !adapters_on) return y;
    Tensor xa = x;
    if (train_mode && dropout_ > 0.0 && dropout_rng != nullptr) {
      std::vector<double> keep(x.numel());
      const double inv = 1.0 / (1.0 - dropout_);
      for (double& v : keep) v = dropout_rng->uniform01() < dropout_ ? 0.0 : inv;
      xa = mul(x, Tensor::from(x.shape(), std::move(keep)));
    }
    return add(y, scale(matmul(matmul(xa, down_), up_), scaling_));
  }

  bool has_adapter() const { return has_adapter_; }
  const std::string& name() const { return name_; }
  Tensor weight() { return weight_; }
  Tensor adapter_down() { return down_; }
  Tensor adapter_up() { return up_; }
  double scaling() const { return scaling_; }

 private:
  int64_t in_ = 0, out_ = 0;
  std::string name_;
  Tensor weight_;
  Tensor down_, up_;
  double scaling_ = 0.0, dropout_ = 0.0;
  bool has_adapter_ = false;
};

namespace detail {

struct Block {
  Tensor attn_norm_g, ffn_norm_g;
  SiteLinear q, k, v, o, gate, up, down;
};

}  // namespace detail

/// Pre-norm decoder-only transformer: rms-normed attention and gated
/// feed-forward blocks, learned absolute positions (indexed by the count of
/// real tokens before each position, so pad side does not matter), untied
/// output head. Exposes the embedding output plus every block output.
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    tok_emb_ = Tensor::randn({cfg_.vocab_size, cfg_.d_model}, rng, 0.02).set_requires_grad(true);
    pos_emb_ = Tensor::randn({cfg_.max_seq_len, cfg_.d_model}, rng, 0.02).set_requires_grad(true);
    blocks_.resize(cfg_.n_layers);
    for (int64_t l = 0; l < cfg_.n_layers; ++l) {
      auto& b = blocks_[l];
      const std::string p = "block" + std::to_string(l) + ".";
      b.attn_norm_g = Tensor::full({cfg_.d_model}, 1.0).set_requires_grad(true);
      b.q = SiteLinear(cfg_.d_model, cfg_.d_model, rng, p + "q");
      b.k = SiteLinear(cfg_.d_model, cfg_.d_model, rng, p + "k");
      b.v = SiteLinear(cfg_.d_model, cfg_.d_model, rng, p + "v");
      b.o = SiteLinear(cfg_.d_model, cfg_.d_model, rng, p + "o");
      b.ffn_norm_g = Tensor::full({cfg_.d_model}, 1.0).set_requires_grad(true);
      b.gate = SiteLinear(cfg_.d_model, cfg_.d_ff, rng, p + "gate");
      b.up = SiteLinear(cfg_.d_model, cfg_.d_ff, rng, p + "up");
      b.down = SiteLinear(cfg_.d_ff, cfg_.d_model, rng, p + "down");
    }
    final_norm_g_ = Tensor::full({cfg_.d_model}, 1.0).set_requires_grad(true);
    head_ = Tensor::randn({cfg_.d_model, cfg_.vocab_size}, rng, 0.02).set_requires_grad(true);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  const std::optional<LoraConfig>& lora_config() const { return lora_; }
  bool adapters_attached() const { return lora_.has_value(); }
  bool adapters_enabled() const { return adapters_enabled_; }
  int64_t step = 0;  // optimizer steps taken; persisted in checkpoints

  void attach_lora(const LoraConfig& cfg) {
    cfg.validate();
    if (lora_) throw ConfigError("adapters already attached");
    for (auto& [name, p] : parameters()) p.set_requires_grad(false);
    Rng rng(cfg_.seed ^ 0x9E3779B97F4A7C15ULL);
    for (auto& b : blocks_)
      for (SiteLinear* site : block_sites(b))
        if (cfg.targets(site_short_name(*site))) site->attach_adapter(cfg, rng);
    lora_ = cfg;
    adapters_enabled_ = true;
  }

  void set_adapters_enabled(bool on) {
    if (!lora_) throw ConfigError("no adapters attached");
    adapters_enabled_ = on;
  }

  ForwardOutput forward(const TokenBatch& in, bool collect_hidden, bool train_mode = false,
                        Rng* dropout_rng = nullptr) const {
    const int64_t B = in.size, T = in.seq_len, L = cfg_.n_layers;
    if (T < 1 || B < 1) throw ValueError("forward: empty batch");
    if (T > cfg_.max_seq_len)
      throw ValueError("forward: sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                       std::to_string(cfg_.max_seq_len));
    for (int64_t i = 0; i < B * T; ++i)
      if (in.ids[i] < 0 || in.ids[i] >= cfg_.vocab_size)
        throw ValueError("forward: token id " + std::to_string(in.ids[i]) + " out of range [0, " +
                         std::to_string(cfg_.vocab_size) + ")");
    const bool on = adapters_enabled_;
    std::vector<std::vector<Tensor>> taps(collect_hidden ? L + 1 : 0);
    std::vector<Tensor> logit_rows;
    logit_rows.reserve(B);
    for (int64_t b = 0; b < B; ++b) {
      int64_t real = 0;
      std::vector<int64_t> row_ids(T), pos_ids(T);
      for (int64_t t = 0; t < T; ++t) {
        row_ids[t] = in.id(b, t);
        pos_ids[t] = in.on(b, t) ? real++ : 0;
      }
      if (real == 0) throw ValueError("forward: fully masked row " + std::to_string(b));
      Tensor bias = attention_bias(in, b);
      Tensor x = add(take_rows(tok_emb_, row_ids), take_rows(pos_emb_, pos_ids));
      if (collect_hidden) taps[0].push_back(x);
      for (int64_t l = 0; l < L; ++l) {
        const auto& blk = blocks_[l];
        Tensor h = rms_norm(x, blk.attn_norm_g);
        x = add(x, attention(blk, h, bias, on, train_mode, dropout_rng));
        Tensor h2 = rms_norm(x, blk.ffn_norm_g);
        Tensor gated = mul(silu(blk.gate.forward(h2, on, train_mode, dropout_rng)),
                           blk.up.forward(h2, on, train_mode, dropout_rng));
        x = add(x, blk.down.forward(gated, on, train_mode, dropout_rng));
        if (collect_hidden) taps[l + 1].push_back(x);
      }
      logit_rows.push_back(matmul(rms_norm(x, final_norm_g_), head_));
    }
    ForwardOutput out;
    out.logits = stack0(logit_rows);
    if (collect_hidden) {
      out.hidden.reserve(L + 1);
      for (auto& layer_rows : taps) out.hidden.push_back(stack0(layer_rows));
    }
    return out;
  }

  /// Named parameters in a stable order (base first, then adapters).
  std::vector<std::pair<std::string, Tensor>> parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("tok_emb", tok_emb_);
    out.emplace_back("pos_emb", pos_emb_);
    for (int64_t l = 0; l < cfg_.n_layers; ++l) {
      auto& b = blocks_[l];
      const std::string p = "block" + std::to_string(l) + ".";
      out.emplace_back(p + "attn_norm.g", b.attn_norm_g);
      out.emplace_back(p + "ffn_norm.g", b.ffn_norm_g);
      for (SiteLinear* s : block_sites(b)) out.emplace_back(s->name() + ".weight", s->weight());
    }
    out.emplace_back("final_norm.g", final_norm_g_);
    out.emplace_back("head", head_);
    for (auto& b : blocks_)
      for (SiteLinear* s : block_sites(b))
        if (s->has_adapter()) {
          out.emplace_back(s->name() + ".lora_down", s->adapter_down());
          out.emplace_back(s->name() + ".lora_up", s->adapter_up());
        }
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> trainable_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, p] : parameters())
      if (p.requires_grad()) out.emplace_back(name, p);
    return out;
  }

  int64_t trainable_parameter_count() {
    int64_t n = 0;
    for (auto& [name, p] : trainable_parameters()) n += p.numel();
    return n;
  }

  std::vector<detail::Block>& blocks() { return blocks_; }

 private:
  static std::array<SiteLinear*, 7> block_sites(detail::Block& b) {
    return {&b.q, &b.k, &b.v, &b.o, &b.gate, &b.up, &b.down};
  }
  static std::string site_short_name(const SiteLinear& s) {
    auto pos = s.name().rfind('.');
    return s.name().substr(pos + 1);
  }

  /// Causal mask plus pad-column mask; a row whose whole window is masked
  /// (pad rows under left padding) attends to itself to stay finite.
  Tensor attention_bias(const TokenBatch& in, int64_t b) const {
    const int64_t T = in.seq_len;
    constexpr double kNeg = -1e30;
    std::vector<double> bias(T * T, kNeg);
    for (int64_t i = 0; i < T; ++i) {
      bool any = false;
      for (int64_t j = 0; j <= i; ++j)
        if (in.on(b, j)) {
          bias[i * T + j] = 0.0;
          any = true;
        }
      if (!any) bias[i * T + i] = 0.0;
    }
    return Tensor::from({T, T}, std::move(bias));
  }

  Tensor attention(const detail::Block& blk, const Tensor& h, const Tensor& bias, bool on,
                   bool train_mode, Rng* rng) const {
    const int64_t hd = cfg_.d_model / cfg_.n_heads;
    Tensor q = blk.q.forward(h, on, train_mode, rng);
    Tensor k = blk.k.forward(h, on, train_mode, rng);
    Tensor v = blk.v.forward(h, on, train_mode, rng);
    std::vector<Tensor> heads;
    heads.reserve(cfg_.n_heads);
    for (int64_t hh = 0; hh < cfg_.n_heads; ++hh) {
      Tensor qh = slice_cols(q, hh * hd, (hh + 1) * hd);
      Tensor kh = slice_cols(k, hh * hd, (hh + 1) * hd);
      Tensor vh = slice_cols(v, hh * hd, (hh + 1) * hd);
      Tensor scores = add(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(hd))), bias);
      heads.push_back(matmul(softmax_rows(scores), vh));
    }
    return blk.o.forward(concat_cols(heads), on, train_mode, rng);
  }

  ModelConfig cfg_;
  Tensor tok_emb_, pos_emb_, final_norm_g_, head_;
  std::vector<detail::Block> blocks_;
  std::optional<LoraConfig> lora_;
  bool adapters_enabled_ = false;
};

}  // namespace treplina
