#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "treplina/align.hpp"
#include "treplina/checkpoint.hpp"
#include "treplina/data.hpp"
#include "treplina/eval.hpp"
#include "treplina/model.hpp"
#include "treplina/tensor.hpp"

namespace treplina {

struct TrainConfig {
  double lr = 2e-4;
  double warmup_ratio = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  int64_t grad_accum = 16;
  int64_t micro_batch = 1;
  int64_t epochs = 1;
  double clip_norm = 1.0;
  double label_smoothing = 0.1;
  int64_t max_src_len = 256;
  int64_t max_tgt_len = 256;
  uint64_t seed = 0;
  int64_t dev_eval_cap = 500;
  bool pad_to_multiple_8 = false;  // accepted for config parity; no effect here

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train config: lr must be positive");
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0)
      throw ConfigError("train config: warmup_ratio must be in [0, 1)");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
      throw ConfigError("train config: label_smoothing must be in [0, 1)");
    if (grad_accum < 1 || micro_batch < 1 || epochs < 1 || max_src_len < 1 || max_tgt_len < 1 ||
        dev_eval_cap < 1)
      throw ConfigError("train config: counts must be positive");
    if (!(clip_norm > 0.0)) throw ConfigError("train config: clip_norm must be positive");
  }
};

/// Mean over valid positions of (1-eps) * NLL(gold) + eps * mean-vocab NLL.
/// Rows labeled kIgnoreLabel contribute nothing.
inline Tensor label_smoothed_ce(const Tensor& logits, const std::vector<int64_t>& labels,
                                double eps) {
  if (logits.ndim() != 2) throw ShapeError("cross entropy: logits must be [positions x vocab]");
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("cross entropy: eps must be in [0, 1)");
  const int64_t N = logits.dim(0), V = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw ShapeError("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(N) + " rows");
  std::vector<int64_t> valid;
  for (int64_t i = 0; i < N; ++i) {
    if (labels[i] == kIgnoreLabel) continue;
    if (labels[i] < 0 || labels[i] >= V)
      throw ValueError("cross entropy: label " + std::to_string(labels[i]) + " out of range");
    valid.push_back(i);
  }
  if (valid.empty()) throw ValueError("cross entropy: no valid target positions");
  const double inv_n = 1.0 / static_cast<double>(valid.size());
  double total = 0.0;
  for (int64_t i : valid) {
    const double* row = logits.value().data() + i * V;
    double mx = row[0], mean_x = 0.0;
    for (int64_t v = 0; v < V; ++v) {
      mx = std::max(mx, row[v]);
      mean_x += row[v];
    }
    mean_x /= static_cast<double>(V);
    double z = 0.0;
    for (int64_t v = 0; v < V; ++v) z += std::exp(row[v] - mx);
    const double lse = mx + std::log(z);
    total += lse - (1.0 - eps) * row[labels[i]] - eps * mean_x;
  }
  auto ln = logits.node();
  return detail::make_result({}, {total * inv_n}, {logits}, [ln, labels, valid, eps, V,
                                                             inv_n](TensorNode* out) {
    return [ln, labels, valid, eps, V, inv_n, out]() {
      ln->ensure_grad();
      const double go = out->grad[0] * inv_n;
      for (int64_t i : valid) {
        const double* row = ln->value.data() + i * V;
        double* g = ln->grad.data() + i * V;
        double mx = row[0];
        for (int64_t v = 0; v < V; ++v) mx = std::max(mx, row[v]);
        double z = 0.0;
        for (int64_t v = 0; v < V; ++v) z += std::exp(row[v] - mx);
        for (int64_t v = 0; v < V; ++v) {
          const double p = std::exp(row[v] - mx) / z;
          const double target = (v == labels[i] ? 1.0 - eps : 0.0) + eps / static_cast<double>(V);
          g[v] += go * (p - target);
        }
      }
    };
  });
}

/// Next-token loss over a batch: logits at t predict the label at t+1.
inline Tensor shifted_label_smoothed_ce(const Tensor& logits3d, const Batch& batch, double eps) {
  const int64_t B = logits3d.dim(0), T = logits3d.dim(1), V = logits3d.dim(2);
  std::vector<int64_t> shifted(B * T, kIgnoreLabel);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t + 1 < T; ++t) shifted[b * T + t] = batch.labels[b * T + t + 1];
  return label_smoothed_ce(reshape(logits3d, {B * T, V}), shifted, eps);
}

inline int64_t count_target_tokens(const Batch& batch) {
  int64_t n = 0;
  for (int64_t l : batch.labels) n += l != kIgnoreLabel ? 1 : 0;
  return n;
}

/// Linear ramp over the first ceil(ratio * total) steps, then constant.
inline double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
  const int64_t warmup =
      static_cast<int64_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup && warmup > 0)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
  return cfg.lr;
}

/// Scales all gradients so the global norm is at most max_norm.
inline double clip_global_norm(std::vector<std::pair<std::string, Tensor>>& params,
                               double max_norm) {
  double sq = 0.0;
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

/// Decoupled-weight-decay Adam with bias correction; moments persist across
/// steps, keyed by parameter identity.
class AdamW {
 public:
  void step(std::vector<std::pair<std::string, Tensor>>& params, double lr,
            const TrainConfig& cfg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      auto& st = state_[p.node().get()];
      if (st.m.empty()) {
        st.m.assign(p.numel(), 0.0);
        st.v.assign(p.numel(), 0.0);
      }
      auto& value = p.mutable_value();
      const bool has_grad = p.has_grad();
      for (int64_t i = 0; i < p.numel(); ++i) {
        const double g = has_grad ? p.grad()[i] : 0.0;
        if (!std::isfinite(g))
          throw ValueError("optimizer step " + std::to_string(t_) +
                           ": non-finite gradient in '" + name + "'");
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * value[i]);
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  std::unordered_map<TensorNode*, Moments> state_;
  int64_t t_ = 0;
};

struct TrainLogRecord {
  std::string ts;
  int64_t step = 0;        // optimizer step index
  int64_t micro_step = 0;  // running micro-batch counter
  double l_mt = 0.0;
  double l_cka = 0.0;
  double l_repina = 0.0;
  double total = 0.0;  // combined objective, unweighted by accumulation
  double lr = 0.0;
  double cka_sim = 0.0;  // measured similarity at the alignment layer
  bool has_cka = false;
  bool has_repina = false;
};

struct PreparedMicro {
  std::vector<ParallelExample> examples;
  Batch mt_batch;
  int64_t target_tokens = 0;
};

/// Owns one optimization run over a model: task pass, alignment passes on
/// the configured cadence, gradient accumulation and optimizer plumbing.
class Trainer {
 public:
  Trainer(Model& model, const Vocabulary& vocab, AlignmentConfig acfg, TrainConfig tcfg)
      : model_(model), vocab_(vocab), acfg_(acfg), tcfg_(tcfg), rng_(tcfg.seed) {
    tcfg_.validate();
    acfg_.validate(model.config().n_layers);
  }

  Model& model() { return model_; }
  const AlignmentConfig& align_config() const { return acfg_; }
  const TrainConfig& train_config() const { return tcfg_; }
  int64_t optimizer_step_index() const { return opt_step_; }
  void set_total_steps(int64_t n) { total_steps_ = n; }
  Rng& rng() { return rng_; }

  PreparedMicro prepare_micro(std::vector<ParallelExample> examples) {
    PreparedMicro pm;
    std::vector<FormattedExample> fes;
    for (const auto& ex : examples)
      fes.push_back(format_example(ex, vocab_, PromptMode::train, tcfg_.max_src_len,
                                   tcfg_.max_tgt_len));
    pm.mt_batch = make_batch(std::move(fes), PadSide::left, model_.config().max_seq_len);
    pm.target_tokens = count_target_tokens(pm.mt_batch);
    pm.examples = std::move(examples);
    return pm;
  }

  /// Forward/backward for one micro batch. mt_weight and align_weight scale
  /// the backward pass for token-weighted gradient accumulation; the log
  /// record always carries the unweighted losses.
  TrainLogRecord micro_step(const PreparedMicro& pm, double mt_weight, double align_weight) {
    TrainLogRecord rec;
    rec.ts = iso_timestamp();
    rec.step = opt_step_;
    rec.micro_step = micro_counter_++;
    rec.lr = lr_at(opt_step_, total_steps_, tcfg_);

    ForwardOutput mt_out =
        model_.forward(pm.mt_batch.tokens, /*collect_hidden=*/false, /*train_mode=*/true, &rng_);
    Tensor l_mt = shifted_label_smoothed_ce(mt_out.logits, pm.mt_batch, tcfg_.label_smoothing);
    rec.l_mt = l_mt.item();

    const bool repina_due = acfg_.mu != 0.0 && (opt_step_ % acfg_.repina_cadence == 0);
    Tensor l_cka, l_rep;
    if (acfg_.lambda != 0.0 || repina_due) {
      std::vector<std::string> hrl_texts, lrl_texts;
      for (const auto& ex : pm.examples) {
        hrl_texts.push_back(ex.tgt_text);
        lrl_texts.push_back(ex.src_text);
      }
      // source-only pass on the pivot side; reused by both alignment terms
      Batch hrl = make_source_batch(hrl_texts, vocab_, PadSide::right,
                                    std::min(model_.config().max_seq_len, tcfg_.max_tgt_len));
      ForwardOutput hrl_out = model_.forward(hrl.tokens, /*collect_hidden=*/true);
      Tensor hrl_states = gather_layer_states(hrl_out, acfg_.layer, hrl.tokens);
      if (acfg_.lambda != 0.0) {
        Batch lrl = make_source_batch(lrl_texts, vocab_, PadSide::right,
                                      std::min(model_.config().max_seq_len, tcfg_.max_src_len));
        ForwardOutput lrl_out = model_.forward(lrl.tokens, /*collect_hidden=*/true);
        l_cka = cka_loss_from_states(gather_layer_states(lrl_out, acfg_.layer, lrl.tokens),
                                     hrl_states);
        rec.has_cka = true;
        rec.l_cka = l_cka.item();
        rec.cka_sim = std::clamp(1.0 - rec.l_cka, 0.0, 1.0);
      }
      if (repina_due) {
        if (!model_.adapters_attached())
          throw ConfigError("anchoring requires attached adapters");
        model_.set_adapters_enabled(false);
        ForwardOutput ref_out;
        {
          NoGradGuard ng;
          ref_out = model_.forward(hrl.tokens, /*collect_hidden=*/true);
        }
        model_.set_adapters_enabled(true);
        l_rep = repina_loss(hrl_states, gather_layer_states(ref_out, acfg_.layer, hrl.tokens));
        rec.has_repina = true;
        rec.l_repina = l_rep.item();
      }
    }

    rec.total = rec.l_mt + (rec.has_cka ? acfg_.lambda * rec.l_cka : 0.0) +
                (rec.has_repina ? acfg_.mu * rec.l_repina : 0.0);

    Tensor weighted = scale(l_mt, mt_weight);
    if (rec.has_cka) weighted = add(weighted, scale(l_cka, acfg_.lambda * align_weight));
    if (rec.has_repina) weighted = add(weighted, scale(l_rep, acfg_.mu * align_weight));
    backward(weighted);
    return rec;
  }

  /// One micro batch with unit weights, as a standalone step.
  TrainLogRecord train_step(const std::vector<ParallelExample>& micro) {
    return micro_step(prepare_micro(micro), 1.0, 1.0);
  }

  /// Clip, update trainable parameters, reset gradients, advance the step.
  void optimizer_apply() {
    auto trainable = model_.trainable_parameters();
    clip_global_norm(trainable, tcfg_.clip_norm);
    opt_.step(trainable, lr_at(opt_step_, total_steps_, tcfg_), tcfg_);
    for (auto& [name, p] : trainable) p.zero_grad();
    ++opt_step_;
    model_.step = opt_step_;
  }

 private:
  Model& model_;
  Vocabulary vocab_;
  AlignmentConfig acfg_;
  TrainConfig tcfg_;
  Rng rng_;
  AdamW opt_;
  int64_t opt_step_ = 0;
  int64_t micro_counter_ = 0;
  int64_t total_steps_ = 0;
};

struct EpochResult {
  int64_t epoch = 0;
  std::string checkpoint_path;
  EvalReport dev;
};

struct TrainRunResult {
  std::vector<EpochResult> epochs;
  int64_t best_epoch = 0;  // index into epochs; ties go to the earliest
  std::string best_checkpoint;
};

struct TrainRunHooks {
  std::function<void(const TrainLogRecord&)> on_log;
  std::function<void(int64_t, const EvalReport&)> on_epoch_eval;
};

/// Epoch loop: shuffled micro batches, token-weighted gradient accumulation,
/// per-epoch checkpoint and dev evaluation (greedy decode, capped), best
/// checkpoint by composite score.
inline TrainRunResult train_run(Model& model, const Vocabulary& vocab,
                                const std::vector<ParallelExample>& train,
                                const std::vector<ParallelExample>& dev,
                                const AlignmentConfig& acfg, const TrainConfig& tcfg,
                                const std::string& checkpoint_dir = "",
                                const TrainRunHooks& hooks = {}) {
  if (train.empty()) throw ValueError("train_run: empty dataset");
  if (dev.empty()) throw ValueError("train_run: empty dev split");
  Trainer trainer(model, vocab, acfg, tcfg);
  const int64_t n = static_cast<int64_t>(train.size());
  const int64_t micros_per_epoch = (n + tcfg.micro_batch - 1) / tcfg.micro_batch;
  const int64_t steps_per_epoch = (micros_per_epoch + tcfg.grad_accum - 1) / tcfg.grad_accum;
  trainer.set_total_steps(tcfg.epochs * steps_per_epoch);

  DecodeSettings ds{tcfg.max_src_len, tcfg.max_tgt_len};
  TrainRunResult result;
  for (int64_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    trainer.rng().shuffle(order);

    int64_t cursor = 0;
    while (cursor < micros_per_epoch) {
      const int64_t window = std::min(tcfg.grad_accum, micros_per_epoch - cursor);
      std::vector<PreparedMicro> micros;
      int64_t window_tokens = 0;
      for (int64_t w = 0; w < window; ++w) {
        const int64_t first = (cursor + w) * tcfg.micro_batch;
        const int64_t last = std::min(first + tcfg.micro_batch, n);
        std::vector<ParallelExample> batch;
        for (int64_t i = first; i < last; ++i) batch.push_back(train[order[i]]);
        micros.push_back(trainer.prepare_micro(std::move(batch)));
        window_tokens += micros.back().target_tokens;
      }
      for (const auto& pm : micros) {
        const double mt_w = window_tokens > 0
                                ? static_cast<double>(pm.target_tokens) /
                                      static_cast<double>(window_tokens)
                                : 0.0;
        TrainLogRecord rec = trainer.micro_step(pm, mt_w, 1.0 / static_cast<double>(window));
        if (hooks.on_log) hooks.on_log(rec);
      }
      trainer.optimizer_apply();
      cursor += window;
    }

    EpochResult er;
    er.epoch = epoch;
    const int64_t cap = std::min<int64_t>(tcfg.dev_eval_cap, dev.size());
    std::vector<ParallelExample> dev_head(dev.begin(), dev.begin() + cap);
    er.dev = evaluate_examples(model, vocab, dev_head, PromptMode::zero_shot, ds);
    if (hooks.on_epoch_eval) hooks.on_epoch_eval(epoch, er.dev);
    if (!checkpoint_dir.empty()) {
      er.checkpoint_path = checkpoint_dir + "/epoch" + std::to_string(epoch + 1) + ".ckpt.json";
      save_checkpoint(model, er.checkpoint_path, vocab, train.front().src_lang,
                      train.front().tgt_lang);
    }
    result.epochs.push_back(std::move(er));
  }

  result.best_epoch = 0;
  for (size_t e = 1; e < result.epochs.size(); ++e)
    if (result.epochs[e].dev.composite > result.epochs[result.best_epoch].dev.composite)
      result.best_epoch = static_cast<int64_t>(e);
  result.best_checkpoint = result.epochs[result.best_epoch].checkpoint_path;
  return result;
}

}  // namespace treplina
