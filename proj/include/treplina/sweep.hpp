#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "treplina/align.hpp"
#include "treplina/data.hpp"
#include "treplina/train.hpp"

namespace treplina {

enum class Method { NoAlign = 0, CkaOnly = 1, RepinaOnly = 2, TRepLiNa = 3 };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::NoAlign: return "NoAlign";
    case Method::CkaOnly: return "CKA-only";
    case Method::RepinaOnly: return "REPINA-only";
    case Method::TRepLiNa: return "TRepLiNa";
  }
  return "?";
}

inline Method method_from_name(const std::string& s) {
  for (Method m : {Method::NoAlign, Method::CkaOnly, Method::RepinaOnly, Method::TRepLiNa})
    if (s == method_name(m)) return m;
  throw UsageError("unknown method '" + s + "'");
}

struct SweepCell {
  Method method;
  int64_t layer;  // 0 for NoAlign (no alignment term)
};

struct SweepSettings {
  std::vector<int64_t> layers;  // swept by CKA-only and TRepLiNa
  double lambda = 0.05;
  double mu = 0.05;
  int64_t repina_cadence = 2;
  int64_t repina_layer = 0;  // 0 -> middle block, ceil(L/2)

  int64_t resolved_repina_layer(int64_t n_layers) const {
    return repina_layer > 0 ? repina_layer : (n_layers + 1) / 2;
  }
};

/// NoAlign once, REPINA-only once at its designated layer, then CKA-only and
/// the combined objective at every swept layer.
inline std::vector<SweepCell> build_run_list(const SweepSettings& s, int64_t n_layers) {
  if (s.layers.empty()) throw UsageError("sweep: empty layer set");
  std::vector<int64_t> layers = s.layers;
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  for (int64_t l : layers)
    if (l < 1 || l > n_layers)
      throw ConfigError("sweep: layer " + std::to_string(l) + " outside [1, " +
                        std::to_string(n_layers) + "]");
  const int64_t rl = s.resolved_repina_layer(n_layers);
  if (rl < 1 || rl > n_layers)
    throw ConfigError("sweep: anchoring layer " + std::to_string(rl) + " outside [1, " +
                      std::to_string(n_layers) + "]");
  std::vector<SweepCell> cells;
  cells.push_back({Method::NoAlign, 0});
  cells.push_back({Method::RepinaOnly, rl});
  for (int64_t l : layers) cells.push_back({Method::CkaOnly, l});
  for (int64_t l : layers) cells.push_back({Method::TRepLiNa, l});
  return cells;
}

/// Rescales a layer set from one model depth to another by fractional depth,
/// e.g. {1,2,5,10,15,20,25,30,31,32} at depth 32 maps to {1,2,3,4} at depth 4.
inline std::vector<int64_t> proportional_layer_set(const std::vector<int64_t>& layers,
                                                   int64_t src_depth, int64_t dst_depth) {
  if (src_depth < 1 || dst_depth < 1) throw ConfigError("layer mapping: depths must be positive");
  std::vector<int64_t> out;
  for (int64_t l : layers) {
    const double frac = static_cast<double>(l) / static_cast<double>(src_depth);
    out.push_back(std::clamp<int64_t>(std::llround(frac * dst_depth), 1, dst_depth));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

struct SweepRunRecord {
  Method method = Method::NoAlign;
  int64_t layer = 0;
  EvalReport report;
  std::vector<double> cka_by_layer;  // measured on the probe set, layers 1..L
};

/// Argmax composite; ties prefer the lower layer, then method order as listed.
inline int64_t select_best(const std::vector<SweepRunRecord>& runs) {
  if (runs.empty()) throw ValueError("sweep: no runs");
  int64_t best = 0;
  for (size_t i = 1; i < runs.size(); ++i) {
    const auto& a = runs[i];
    const auto& b = runs[best];
    if (a.report.composite > b.report.composite ||
        (a.report.composite == b.report.composite &&
         (a.layer < b.layer ||
          (a.layer == b.layer && static_cast<int>(a.method) < static_cast<int>(b.method)))))
      best = static_cast<int64_t>(i);
  }
  return best;
}

struct SweepOutcome {
  std::vector<SweepRunRecord> runs;
  int64_t best = -1;
};

/// End-of-training similarity between the two languages' source-only states
/// at every block, measured over a probe set in one flattened batch.
inline std::vector<double> measure_cka_by_layer(const Model& model, const Vocabulary& vocab,
                                                const std::vector<ParallelExample>& probe,
                                                const TrainConfig& tcfg) {
  if (probe.empty()) throw ValueError("cka probe: no examples");
  NoGradGuard ng;
  std::vector<std::string> lrl_texts, hrl_texts;
  for (const auto& ex : probe) {
    lrl_texts.push_back(ex.src_text);
    hrl_texts.push_back(ex.tgt_text);
  }
  const int64_t max_seq = model.config().max_seq_len;
  Batch lrl = make_source_batch(lrl_texts, vocab, PadSide::right,
                                std::min(max_seq, tcfg.max_src_len));
  Batch hrl = make_source_batch(hrl_texts, vocab, PadSide::right,
                                std::min(max_seq, tcfg.max_tgt_len));
  ForwardOutput lo = model.forward(lrl.tokens, /*collect_hidden=*/true);
  ForwardOutput ho = model.forward(hrl.tokens, /*collect_hidden=*/true);
  std::vector<double> out;
  for (int64_t l = 1; l <= model.config().n_layers; ++l)
    out.push_back(measure_cka(lo, lrl.tokens, ho, hrl.tokens, l));
  return out;
}

struct SweepRunContext {
  SweepCell cell;
  int64_t index = 0;
  int64_t total = 0;
};

/// Trains one sweep cell from scratch and measures it.
inline SweepRunRecord run_sweep_cell(const SweepCell& cell, const SweepSettings& settings,
                                     const std::vector<ParallelExample>& train,
                                     const std::vector<ParallelExample>& dev,
                                     const Vocabulary& vocab, const ModelConfig& mcfg,
                                     const LoraConfig& lcfg, const TrainConfig& tcfg,
                                     const std::string& checkpoint_dir = "",
                                     const TrainRunHooks& hooks = {}) {
  AlignmentConfig acfg;
  acfg.repina_cadence = settings.repina_cadence;
  acfg.layer = cell.method == Method::NoAlign ? settings.resolved_repina_layer(mcfg.n_layers)
                                              : cell.layer;
  acfg.lambda = (cell.method == Method::CkaOnly || cell.method == Method::TRepLiNa)
                    ? settings.lambda
                    : 0.0;
  acfg.mu = (cell.method == Method::RepinaOnly || cell.method == Method::TRepLiNa) ? settings.mu
                                                                                   : 0.0;
  Model model(mcfg);
  model.attach_lora(lcfg);
  TrainRunResult rr = train_run(model, vocab, train, dev, acfg, tcfg, checkpoint_dir, hooks);
  SweepRunRecord rec;
  rec.method = cell.method;
  rec.layer = cell.layer;
  rec.report = rr.epochs[rr.best_epoch].dev;
  const int64_t cap = std::min<int64_t>(tcfg.dev_eval_cap, dev.size());
  std::vector<ParallelExample> probe(dev.begin(), dev.begin() + cap);
  rec.cka_by_layer = measure_cka_by_layer(model, vocab, probe, tcfg);
  return rec;
}

inline SweepOutcome run_sweep(const SweepSettings& settings,
                              const std::vector<ParallelExample>& train,
                              const std::vector<ParallelExample>& dev, const Vocabulary& vocab,
                              const ModelConfig& mcfg, const LoraConfig& lcfg,
                              const TrainConfig& tcfg,
                              const std::function<void(const SweepRunContext&)>& on_run_start = {},
                              const std::function<TrainRunHooks(const SweepCell&)>& hook_factory = {}) {
  auto cells = build_run_list(settings, mcfg.n_layers);
  SweepOutcome out;
  for (size_t i = 0; i < cells.size(); ++i) {
    if (on_run_start)
      on_run_start({cells[i], static_cast<int64_t>(i), static_cast<int64_t>(cells.size())});
    TrainRunHooks hooks = hook_factory ? hook_factory(cells[i]) : TrainRunHooks{};
    out.runs.push_back(
        run_sweep_cell(cells[i], settings, train, dev, vocab, mcfg, lcfg, tcfg, "", hooks));
  }
  out.best = select_best(out.runs);
  return out;
}

}  // namespace treplina
