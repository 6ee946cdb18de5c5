#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "treplina/data.hpp"
#include "treplina/model.hpp"

namespace treplina {

constexpr const char* kCheckpointVersion = "treplina-ckpt-1";

struct LoadedCheckpoint {
  Model model;
  Vocabulary vocab;
  std::string src_lang, tgt_lang;
};

inline void save_checkpoint(Model& model, const std::string& path, const Vocabulary& vocab,
                            const std::string& src_lang, const std::string& tgt_lang) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  const auto& c = model.config();
  j["model_config"] = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                       {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                       {"d_ff", c.d_ff},             {"max_seq_len", c.max_seq_len},
                       {"seed", c.seed}};
  if (model.lora_config()) {
    const auto& l = *model.lora_config();
    j["lora_config"] = {{"rank", l.rank},
                        {"alpha", l.alpha},
                        {"dropout", l.dropout},
                        {"target_sites", l.target_sites}};
  } else {
    j["lora_config"] = nullptr;
  }
  j["adapters_enabled"] = model.adapters_attached() && model.adapters_enabled();
  j["step"] = model.step;
  nlohmann::json base = nlohmann::json::object();
  nlohmann::json adapters = nlohmann::json::object();
  for (auto& [name, p] : model.parameters()) {
    if (name.find(".lora_") != std::string::npos)
      adapters[name] = p.value();
    else
      base[name] = p.value();
  }
  j["base_weights"] = std::move(base);
  j["adapter_weights"] = std::move(adapters);
  j["vocab"] = vocab.words();
  j["src_lang"] = src_lang;
  j["tgt_lang"] = tgt_lang;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint '" + path + "'");
  f << j.dump() << '\n';
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw DataError("corrupt checkpoint '" + path + "': " + e.what());
  }
  if (!j.is_object() || !j.contains("version") || j["version"] != kCheckpointVersion)
    throw DataError("'" + path + "' is not a " + std::string(kCheckpointVersion) + " checkpoint");
  try {
    ModelConfig cfg;
    const auto& mc = j.at("model_config");
    cfg.vocab_size = mc.at("vocab_size");
    cfg.d_model = mc.at("d_model");
    cfg.n_layers = mc.at("n_layers");
    cfg.n_heads = mc.at("n_heads");
    cfg.d_ff = mc.at("d_ff");
    cfg.max_seq_len = mc.at("max_seq_len");
    cfg.seed = mc.at("seed");
    Model model(cfg);
    if (!j.at("lora_config").is_null()) {
      LoraConfig lc;
      const auto& jl = j.at("lora_config");
      lc.rank = jl.at("rank");
      lc.alpha = jl.at("alpha");
      lc.dropout = jl.at("dropout");
      lc.target_sites = jl.at("target_sites").get<std::vector<std::string>>();
      model.attach_lora(lc);
      model.set_adapters_enabled(j.at("adapters_enabled").get<bool>());
    }
    model.step = j.at("step");
    const auto& base = j.at("base_weights");
    const auto& adapters = j.at("adapter_weights");
    for (auto& [name, p] : model.parameters()) {
      const auto& store = name.find(".lora_") != std::string::npos ? adapters : base;
      if (!store.contains(name)) throw DataError("checkpoint missing tensor '" + name + "'");
      auto vals = store.at(name).get<std::vector<double>>();
      if (static_cast<int64_t>(vals.size()) != p.numel())
        throw DataError("checkpoint tensor '" + name + "' has wrong size");
      p.mutable_value() = std::move(vals);
    }
    LoadedCheckpoint out{std::move(model),
                         Vocabulary::from_words(j.at("vocab").get<std::vector<std::string>>()),
                         j.at("src_lang"), j.at("tgt_lang")};
    return out;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError("corrupt checkpoint '" + path + "': " + e.what());
  }
}

}  // namespace treplina
