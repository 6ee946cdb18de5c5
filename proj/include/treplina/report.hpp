#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "treplina/common.hpp"
#include "treplina/metrics.hpp"
#include "treplina/train.hpp"

namespace treplina {

using json = nlohmann::json;

inline json to_json(const EvalReport& r) {
  return {{"bleu", r.bleu},
          {"chrf", r.chrf},
          {"composite", r.composite},
          {"n_examples", r.n_examples},
          {"direction", r.direction}};
}

inline EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.bleu = j.at("bleu");
  r.chrf = j.at("chrf");
  r.composite = j.at("composite");
  r.n_examples = j.at("n_examples");
  r.direction = j.at("direction");
  return r;
}

inline json to_json(const TrainLogRecord& r) {
  json j{{"ts", r.ts},     {"step", r.step}, {"micro_step", r.micro_step},
         {"l_mt", r.l_mt}, {"total", r.total}, {"lr", r.lr}};
  j["l_cka"] = r.has_cka ? json(r.l_cka) : json(nullptr);
  j["l_repina"] = r.has_repina ? json(r.l_repina) : json(nullptr);
  j["cka_sim"] = r.has_cka ? json(r.cka_sim) : json(nullptr);
  return j;
}

/// One JSON object per line; keys are sorted by the serializer, so identical
/// runs produce identical bytes apart from the "ts" fields.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path) : f_(path, std::ios::binary) {
    if (!f_) throw DataError("cannot write '" + path + "'");
  }
  void write(const json& j) {
    f_ << j.dump() << '\n';
    f_.flush();
  }

 private:
  std::ofstream f_;
};

inline std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::vector<json> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const std::exception& e) {
      throw DataError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace treplina
