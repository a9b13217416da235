#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfa/trainer.hpp"

namespace msfa {

/// One trained variant of the ablation grid.
struct AblationRow {
  std::string group;  // "loss" or "modules"
  std::string name;
  LossTerms terms;
  ModuleToggles modules;
  MetricReport report;
  double seconds = 0;
};

struct AblationResult {
  std::vector<AblationRow> loss_rows;    // BCE, BCE+IoU, BCE+IoU+Bd
  std::vector<AblationRow> module_rows;  // BASE, MSI, MSI+DR, MSI+DR+FE
};

struct AblationVariant {
  std::string group;
  std::string name;
  LossTerms terms;
  ModuleToggles modules;
};

/// The two grids: loss subsets on the full model, and modules added one at a
/// time with every loss term enabled.
inline std::vector<AblationVariant> ablation_variants() {
  const LossTerms all{true, true, true};
  const ModuleToggles full{true, true, true};
  return {
      {"loss", "BCE", {true, false, false}, full},
      {"loss", "BCE+IoU", {true, true, false}, full},
      {"loss", "BCE+IoU+Bd", all, full},
      {"modules", "BASE", all, {false, false, false}},
      {"modules", "MSI", all, {false, true, false}},
      {"modules", "MSI+DR", all, {true, true, false}},
      {"modules", "MSI+DR+FE", all, full},
  };
}

/// Trains every variant from the same seed on `train_set` and scores it on
/// `test_set`. Identical variants (the full model appears in both grids) are
/// trained once.
inline AblationResult run_ablation(const TrainConfig& base, const std::vector<SamplePair>& train_set,
                                   const std::vector<SamplePair>& test_set,
                                   const std::function<void(const AblationRow&)>& on_row = {}) {
  AblationResult out;
  std::map<std::string, AblationRow> done;
  for (const auto& v : ablation_variants()) {
    const std::string key = std::to_string(v.terms.bce) + std::to_string(v.terms.iou) + std::to_string(v.terms.bd) +
                            std::to_string(v.modules.dr) + std::to_string(v.modules.msi) + std::to_string(v.modules.fe);
    AblationRow row;
    if (auto it = done.find(key); it != done.end()) {
      row = it->second;
    } else {
      TrainConfig cfg = base;
      cfg.loss_terms = v.terms;
      cfg.modules = v.modules;
      MsfaModel model(cfg.model_config());
      const TrainResult r = train(model, cfg, train_set, test_set);
      row.report = r.final_eval;
      row.seconds = r.seconds;
      done.emplace(key, row);
    }
    row.group = v.group;
    row.name = v.name;
    row.terms = v.terms;
    row.modules = v.modules;
    if (on_row) on_row(row);
    (v.group == "loss" ? out.loss_rows : out.module_rows).push_back(std::move(row));
  }
  return out;
}

inline nlohmann::json to_json_rows(const std::vector<AblationRow>& rows) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = to_json_summary(r.report);
    j["name"] = r.name;
    j["seconds"] = r.seconds;
    a.push_back(j);
  }
  return a;
}

inline void to_json(nlohmann::json& j, const AblationResult& r) {
  j = {{"loss", to_json_rows(r.loss_rows)}, {"modules", to_json_rows(r.module_rows)}};
}

/// group,name,mae,f_beta_max,f_beta_adaptive,weighted_f,s_measure,e_measure
inline std::string ablation_csv(const AblationResult& r) {
  std::string out = "group,name,mae,f_beta_max,f_beta_adaptive,weighted_f,s_measure,e_measure\n";
  char buf[256];
  for (const auto* rows : {&r.loss_rows, &r.module_rows})
    for (const auto& row : *rows) {
      const auto& m = row.report;
      std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.group.c_str(), row.name.c_str(), m.mae,
                    m.f_beta_max, m.f_beta_adaptive, m.weighted_f, m.s_measure, m.e_measure);
      out += buf;
    }
  return out;
}

/// Fixed-width text table, one block per grid.
inline std::string ablation_table(const AblationResult& r) {
  std::string out;
  char buf[256];
  for (const auto* rows : {&r.loss_rows, &r.module_rows}) {
    if (rows->empty()) continue;
    std::snprintf(buf, sizeof buf, "%-12s %8s %8s %8s %8s %8s %8s\n", rows->front().group == "loss" ? "loss" : "modules", "MAE",
                  "maxF", "adpF", "wF", "S", "E");
    out += buf;
    for (const auto& row : *rows) {
      const auto& m = row.report;
      std::snprintf(buf, sizeof buf, "%-12s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", row.name.c_str(), m.mae, m.f_beta_max,
                    m.f_beta_adaptive, m.weighted_f, m.s_measure, m.e_measure);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace msfa
