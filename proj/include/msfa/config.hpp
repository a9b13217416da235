#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfa/data.hpp"
#include "msfa/losses.hpp"
#include "msfa/model.hpp"

namespace msfa {

/// Which fusion modules the model uses.
struct ModuleToggles {
  bool dr = true;
  bool msi = true;
  bool fe = true;
  friend bool operator==(const ModuleToggles&, const ModuleToggles&) = default;
};

/// Where training data comes from. Empty `train_dir` means an in-memory
/// synthetic set of `synthetic_count` images of `synthetic_size` pixels, with
/// `synthetic_val_count` held-out images (0: evaluate on the training set).
struct DataConfig {
  std::string train_dir;
  std::string val_dir;
  int synthetic_count = 8;
  int synthetic_val_count = 0;
  int synthetic_size = 64;
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct TrainConfig {
  std::string profile = "desk";
  int epochs = 60;
  int batch_size = 4;
  Real momentum = 0.9;
  Real weight_decay = 5e-4;
  bool decay_norm_and_bias = false;
  Real lr_min = 1.6e-4;
  Real lr_max = 5e-3;
  Real warmup_fraction = 0.1;
  int input_size = 64;
  std::uint64_t seed = 0;
  int max_steps = 0;   // 0: run all epochs
  int eval_every = 0;  // epochs between evaluations; 0: only after the last one
  LossTerms loss_terms;
  ModuleToggles modules;
  ModelConfig model;  // architecture; use_* flags and seed come from modules / seed
  AugmentConfig augment;
  DataConfig data;

  /// The model configuration actually built: architecture plus toggles, with
  /// the weight seed derived from the run seed.
  [[nodiscard]] ModelConfig model_config() const {
    ModelConfig m = model;
    m.use_dr = modules.dr;
    m.use_msi = modules.msi;
    m.use_fe = modules.fe;
    m.seed = derive_seed(seed, 0x6d6f64656cULL);
    return m;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(lr_min > 0 && lr_min < lr_max)) throw ConfigError("need 0 < lr_min < lr_max");
    if (!(warmup_fraction > 0 && warmup_fraction < 1)) throw ConfigError("warmup_fraction must lie in (0,1)");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0,1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (input_size < 32 || input_size % 32 != 0) throw ConfigError("input_size must be a positive multiple of 32");
    if (max_steps < 0 || eval_every < 0) throw ConfigError("max_steps and eval_every must be non-negative");
    if (data.synthetic_count < 1) throw ConfigError("synthetic_count must be at least 1");
    if (data.synthetic_val_count < 0) throw ConfigError("synthetic_val_count must be non-negative");
    if (data.synthetic_size < 32 || data.synthetic_size % 32 != 0)
      throw ConfigError("synthetic_size must be a positive multiple of 32");
    loss_terms.validate();
    model_config().validate();
    augment.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"profile", c.profile},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"decay_norm_and_bias", c.decay_norm_and_bias},
       {"lr_min", c.lr_min},
       {"lr_max", c.lr_max},
       {"warmup_fraction", c.warmup_fraction},
       {"input_size", c.input_size},
       {"seed", c.seed},
       {"max_steps", c.max_steps},
       {"eval_every", c.eval_every},
       {"loss_terms", {{"bce", c.loss_terms.bce}, {"iou", c.loss_terms.iou}, {"bd", c.loss_terms.bd}}},
       {"modules", {{"dr", c.modules.dr}, {"msi", c.modules.msi}, {"fe", c.modules.fe}}},
       {"model",
        {{"encoder_channels", c.model.encoder_channels},
         {"width", c.model.width},
         {"dr_kernels", c.model.dr_kernels},
         {"fe_share_params", c.model.fe_share_params}}},
       {"augment", c.augment},
       {"data",
        {{"train_dir", c.data.train_dir},
         {"val_dir", c.data.val_dir},
         {"synthetic_count", c.data.synthetic_count},
         {"synthetic_val_count", c.data.synthetic_val_count},
         {"synthetic_size", c.data.synthetic_size}}}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("profile").get_to(c.profile);
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("momentum").get_to(c.momentum);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("decay_norm_and_bias").get_to(c.decay_norm_and_bias);
  j.at("lr_min").get_to(c.lr_min);
  j.at("lr_max").get_to(c.lr_max);
  j.at("warmup_fraction").get_to(c.warmup_fraction);
  j.at("input_size").get_to(c.input_size);
  j.at("seed").get_to(c.seed);
  j.at("max_steps").get_to(c.max_steps);
  j.at("eval_every").get_to(c.eval_every);
  const auto& lt = j.at("loss_terms");
  lt.at("bce").get_to(c.loss_terms.bce);
  lt.at("iou").get_to(c.loss_terms.iou);
  lt.at("bd").get_to(c.loss_terms.bd);
  const auto& md = j.at("modules");
  md.at("dr").get_to(c.modules.dr);
  md.at("msi").get_to(c.modules.msi);
  md.at("fe").get_to(c.modules.fe);
  const auto& m = j.at("model");
  m.at("encoder_channels").get_to(c.model.encoder_channels);
  m.at("width").get_to(c.model.width);
  m.at("dr_kernels").get_to(c.model.dr_kernels);
  m.at("fe_share_params").get_to(c.model.fe_share_params);
  j.at("augment").get_to(c.augment);
  const auto& d = j.at("data");
  d.at("train_dir").get_to(c.data.train_dir);
  d.at("val_dir").get_to(c.data.val_dir);
  d.at("synthetic_count").get_to(c.data.synthetic_count);
  d.at("synthetic_val_count").get_to(c.data.synthetic_val_count);
  d.at("synthetic_size").get_to(c.data.synthetic_size);
}

/// CPU-sized defaults: 8 synthetic 64x64 images fed to a narrow model at
/// 128x128, batch 4, 200 steps, no augmentation.
inline TrainConfig desk_profile() {
  TrainConfig c;
  c.profile = "desk";
  c.epochs = 100;
  c.batch_size = 4;
  c.max_steps = 200;
  c.input_size = 128;
  c.lr_max = 5e-2;
  c.lr_min = 1.6e-3;
  c.model.encoder_channels = {16, 24, 32, 48, 48};
  c.model.width = 32;
  c.augment.enabled = false;
  c.data.synthetic_count = 8;
  c.data.synthetic_size = 64;
  return c;
}

/// Full-scale schedule: 60 epochs, batch 64, 384x384 inputs, default widths.
inline TrainConfig paper_profile() {
  TrainConfig c;
  c.profile = "paper";
  c.epochs = 60;
  c.batch_size = 64;
  c.input_size = 384;
  c.augment.enabled = true;
  c.data.synthetic_count = 1024;
  c.data.synthetic_size = 384;
  return c;
}

/// Desk model and optimizer on a 64-image synthetic training set with 16
/// held-out test images; used by the ablation grid.
inline TrainConfig ablate_profile() {
  TrainConfig c = desk_profile();
  c.profile = "ablate";
  c.epochs = 25;
  c.max_steps = 0;
  c.data.synthetic_count = 64;
  c.data.synthetic_val_count = 16;
  return c;
}

inline TrainConfig profile_by_name(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  if (name == "ablate") return ablate_profile();
  throw ConfigError("unknown profile '" + name + "' (expected desk, paper or ablate)");
}

namespace detail {

inline bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) {
    if (a.is_number_float()) return true;
    if (b.is_number_float()) return false;
    return !(a.is_number_unsigned() && b.is_number_integer() && b.get<std::int64_t>() < 0);
  }
  return a.type() == b.type();
}

/// Recursively overlays `patch` on `base`, rejecting keys absent from `base`
/// and values whose JSON kind differs.
inline void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("expected an object at '" + (path.empty() ? "<root>" : path) + "'");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    nlohmann::json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      if (!same_kind(slot, it.value())) throw ConfigError("config key '" + key + "' has the wrong type");
      slot = it.value();
    }
  }
}

inline TrainConfig finish(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c = j.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace detail

/// Applies `key=value` where key is a dotted path such as `model.width`.
/// Values are parsed as JSON, falling back to a plain string.
inline void apply_override(nlohmann::json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = nlohmann::json{{*it, patch}};
  detail::merge_strict(cfg, patch, "");
}

/// Resolves a run configuration: the profile named in the file (or
/// `default_profile`), then the file's values, then each override in order.
inline TrainConfig resolve_config(const std::string& default_profile, const std::filesystem::path& file,
                                  const std::vector<std::string>& overrides) {
  nlohmann::json file_json = nlohmann::json::object();
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot open config file " + file.string());
    file_json = nlohmann::json::parse(is, nullptr, false);
    if (file_json.is_discarded() || !file_json.is_object()) throw ConfigError("config file " + file.string() + " is not a JSON object");
  }
  std::string profile = default_profile;
  if (file_json.contains("profile")) {
    if (!file_json["profile"].is_string()) throw ConfigError("'profile' must be a string");
    profile = file_json["profile"].get<std::string>();
  }
  for (const auto& o : overrides)
    if (o.rfind("profile=", 0) == 0) profile = o.substr(8);
  nlohmann::json j = profile_by_name(profile);
  detail::merge_strict(j, file_json, "");
  for (const auto& o : overrides) apply_override(j, o);
  return detail::finish(j);
}

}  // namespace msfa
