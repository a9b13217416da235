#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msfa/checkpoint.hpp"
#include "msfa/config.hpp"
#include "msfa/data.hpp"
#include "msfa/image_io.hpp"
#include "msfa/losses.hpp"
#include "msfa/metrics.hpp"
#include "msfa/model.hpp"
#include "msfa/optim.hpp"
#include "msfa/schedule.hpp"

namespace msfa {

/// One optimizer step as written to the JSON-lines log.
struct StepRecord {
  int step = 0;
  int epoch = 0;
  Real lr = 0;
  int input_size = 0;
  std::vector<std::string> batch;
  LossBreakdown loss;
};

inline void to_json(nlohmann::json& j, const StepRecord& r) {
  j = {{"step", r.step},   {"epoch", r.epoch}, {"lr", r.lr},           {"input_size", r.input_size},
       {"batch", r.batch}, {"loss", r.loss},   {"total", r.loss.total}};
}

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing is written
  std::function<void(const StepRecord&)> on_step;
  std::function<void(int epoch, const MetricReport&)> on_eval;
};

struct TrainResult {
  int steps = 0;
  int epochs = 0;
  std::vector<Real> losses;  // total loss per step
  MetricReport final_eval;
  Real best_f_beta_max = -1;
  int best_epoch = -1;
  double seconds = 0;
};

namespace detail {

/// FNV-1a, stable across platforms, for seeding per-sample streams by id.
inline std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Distinct stream tags under the run seed.
inline constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
inline constexpr std::uint64_t kScaleStream = 0x7363616cULL;
inline constexpr std::uint64_t kAugmentStream = 0x61756700ULL;
inline constexpr std::uint64_t kTrainDataStream = 0x74726e00ULL;
inline constexpr std::uint64_t kValDataStream = 0x76616c00ULL;

inline Tensor clamp01(Tensor t) {
  for (auto& v : t.storage()) v = std::clamp(v, Real{0}, Real{1});
  return t;
}

}  // namespace detail

/// Training and validation sets named by the config: directories when
/// `data.train_dir` is set, otherwise synthetic sets drawn from the run seed.
inline std::pair<std::vector<SamplePair>, std::vector<SamplePair>> load_training_data(
    const TrainConfig& cfg, std::vector<std::string>* warnings = nullptr) {
  if (!cfg.data.train_dir.empty()) {
    auto train = load_dataset(cfg.data.train_dir, warnings);
    std::vector<SamplePair> val;
    if (!cfg.data.val_dir.empty()) val = load_dataset(cfg.data.val_dir, warnings);
    return {std::move(train), std::move(val)};
  }
  const Size2 size{cfg.data.synthetic_size, cfg.data.synthetic_size};
  auto train = generate_synthetic(cfg.data.synthetic_count, size, derive_seed(cfg.seed, detail::kTrainDataStream));
  std::vector<SamplePair> val;
  if (cfg.data.synthetic_val_count > 0)
    val = generate_synthetic(cfg.data.synthetic_val_count, size, derive_seed(cfg.seed, detail::kValDataStream));
  return {std::move(train), std::move(val)};
}

/// Total optimizer steps for a dataset of `n` samples.
inline int planned_steps(const TrainConfig& cfg, std::size_t n) {
  const int per_epoch = static_cast<int>((n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size));
  const int total = cfg.epochs * per_epoch;
  return cfg.max_steps > 0 ? std::min(total, cfg.max_steps) : total;
}

/// Saliency map m2 for one [1,3,H,W] image: resized to `input_size` for the
/// network, then back to H x W. Values are clamped to [0,1].
inline Tensor predict_map(MsfaModel& model, const Tensor& image, int input_size) {
  if (image.n() != 1 || image.c() != 3) throw ShapeError("prediction expects [1,3,H,W], got " + to_string(image.shape()));
  NoGradGuard ng;
  const Size2 net{input_size, input_size};
  const Size2 orig = image.shape().spatial();
  Tensor in = orig == net ? image : kernels::resize_bilinear(image, net);
  Tensor m2 = model.forward(Var(std::move(in)), false).m2.value();
  if (m2.shape().spatial() != orig) m2 = kernels::resize_bilinear(m2, orig);
  return detail::clamp01(std::move(m2));
}

/// Rounds a map to the 8-bit grid, matching what write_gray_png stores.
inline Tensor quantize_map(Tensor t) {
  for (auto& v : t.storage()) v = std::round(std::clamp(v, Real{0}, Real{1}) * 255) / 255;
  return t;
}

/// Scores the model on `data`. Predictions are quantized to 8 bits first so
/// in-memory scores equal those of saved PNGs.
inline MetricReport evaluate(MsfaModel& model, const std::vector<SamplePair>& data, int input_size) {
  std::vector<ImageMetrics> items;
  items.reserve(data.size());
  for (const auto& s : data) items.push_back(evaluate_pair(quantize_map(predict_map(model, s.image, input_size)), s.mask, s.id));
  return aggregate(std::move(items));
}

/// Loads a checkpoint and scores it. The input size comes from the stored
/// training config when present.
inline MetricReport evaluate(const std::filesystem::path& checkpoint, const std::vector<SamplePair>& data,
                             int input_size = 0) {
  nlohmann::json meta;
  MsfaModel model = model_from_checkpoint(checkpoint, &meta);
  if (input_size <= 0) input_size = meta.value(nlohmann::json::json_pointer("/config/input_size"), 384);
  return evaluate(model, data, input_size);
}

/// Runs the configured schedule on `train_set`, evaluating on `val_set` (or
/// the training set when empty) every `eval_every` epochs and after the last.
/// Writes train_log.jsonl, last.ckpt and best.ckpt when out_dir is set.
inline TrainResult train(MsfaModel& model, const TrainConfig& cfg, const std::vector<SamplePair>& train_set,
                         const std::vector<SamplePair>& val_set, const TrainOptions& opts = {}) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  if (model.config() != cfg.model_config()) throw ConfigError("model does not match the training config");
  const auto t0 = std::chrono::steady_clock::now();
  const auto& eval_set = val_set.empty() ? train_set : val_set;
  const int total = planned_steps(cfg, train_set.size());

  std::ofstream log;
  const nlohmann::json meta = {{"config", cfg}};
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    log.open(opts.out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log) throw IoError("cannot write " + (opts.out_dir / "train_log.jsonl").string());
  }

  Sgd opt(model, cfg.momentum, cfg.weight_decay, cfg.decay_norm_and_bias);
  TrainResult res;
  std::vector<std::size_t> order(train_set.size());
  int step = 0;
  for (int epoch = 0; step < total; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, detail::kShuffleStream), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (std::size_t b = 0; b < order.size() && step < total; b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      int size = cfg.input_size;
      if (cfg.augment.enabled) {
        Rng scale_rng(derive_seed(derive_seed(cfg.seed, detail::kScaleStream), static_cast<std::uint64_t>(step)));
        const auto& sc = cfg.augment.scales;
        size = multiscale_size(cfg.input_size, sc[static_cast<std::size_t>(scale_rng.uniform_int(0, static_cast<int>(sc.size()) - 1))]);
      }
      std::vector<SamplePair> batch;
      StepRecord rec;
      for (std::size_t k = b; k < e; ++k) {
        const SamplePair& s = train_set[order[k]];
        Rng aug_rng(derive_seed(derive_seed(derive_seed(cfg.seed, detail::kAugmentStream), static_cast<std::uint64_t>(epoch)),
                                detail::stable_hash(s.id)));
        batch.push_back(augment(s, cfg.augment, aug_rng, {size, size}));
        rec.batch.push_back(s.id);
      }
      auto [images, masks] = stack_batch(batch);

      const Real lr = lr_at(step, total, cfg);
      opt.zero_grad();
      const SaliencyOutputs outs = model.forward(Var(std::move(images)), true);
      Var loss = total_loss(outs, masks, cfg.loss_terms, &rec.loss);
      if (!std::isfinite(rec.loss.total)) {
        std::string ids;
        for (const auto& id : rec.batch) ids += (ids.empty() ? "" : ", ") + id;
        throw NonFiniteLoss("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                            ") on batch [" + ids + "]");
      }
      backward(loss);
      opt.step(lr);

      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.input_size = size;
      res.losses.push_back(rec.loss.total);
      if (log) log << nlohmann::json(rec).dump() << '\n' << std::flush;
      if (opts.on_step) opts.on_step(rec);
      ++step;
    }

    res.epochs = epoch + 1;
    const bool last = step >= total;
    if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir / "last.ckpt", model, meta);
    if (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0)) {
      MetricReport r = evaluate(model, eval_set, cfg.input_size);
      if (opts.on_eval) opts.on_eval(epoch, r);
      if (r.f_beta_max > res.best_f_beta_max) {
        res.best_f_beta_max = r.f_beta_max;
        res.best_epoch = epoch;
        if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir / "best.ckpt", model, meta);
      }
      if (last) res.final_eval = std::move(r);
    }
  }
  res.steps = step;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Writes `<out_dir>/<stem>.png` holding round(255 m2) for every PNG in
/// `image_dir`. Returns the written paths in sorted order.
inline std::vector<std::filesystem::path> predict_dir(MsfaModel& model, const std::filesystem::path& image_dir,
                                                      const std::filesystem::path& out_dir, int input_size) {
  std::vector<std::filesystem::path> written;
  std::filesystem::create_directories(out_dir);
  for (const auto& p : list_pngs(image_dir)) {
    const Tensor map = predict_map(model, image_tensor(read_png(p)), input_size);
    const auto dst = out_dir / (p.stem().string() + ".png");
    write_gray_png(dst, map);
    written.push_back(dst);
  }
  return written;
}

/// Result of scoring a prediction directory against a mask directory.
struct DatasetEvaluation {
  MetricReport report;
  std::vector<std::string> missing;  // stems present on only one side
  std::vector<std::string> errors;   // pairs that could not be scored
};

/// Scores `<pred_dir>/<stem>.png` against `<gt_dir>/<stem>.png`. Missing
/// and unreadable pairs are listed and skipped; the rest are scored.
inline DatasetEvaluation evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir) {
  std::map<std::string, std::filesystem::path> preds, gts;
  for (const auto& p : list_pngs(pred_dir)) preds[p.stem().string()] = p;
  for (const auto& p : list_pngs(gt_dir)) gts[p.stem().string()] = p;
  DatasetEvaluation out;
  for (const auto& [stem, p] : gts)
    if (!preds.count(stem)) out.missing.push_back("no prediction for " + p.string());
  std::vector<ImageMetrics> items;
  for (const auto& [stem, p] : preds) {
    auto it = gts.find(stem);
    if (it == gts.end()) {
      out.missing.push_back("no ground truth for " + p.string());
      continue;
    }
    try {
      const Tensor pm = gray_tensor(read_png(p));
      const Tensor gm = mask_tensor(read_png(it->second));
      if (pm.shape() != gm.shape())
        throw ShapeError("size " + to_string(pm.shape()) + " differs from ground truth " + to_string(gm.shape()));
      items.push_back(evaluate_pair(pm, gm, stem));
    } catch (const std::exception& e) {
      out.errors.push_back(stem + ": " + e.what());
    }
  }
  out.report = aggregate(std::move(items));
  return out;
}

}  // namespace msfa
