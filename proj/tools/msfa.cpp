// Command-line entry point: generate, train, predict, eval, report, ablate.
//
// Exit codes: 0 success, 1 runtime failure (including a non-finite loss or
// unscorable pairs under --strict), 2 usage, config or input error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "msfa/msfa.hpp"

namespace {

using namespace msfa;
namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Options shared by the config-driven subcommands.
struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  if (!(os << text)) throw IoError("cannot write " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

TrainConfig resolve(const std::string& profile, const CommonOptions& o) {
  std::vector<std::string> sets = o.sets;
  if (o.seed) sets.push_back("seed=" + std::to_string(*o.seed));
  return resolve_config(profile, o.config, sets);
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON config file; its \"profile\" key picks the base profile")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "Override as key=value, dotted keys for nested fields (repeatable)");
  cmd->add_option("--out", o.out, "Output directory")->required();
  cmd->add_option("--seed", o.seed, "Run seed (same as --set seed=N)");
}

void print_summary(const std::string& label, const MetricReport& r) {
  std::printf("%s: MAE %.4f  maxF %.4f  adpF %.4f  wF %.4f  S %.4f  E %.4f  (%zu images)\n", label.c_str(), r.mae,
              r.f_beta_max, r.f_beta_adaptive, r.weighted_f, r.s_measure, r.e_measure, r.images);
}

int cmd_generate(int n, int size, std::uint64_t seed, const fs::path& out) {
  const auto pairs = generate_synthetic(n, {size, size}, seed);
  write_dataset(out, pairs);
  std::vector<std::string> ids;
  for (const auto& p : pairs) ids.push_back(p.id);
  write_json(out / "generate.json", {{"n", n}, {"size", size}, {"seed", seed}, {"ids", ids}});
  std::printf("wrote %d pairs to %s\n", n, out.string().c_str());
  return 0;
}

int cmd_train(const CommonOptions& o, const std::string& profile) {
  const TrainConfig cfg = resolve(profile, o);
  const fs::path out = o.out;
  fs::create_directories(out);
  write_json(out / "config.json", cfg);
  std::vector<std::string> warnings;
  const auto [train_set, val_set] = load_training_data(cfg, &warnings);
  for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  MsfaModel model(cfg.model_config());
  TrainOptions opts;
  opts.out_dir = out;
  opts.on_step = [](const StepRecord& r) {
    if (r.step % 10 == 0) std::printf("step %5d  epoch %3d  lr %.3e  loss %.5f\n", r.step, r.epoch, r.lr, r.loss.total);
  };
  opts.on_eval = [](int epoch, const MetricReport& r) { print_summary("epoch " + std::to_string(epoch), r); };
  TrainResult res;
  try {
    res = train(model, cfg, train_set, val_set, opts);
  } catch (const NonFiniteLoss& e) {
    write_json(out / "failure.json", {{"error", e.what()}});
    throw;
  }
  json report = res.final_eval;
  write_json(out / "eval_report.json", report);
  write_text(out / "curve.csv", curve_csv(res.final_eval.curve));
  write_json(out / "result.json", {{"steps", res.steps},
                                   {"epochs", res.epochs},
                                   {"seconds", res.seconds},
                                   {"best_f_beta_max", res.best_f_beta_max},
                                   {"best_epoch", res.best_epoch},
                                   {"final", to_json_summary(res.final_eval)},
                                   {"warnings", warnings}});
  std::printf("trained %d steps in %.1f s\n", res.steps, res.seconds);
  print_summary(val_set.empty() ? "training set" : "validation set", res.final_eval);
  return 0;
}

int cmd_predict(const fs::path& checkpoint, const fs::path& images, const fs::path& out, int input_size) {
  if (!fs::is_regular_file(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
  json meta;
  MsfaModel model = model_from_checkpoint(checkpoint, &meta);
  if (input_size <= 0) input_size = meta.value(json::json_pointer("/config/input_size"), 384);
  const auto files = predict_dir(model, images, out, input_size);
  std::vector<std::string> names;
  for (const auto& f : files) names.push_back(f.filename().string());
  write_json(out / "predict.json",
             {{"checkpoint", checkpoint.string()}, {"input_size", input_size}, {"files", names}});
  std::printf("wrote %zu maps to %s\n", files.size(), out.string().c_str());
  return 0;
}

int cmd_eval(const fs::path& pred, const fs::path& gt, const fs::path& out, bool strict) {
  const DatasetEvaluation ev = evaluate_dataset(pred, gt);
  json j = ev.report;
  j["missing"] = ev.missing;
  j["errors"] = ev.errors;
  write_json(out / "report.json", j);
  write_text(out / "curve.csv", curve_csv(ev.report.curve));
  for (const auto& m : ev.missing) std::fprintf(stderr, "missing: %s\n", m.c_str());
  for (const auto& e : ev.errors) std::fprintf(stderr, "error: %s\n", e.c_str());
  print_summary(pred.string(), ev.report);
  if (strict && (!ev.missing.empty() || !ev.errors.empty())) return kExitRuntime;
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const fs::path& out) {
  std::string csv = "source,mae,f_beta_max,f_beta_adaptive,weighted_f,s_measure,e_measure,images\n";
  json rows = json::array();
  std::printf("%-32s %8s %8s %8s %8s %8s %8s\n", "source", "MAE", "maxF", "adpF", "wF", "S", "E");
  for (const auto& in : inputs) {
    std::ifstream is(in);
    if (!is) throw IoError("cannot open " + in);
    const json j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw ValidationError(in + " is not valid JSON");
    MetricReport r;
    try {
      r = j.contains("final") ? j.at("final").get<MetricReport>() : j.get<MetricReport>();
    } catch (const json::exception& e) {
      throw ValidationError(in + " is not a metric report: " + e.what());
    }
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%zu\n", in.c_str(), r.mae, r.f_beta_max,
                  r.f_beta_adaptive, r.weighted_f, r.s_measure, r.e_measure, r.images);
    csv += buf;
    json row = to_json_summary(r);
    row["source"] = in;
    rows.push_back(row);
    std::printf("%-32s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", in.c_str(), r.mae, r.f_beta_max, r.f_beta_adaptive,
                r.weighted_f, r.s_measure, r.e_measure);
  }
  write_text(out / "report.csv", csv);
  write_json(out / "report.json", rows);
  return 0;
}

int cmd_ablate(const CommonOptions& o) {
  const TrainConfig cfg = resolve("ablate", o);
  const fs::path out = o.out;
  fs::create_directories(out);
  write_json(out / "config.json", cfg);
  const auto [train_set, test_set] = load_training_data(cfg);
  const AblationResult r = run_ablation(cfg, train_set, test_set, [](const AblationRow& row) {
    std::printf("%-8s %-12s maxF %.4f  MAE %.4f  (%.0f s)\n", row.group.c_str(), row.name.c_str(), row.report.f_beta_max,
                row.report.mae, row.seconds);
    std::fflush(stdout);
  });
  write_json(out / "ablation.json", r);
  write_text(out / "ablation.csv", ablation_csv(r));
  const std::string table = ablation_table(r);
  write_text(out / "ablation.txt", table);
  std::printf("\n%s", table.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency detection with multi-scale feature aggregation: data, training and evaluation"};
  app.require_subcommand(1);

  int gen_n = 8, gen_size = 64;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "Write a synthetic image/mask dataset");
  gen->add_option("--n", gen_n, "Number of pairs")->check(CLI::PositiveNumber);
  gen->add_option("--size", gen_size, "Side length in pixels (multiple of 32)");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Dataset root (images/ and masks/ are created)")->required();

  CommonOptions train_opts;
  std::string train_profile = "desk";
  auto* tr = app.add_subcommand("train", "Train a model");
  add_common(tr, train_opts);
  tr->add_option("--profile", train_profile, "Base profile when no config file names one: desk, paper or ablate");

  std::string pred_ckpt, pred_images, pred_out;
  int pred_size = 0;
  auto* pr = app.add_subcommand("predict", "Write saliency maps for a directory of images");
  pr->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
  pr->add_option("--images", pred_images, "Directory of PNG images")->required();
  pr->add_option("--out", pred_out, "Output directory for PNG maps")->required();
  pr->add_option("--input-size", pred_size, "Network input size (default: the training size)");

  std::string ev_pred, ev_gt, ev_out;
  bool ev_strict = false;
  auto* ev = app.add_subcommand("eval", "Score predicted maps against ground-truth masks");
  ev->add_option("--pred", ev_pred, "Directory of predicted maps")->required();
  ev->add_option("--gt", ev_gt, "Directory of ground-truth masks")->required();
  ev->add_option("--out", ev_out, "Output directory for report.json and curve.csv")->required();
  ev->add_flag("--strict", ev_strict, "Exit 1 when any pair is missing or unreadable");

  std::vector<std::string> rep_in;
  std::string rep_out;
  auto* rep = app.add_subcommand("report", "Tabulate one or more metric reports");
  rep->add_option("reports", rep_in, "report.json or result.json files")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", rep_out, "Output directory for report.csv and report.json")->required();

  CommonOptions abl_opts;
  auto* abl = app.add_subcommand("ablate", "Run the loss-term and module ablation grids");
  add_common(abl, abl_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_generate(gen_n, gen_size, gen_seed, gen_out);
    if (*tr) return cmd_train(train_opts, train_profile);
    if (*pr) return cmd_predict(pred_ckpt, pred_images, pred_out, pred_size);
    if (*ev) return cmd_eval(ev_pred, ev_gt, ev_out, ev_strict);
    if (*rep) return cmd_report(rep_in, rep_out);
    if (*abl) return cmd_ablate(abl_opts);
  } catch (const NonFiniteLoss& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const VersionError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
