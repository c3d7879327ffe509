// muvam: train, evaluate and inspect the multi-view attention VQA model.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error
// (validation failure in strict mode, unreadable or corrupt inputs),
// 3 numerical failure (non-finite loss, gradient check out of tolerance).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "muvam/muvam.hpp"

namespace fs = std::filesystem;
using namespace muvam;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma;
  std::optional<std::size_t> epochs;
  bool desk_scale = false;
  bool mask_padding = false;
  std::string dataset;
  std::string weights;
  std::string out;
  std::string format = "text";
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON file mirroring the training config");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--gamma", f.gamma, "Weight of the image-question complementarity loss");
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_flag("--desk-scale", f.desk_scale, "Use the small-dimension preset");
  cmd->add_flag("--mask-padding", f.mask_padding, "Exclude padding positions from attention");
  cmd->add_option("--dataset", f.dataset, "Dataset JSON file");
  cmd->add_option("--weights", f.weights, "Weight file");
  cmd->add_option("--out", f.out, "Output path");
  cmd->add_option("--format", f.format, "Output format")->check(CLI::IsMember({"text", "json"}));
}

TrainConfig resolve_config(const CommonFlags& f) {
  json doc = json::object();
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ConfigError("cannot open config '" + f.config + "'");
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config '" + f.config + "' is not valid JSON: " + e.what());
    }
  }
  if (f.desk_scale) doc["desk_scale"] = true;
  TrainConfig c = train_config_from_json(doc);
  if (f.seed) c.seed = *f.seed;
  if (f.gamma) c.gamma = *f.gamma;
  if (f.epochs) c.epochs = *f.epochs;
  if (f.mask_padding) c.model.mask_padding = true;
  if (!f.dataset.empty()) c.dataset = f.dataset;
  c.validate();
  return c;
}

bool as_json(const CommonFlags& f) { return f.format == "json"; }

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
  return value;
}

// Strict load plus the validation gate used before any training run.
Dataset load_for_training(const TrainConfig& cfg) {
  Dataset ds = load_dataset(require(cfg.dataset, "--dataset"), /*strict=*/true);
  ValidationReport blockers = training_blockers(ds, cfg.answer_policy);
  if (!blockers.empty()) {
    std::cerr << blockers.to_text();
    throw DataError("dataset failed validation (" + std::to_string(blockers.findings.size()) + " findings)");
  }
  return ds;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

void emit(const std::string& text) {
  std::cout << text;
  std::cout.flush();
}

int run_train(const CommonFlags& f, bool timing) {
  const TrainConfig cfg = resolve_config(f);
  const Dataset ds = load_for_training(cfg);
  const Corpus corpus = prepare_corpus(ds, cfg.model, cfg.answer_policy);
  std::ofstream metrics;
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    metrics.open(fs::path(f.out) / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    if (!metrics) throw DataError("cannot write metrics under '" + f.out + "'");
  }
  TrainResult result = train(cfg, corpus, [&](const MetricsRecord& rec) {
    const std::string line = rec.to_json(timing).dump() + "\n";
    if (metrics.is_open()) {
      metrics << line;
      metrics.flush();
    } else {
      std::cout << line;
    }
  });
  if (!f.out.empty()) {
    Checkpoint final_ckpt = make_checkpoint(result.final_model, corpus, cfg);
    final_ckpt.meta["epoch"] = cfg.epochs;
    save_weights(fs::path(f.out) / "final.weights", final_ckpt);
    Checkpoint best_ckpt = make_checkpoint(result.best_model, corpus, cfg);
    best_ckpt.meta["epoch"] = result.best_epoch;
    save_weights(fs::path(f.out) / "best.weights", best_ckpt);
    write_text(fs::path(f.out) / "config.json", train_config_to_json(cfg).dump(2) + "\n");
  }
  std::cerr << "best epoch " << result.best_epoch << ": overall " << fixed2(result.best_accuracy.overall())
            << "%\n";
  return kExitOk;
}

int run_evaluate(const CommonFlags& f, const std::string& split_name) {
  const Checkpoint ckpt = load_weights(require(f.weights, "--weights"));
  const Dataset ds = load_dataset(require(f.dataset, "--dataset"), /*strict=*/true);
  std::optional<Split> split;
  if (split_name != "all") split = parse_split(split_name);
  const Accuracy acc = evaluate_checkpoint(ckpt, ds, split);
  if (as_json(f)) {
    emit(acc.to_json().dump(2) + "\n");
  } else {
    emit("open     " + fixed2(acc.open()) + "  (" + std::to_string(acc.correct_open) + "/" +
                std::to_string(acc.total_open) + ")\n" + "closed   " + fixed2(acc.closed()) + "  (" +
                std::to_string(acc.correct_closed) + "/" + std::to_string(acc.total_closed) + ")\n" + "overall  " +
                fixed2(acc.overall()) + "\n");
  }
  return kExitOk;
}

int run_ablate(const CommonFlags& f) {
  const TrainConfig cfg = resolve_config(f);
  const Dataset ds = load_for_training(cfg);
  const Corpus corpus = prepare_corpus(ds, cfg.model, cfg.answer_policy);
  const std::string table = format_ablation_table(ablation_run(cfg, corpus), as_json(f));
  if (!f.out.empty()) write_text(f.out, table);
  emit(table);
  return kExitOk;
}

int run_sweep(const CommonFlags& f) {
  const TrainConfig cfg = resolve_config(f);
  const Dataset ds = load_for_training(cfg);
  const Corpus corpus = prepare_corpus(ds, cfg.model, cfg.answer_policy);
  const std::string table = format_gamma_table(gamma_sweep(cfg, corpus), as_json(f));
  if (!f.out.empty()) write_text(f.out, table);
  emit(table);
  return kExitOk;
}

int run_grad_check(const CommonFlags& f, double epsilon, std::size_t max_coords, double tolerance) {
  TrainConfig cfg = resolve_config(f);
  Dataset ds;
  if (cfg.dataset.empty()) {
    // No dataset given: check on a small synthetic one.
    FixtureOptions fo;
    fo.train_samples = 4;
    fo.image_size = cfg.model.image.image_size;
    fo.seed = cfg.seed;
    const fs::path dir = fs::temp_directory_path() / ("muvam_gradcheck_" + std::to_string(cfg.seed));
    ds = make_fixture(dir, fo);
  } else {
    ds = load_dataset(cfg.dataset, /*strict=*/true);
  }
  const Corpus corpus = prepare_corpus(ds, cfg.model, cfg.answer_policy);
  const MuvamModel<float> model = MuvamModel<float>::init(sized_model_config(cfg.model, corpus), cfg.seed);
  const GradCheckReport report =
      model_grad_check(model, corpus, cfg.loss(), model_grad_check_options(tolerance, epsilon, max_coords));
  emit(format_grad_check(report, as_json(f)));
  if (report.max_tensor_rel_error >= tolerance) {
    std::cerr << "gradient check failed: " << report.worst_tensor << " relative error "
              << report.max_tensor_rel_error << " >= " << tolerance << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

int run_explain(const CommonFlags& f, const std::string& sample_id) {
  const Checkpoint ckpt = load_weights(require(f.weights, "--weights"));
  const Dataset ds = load_dataset(require(f.dataset, "--dataset"), /*strict=*/true);
  const Corpus corpus = prepare_corpus(ds, ckpt.model.config, VocabularyPolicy::kTrainOnly, &ckpt.words, &ckpt.answers);
  MuvamModel<float> model = ckpt.model;
  bool found = false;
  for (const auto* part : {&corpus.train, &corpus.test}) {
    for (const auto& s : *part) {
      if (!sample_id.empty() && s.sample_id != sample_id) continue;
      found = true;
      emit(format_explain(explain(model, corpus, s), as_json(f)));
    }
  }
  if (!found) throw UsageError("no sample with id '" + sample_id + "'");
  return kExitOk;
}

int run_validate(const CommonFlags& f, const std::string& image_root, const std::string& policy, bool strict) {
  const fs::path path = require(f.dataset, "--dataset");
  const Dataset ds = load_dataset(path, /*strict=*/false);
  const VocabularyPolicy p = policy == "all" ? VocabularyPolicy::kAllSplits : VocabularyPolicy::kTrainOnly;
  ValidateOptions opts;
  opts.image_root = image_root.empty() ? ds.base_dir : fs::path(image_root);
  const ValidationReport report = validate(ds.samples, build_answer_vocabulary(ds.samples, p), opts);
  const std::string text = as_json(f) ? report.to_json().dump(2) + "\n" : report.to_text();
  if (!f.out.empty()) write_text(f.out, text);
  emit(text);
  return strict && !report.empty() ? kExitData : kExitOk;
}

int run_repair(const CommonFlags& f, const std::string& corrections_path) {
  const fs::path path = require(f.dataset, "--dataset");
  const std::string out = require(f.out, "--out");
  Dataset ds = load_dataset(path, /*strict=*/false);
  const auto corrections = load_corrections(require(corrections_path, "--corrections"));
  RepairResult result = repair(ds.samples, corrections);
  ds.samples = std::move(result.samples);
  save_dataset(out, ds);
  const json audit = audit_to_json(result.audit);
  write_text(out + ".audit.json", audit.dump(2) + "\n");
  std::size_t applied = 0;
  for (const auto& e : result.audit) applied += e.applied;
  if (as_json(f)) {
    emit(audit.dump(2) + "\n");
  } else {
    emit("applied " + std::to_string(applied) + " of " + std::to_string(result.audit.size()) +
                " corrections; audit log at " + out + ".audit.json\n");
  }
  return kExitOk;
}

int run_make_fixture(const CommonFlags& f, const FixtureOptions& fo) {
  const std::string out = require(f.out, "--out");
  const Dataset ds = make_fixture(out, fo);
  emit("wrote " + std::to_string(ds.samples.size()) + " samples to " + (fs::path(out) / "dataset.json").string() +
              "\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view attention medical VQA: training and inspection tool"};
  app.require_subcommand(1);
  CommonFlags f;

  auto* train_cmd = app.add_subcommand("train", "Train a model and write metrics and checkpoints");
  add_common(train_cmd, f);
  bool timing = false;
  train_cmd->add_flag("--timing", timing, "Include wall time in metrics records");

  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  add_common(eval_cmd, f);
  std::string split = "test";
  eval_cmd->add_option("--split", split, "Split to score")->check(CLI::IsMember({"train", "test", "all"}));

  auto* ablate_cmd = app.add_subcommand("ablate", "Train the four ablation variants and tabulate accuracy");
  add_common(ablate_cmd, f);

  auto* sweep_cmd = app.add_subcommand("sweep-gamma", "Train across the gamma grid and tabulate accuracy");
  add_common(sweep_cmd, f);

  auto* grad_cmd = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients");
  add_common(grad_cmd, f);
  double epsilon = 1e-5, tolerance = 1e-4;
  std::size_t max_coords = 0;
  grad_cmd->add_option("--epsilon", epsilon, "Primary central-difference step");
  grad_cmd->add_option("--max-coords", max_coords, "Coordinates probed per tensor (0 = all)");
  grad_cmd->add_option("--tolerance", tolerance, "Per-tensor relative error bound");

  auto* explain_cmd = app.add_subcommand("explain", "Dump per-word attention weights");
  add_common(explain_cmd, f);
  std::string sample_id;
  explain_cmd->add_option("--sample", sample_id, "Sample id (default: every sample)");

  auto* validate_cmd = app.add_subcommand("validate-data", "Report dataset anomalies");
  add_common(validate_cmd, f);
  std::string image_root, policy = "train";
  bool strict = false;
  validate_cmd->add_option("--image-root", image_root, "Directory image_refs resolve against");
  validate_cmd->add_option("--answer-policy", policy, "Candidate answers from")
      ->check(CLI::IsMember({"train", "all"}));
  validate_cmd->add_flag("--strict", strict, "Exit with status 2 when any finding is reported");

  auto* repair_cmd = app.add_subcommand("repair-data", "Apply a corrections file and write an audit log");
  add_common(repair_cmd, f);
  std::string corrections;
  repair_cmd->add_option("--corrections", corrections, "Corrections JSON file");

  auto* fixture_cmd = app.add_subcommand("make-fixture", "Write a synthetic dataset");
  add_common(fixture_cmd, f);
  FixtureOptions fo;
  fixture_cmd->add_option("--train", fo.train_samples, "Training samples");
  fixture_cmd->add_option("--test", fo.test_samples, "Test samples");
  fixture_cmd->add_option("--image-size", fo.image_size, "Image side in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(f, timing);
    if (*eval_cmd) return run_evaluate(f, split);
    if (*ablate_cmd) return run_ablate(f);
    if (*sweep_cmd) return run_sweep(f);
    if (*grad_cmd) return run_grad_check(f, epsilon, max_coords, tolerance);
    if (*explain_cmd) return run_explain(f, sample_id);
    if (*validate_cmd) return run_validate(f, image_root, policy, strict);
    if (*repair_cmd) return run_repair(f, corrections);
    if (*fixture_cmd) {
      if (f.seed) fo.seed = *f.seed;
      return run_make_fixture(f, fo);
    }
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const CorruptionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
