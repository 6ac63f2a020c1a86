// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <tinydrop/tinydrop.h>

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

namespace tinydrop::cli {

namespace {

const std::vector<double> kDefaultSweepTaus{0.5, 0.7, 0.8, 0.9, 0.95, 0.99};
const std::vector<double> kDefaultSweepGammas{0.25, 0.5, 1.0};

void check_tau(double v, const std::string& flag) {
  if (!(v > 0.0 && v < 1.0)) throw UsageError(flag + ": value " + std::to_string(v) + " not in (0,1)");
}

void check_gamma(double v, const std::string& flag) {
  if (!(v > 0.0)) throw UsageError(flag + ": value " + std::to_string(v) + " must be > 0");
}

void check_r_max(double v, const std::string& flag) {
  if (!(v >= 0.0 && v < 1.0)) throw UsageError(flag + ": value " + std::to_string(v) + " not in [0,1)");
}

void check_positive(std::uint64_t v, const std::string& flag) {
  if (v == 0) throw UsageError(flag + ": must be positive");
}

std::uint64_t seed_from_env(const char* env_seed) {
  if (!env_seed || !*env_seed) return 1;
  std::uint64_t value = 0;
  std::size_t used = 0;
  try {
    value = std::stoull(env_seed, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || env_seed[used] != '\0' || env_seed[0] == '-') {
    throw UsageError(std::string("TINYDROP_SEED: not a positive integer: ") + env_seed);
  }
  check_positive(value, "TINYDROP_SEED");
  return value;
}

void add_policy_flags(CLI::App* sub, RunConfig& c) {
  sub->add_option("--tau", c.tau, "Early-exit confidence threshold in (0,1)")->capture_default_str();
  sub->add_option("--gamma", c.gamma, "Drop-ratio curvature, > 0")->capture_default_str();
  sub->add_option("--r-max", c.r_max, "Maximum drop ratio in [0,1)")->capture_default_str();
}

void add_model_flags(CLI::App* sub, RunConfig& c) {
  sub->add_option("--guidance", c.guidance_path, "Guidance model weights (TDW1)")->capture_default_str();
  sub->add_option("--target", c.target_path, "Target model weights (TDW1)")->capture_default_str();
}

void add_workers_flag(CLI::App* sub, RunConfig& c) {
  sub->add_option("--workers", c.workers, "Worker threads")->capture_default_str();
}

void validate(const RunConfig& c) {
  check_positive(c.seed, "--seed");
  check_positive(c.workers, "--workers");
  switch (c.command) {
    case Command::Infer:
    case Command::Eval:
      check_tau(c.tau, "--tau");
      check_gamma(c.gamma, "--gamma");
      check_r_max(c.r_max, "--r-max");
      break;
    case Command::Sweep:
      if (c.taus.empty()) throw UsageError("--tau: empty list");
      if (c.gammas.empty()) throw UsageError("--gamma: empty list");
      for (double t : c.taus) check_tau(t, "--tau");
      for (double g : c.gammas) check_gamma(g, "--gamma");
      check_r_max(c.r_max, "--r-max");
      break;
    case Command::GenData:
      check_positive(c.count, "--count");
      if (c.num_classes < 2) throw UsageError("--classes: need at least 2 classes");
      if (!(c.min_strength >= 0.0 && c.min_strength <= 1.0)) throw UsageError("--min-strength: not in [0,1]");
      if (!(c.max_strength >= 0.0 && c.max_strength <= 1.0)) throw UsageError("--max-strength: not in [0,1]");
      if (c.min_strength > c.max_strength) throw UsageError("--min-strength: exceeds --max-strength");
      break;
    case Command::Train:
      check_positive(c.epochs, "--epochs");
      check_positive(c.batch_size, "--batch-size");
      if (!(c.lr >= 0.0)) throw UsageError("--lr: must be >= 0");
      break;
    case Command::Flops:
      break;
  }
}

// ---- run ------------------------------------------------------------------

class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void check(td_status status, const std::string& what) {
  if (status != TD_OK) {
    throw RuntimeFailure(what + ": " + td_status_name(status) + ": " + td_last_error());
  }
}

struct ModelFree {
  void operator()(td_model* m) const { td_model_free(m); }
};
struct DatasetFree {
  void operator()(td_dataset* d) const { td_dataset_free(d); }
};
struct EvalFree {
  void operator()(td_eval* e) const { td_eval_free(e); }
};
using ModelPtr = std::unique_ptr<td_model, ModelFree>;
using DatasetPtr = std::unique_ptr<td_dataset, DatasetFree>;
using EvalPtr = std::unique_ptr<td_eval, EvalFree>;

ModelPtr load_model(const std::string& path) {
  td_model* m = nullptr;
  check(td_model_load(path.c_str(), &m), "loading " + path);
  return ModelPtr(m);
}

DatasetPtr load_dataset(const std::string& dir) {
  td_dataset* d = nullptr;
  check(td_dataset_load(dir.c_str(), &d), "loading dataset " + dir);
  return DatasetPtr(d);
}

void write_text(const std::string& path, const std::string& text) {
  check(td_write_file_atomic(path.c_str(), text.data(), text.size()), "writing " + path);
}

td_policy policy_of(const RunConfig& c) { return td_policy{c.tau, c.gamma, c.r_max}; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Strips a trailing extension so debug dumps sit next to the prediction file.
std::string stem_of(const std::string& path) {
  const auto slash = path.find_last_of('/');
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path;
  return path.substr(0, dot);
}

int run_gen_data(const RunConfig& c) {
  td_data_options opts;
  td_data_options_defaults(&opts);
  opts.count = c.count;
  opts.num_classes = c.num_classes;
  opts.min_strength = c.min_strength;
  opts.max_strength = c.max_strength;
  td_dataset* raw = nullptr;
  check(td_dataset_generate(&opts, c.seed, &raw), "generating dataset");
  DatasetPtr data(raw);
  const std::string out = c.output.empty() ? c.data_dir : c.output;
  check(td_dataset_save(data.get(), out.c_str()), "saving dataset to " + out);
  std::cout << "wrote " << td_dataset_size(data.get()) << " images to " << out << "\n";
  return 0;
}

int run_train(const RunConfig& c) {
  td_vit_config cfg;
  if (c.role == "guidance") {
    td_config_guidance_preset(&cfg);
  } else {
    td_config_target_preset(&cfg);
  }
  if (c.pos_mode == "absolute") cfg.pos_mode = TD_POS_ABSOLUTE;
  if (c.pos_mode == "relative_bias") cfg.pos_mode = TD_POS_RELATIVE_BIAS;

  DatasetPtr data = load_dataset(c.data_dir);
  td_model* raw = nullptr;
  check(td_model_create(&cfg, c.seed, &raw), "creating model");
  ModelPtr model(raw);

  td_train_options opts;
  td_train_options_defaults(&opts);
  opts.epochs = c.epochs;
  opts.lr = c.lr;
  opts.batch_size = c.batch_size;
  opts.seed = c.seed;
  double acc = 0.0;
  check(td_model_train(model.get(), data.get(), &opts, &acc), "training");

  const std::string out = c.output.empty() ? c.role + ".tdw" : c.output;
  check(td_model_save(model.get(), out.c_str()), "saving " + out);
  std::cout << c.role << " train accuracy " << fmt(acc) << ", weights written to " << out << "\n";
  return 0;
}

int run_infer(const RunConfig& c) {
  ModelPtr guidance = load_model(c.guidance_path);
  ModelPtr target = load_model(c.target_path);
  const td_policy policy = policy_of(c);
  const std::string out = c.output.empty() ? "prediction.json" : c.output;
  const std::string sal = c.dump_saliency ? stem_of(out) + ".saliency.csv" : "";
  const std::string sel = c.dump_selection ? stem_of(out) + ".selection.json" : "";
  const std::size_t label = c.label.value_or(0);
  td_sample_result r{};
  check(td_infer_file(guidance.get(), target.get(), c.image_path.c_str(), c.label ? &label : nullptr,
                      &policy, out.c_str(), sal.empty() ? nullptr : sal.c_str(),
                      sel.empty() ? nullptr : sel.c_str(), &r),
        "inferring " + c.image_path);
  std::cout << "prediction " << r.prediction << (r.exited_early ? " (early exit)" : "") << ", kept "
            << r.kept_tokens << "/" << r.total_tokens << " tokens, " << r.flops.total << " FLOPs\n";
  return 0;
}

int run_eval(const RunConfig& c) {
  ModelPtr guidance = load_model(c.guidance_path);
  ModelPtr target = load_model(c.target_path);
  DatasetPtr data = load_dataset(c.data_dir);
  const td_policy policy = policy_of(c);
  td_eval* raw = nullptr;
  check(td_evaluate(guidance.get(), target.get(), data.get(), &policy, c.workers, &raw), "evaluating");
  EvalPtr eval(raw);
  check(td_eval_write_jsonl(eval.get(), c.jsonl_path.c_str()), "writing " + c.jsonl_path);
  check(td_eval_write_csv(eval.get(), c.csv_path.c_str()), "writing " + c.csv_path);
  td_eval_summary s{};
  check(td_eval_get_summary(eval.get(), &s), "summarizing");
  std::cout << s.samples << " samples";
  if (s.has_accuracy) std::cout << ", accuracy " << fmt(s.accuracy);
  std::cout << ", mean GFLOPs " << fmt(s.mean_flops / 1e9) << ", exit rate " << fmt(s.exit_rate)
            << ", keep ratio " << fmt(s.mean_keep_ratio) << "\n";
  return 0;
}

int run_sweep(const RunConfig& c) {
  ModelPtr guidance = load_model(c.guidance_path);
  ModelPtr target = load_model(c.target_path);
  DatasetPtr data = load_dataset(c.data_dir);
  std::vector<td_eval_summary> out(c.taus.size() * c.gammas.size());
  check(td_sweep(guidance.get(), target.get(), data.get(), c.taus.data(), c.taus.size(), c.gammas.data(),
                 c.gammas.size(), c.r_max, c.workers, c.csv_path.c_str(), out.data()),
        "sweeping");
  td_eval_summary base{};
  check(td_evaluate_baseline(target.get(), data.get(), c.workers, &base), "evaluating baseline");
  std::cout << "baseline accuracy " << fmt(base.accuracy) << ", mean GFLOPs " << fmt(base.mean_flops / 1e9)
            << "\n";
  for (const auto& s : out) {
    std::cout << "tau " << s.params.tau << " gamma " << s.params.gamma << ": accuracy " << fmt(s.accuracy)
              << ", FLOPs reduction " << fmt(1.0 - s.mean_flops / base.mean_flops) << "\n";
  }
  std::cout << "wrote " << out.size() << " grid points to " << c.csv_path << "\n";
  return 0;
}

int run_flops(const RunConfig& c) {
  td_vit_config g;
  td_vit_config t;
  if (c.flops_from_presets) {
    td_config_guidance_preset(&g);
    td_config_target_preset(&t);
  } else {
    ModelPtr gm = load_model(c.guidance_path);
    ModelPtr tm = load_model(c.target_path);
    check(td_model_get_config(gm.get(), &g), "reading guidance config");
    check(td_model_get_config(tm.get(), &t), "reading target config");
  }
  const std::size_t grid = t.image_size / t.patch_size;
  const std::size_t tokens = grid * grid;

  std::ostringstream csv;
  csv << "outcome,kept,guidance_forward,gradcam_backward,target_forward,total\n";
  auto row = [&](int exited, std::size_t kept) {
    td_flops_report r{};
    check(td_flops_pipeline(&g, &t, exited, kept, &r), "counting FLOPs");
    csv << (exited ? "exit" : "proceed") << ',' << (exited ? tokens : kept) << ',' << r.guidance_forward << ','
        << r.gradcam_backward << ',' << r.target_forward << ',' << r.total << '\n';
  };
  row(1, 0);
  for (std::size_t k = 1; k <= tokens; ++k) row(0, k);

  if (c.output.empty()) {
    std::cout << csv.str();
  } else {
    write_text(c.output, csv.str());
  }
  return 0;
}

}  // namespace

std::variant<RunConfig, EarlyExit> parse_args(const std::vector<std::string>& args, const char* env_seed) {
  RunConfig c;
  CLI::App app{"Guided token dropping for vision transformers", "tinydrop"};
  app.set_version_flag("--version", std::string(td_version()));
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Random seed (default: TINYDROP_SEED or 1)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic grid dataset");
  gen->add_option("--out", c.output, "Output directory (default: data)");
  gen->add_option("--count", c.count, "Number of images")->capture_default_str();
  gen->add_option("--classes", c.num_classes, "Number of classes")->capture_default_str();
  gen->add_option("--min-strength", c.min_strength, "Minimum pattern strength")->capture_default_str();
  gen->add_option("--max-strength", c.max_strength, "Maximum pattern strength")->capture_default_str();
  add_seed(gen);

  auto* train = app.add_subcommand("train", "Train a guidance or target model from a preset");
  train->add_option("--role", c.role, "Preset to train")
      ->check(CLI::IsMember({"guidance", "target"}))
      ->capture_default_str();
  train->add_option("--data", c.data_dir, "Dataset directory")->capture_default_str();
  train->add_option("--out", c.output, "Output weights (default: <role>.tdw)");
  train->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", c.lr, "Learning rate")->capture_default_str();
  train->add_option("--batch-size", c.batch_size, "Minibatch size")->capture_default_str();
  train->add_option("--pos-mode", c.pos_mode, "Override positional mode")
      ->check(CLI::IsMember({"absolute", "relative_bias"}));
  add_seed(train);

  auto* infer = app.add_subcommand("infer", "Run the pipeline on one image tensor");
  add_model_flags(infer, c);
  add_policy_flags(infer, c);
  infer->add_option("--image", c.image_path, "Image tensor file (TDW1)")->required();
  std::size_t label = 0;
  auto* label_opt = infer->add_option("--label", label, "Ground-truth label");
  infer->add_option("--out", c.output, "Prediction JSON (default: prediction.json)");
  infer->add_flag("--dump-saliency", c.dump_saliency, "Write the saliency grid CSV next to the prediction");
  infer->add_flag("--dump-selection", c.dump_selection, "Write the kept-token selection JSON next to the prediction");

  auto* eval = app.add_subcommand("eval", "Evaluate the pipeline on a dataset");
  add_model_flags(eval, c);
  add_policy_flags(eval, c);
  eval->add_option("--data", c.data_dir, "Dataset directory")->capture_default_str();
  c.jsonl_path = "eval.jsonl";
  c.csv_path = "eval.csv";
  eval->add_option("--jsonl", c.jsonl_path, "Per-sample JSON lines output")->capture_default_str();
  eval->add_option("--csv", c.csv_path, "Summary CSV output")->capture_default_str();
  add_workers_flag(eval, c);

  auto* sweep = app.add_subcommand("sweep", "Evaluate a tau x gamma grid");
  add_model_flags(sweep, c);
  sweep->add_option("--data", c.data_dir, "Dataset directory")->capture_default_str();
  std::vector<double> taus = kDefaultSweepTaus;
  std::vector<double> gammas = kDefaultSweepGammas;
  sweep->add_option("--tau", taus, "Comma-separated thresholds")->delimiter(',')->capture_default_str();
  sweep->add_option("--gamma", gammas, "Comma-separated curvatures")->delimiter(',')->capture_default_str();
  sweep->add_option("--r-max", c.r_max, "Maximum drop ratio in [0,1)")->capture_default_str();
  std::string sweep_csv = "sweep.csv";
  sweep->add_option("--csv", sweep_csv, "Summary CSV output")->capture_default_str();
  add_workers_flag(sweep, c);

  auto* flops = app.add_subcommand("flops", "Print per-K pipeline FLOPs");
  auto* fg = flops->add_option("--guidance", c.guidance_path, "Guidance weights (default: preset)");
  auto* ft = flops->add_option("--target", c.target_path, "Target weights (default: preset)");
  flops->add_option("--out", c.output, "CSV output (default: stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::ostringstream out, err;
    app.exit(e, out, err);
    return EarlyExit{0, out.str()};
  } catch (const CLI::CallForAllHelp& e) {
    std::ostringstream out, err;
    app.exit(e, out, err);
    return EarlyExit{0, out.str()};
  } catch (const CLI::CallForVersion&) {
    return EarlyExit{0, std::string(td_version()) + "\n"};
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  if (gen->parsed()) c.command = Command::GenData;
  if (train->parsed()) c.command = Command::Train;
  if (infer->parsed()) c.command = Command::Infer;
  if (eval->parsed()) c.command = Command::Eval;
  if (sweep->parsed()) c.command = Command::Sweep;
  if (flops->parsed()) c.command = Command::Flops;

  if (seed == 0 && (gen->count("--seed") + train->count("--seed")) > 0) {
    throw UsageError("--seed: must be positive");
  }
  const bool seeded = c.command == Command::GenData || c.command == Command::Train;
  if (seeded) c.seed = seed != 0 ? seed : seed_from_env(env_seed);
  if (label_opt->count() > 0) c.label = label;
  if (c.command == Command::Sweep) {
    c.taus = taus;
    c.gammas = gammas;
    c.csv_path = sweep_csv;
  }
  if (c.command == Command::Flops) {
    c.flops_from_presets = fg->count() == 0 && ft->count() == 0;
  }
  validate(c);
  return c;
}

int run(const RunConfig& config) {
  try {
    switch (config.command) {
      case Command::GenData: return run_gen_data(config);
      case Command::Train: return run_train(config);
      case Command::Infer: return run_infer(config);
      case Command::Eval: return run_eval(config);
      case Command::Sweep: return run_sweep(config);
      case Command::Flops: return run_flops(config);
    }
  } catch (const std::exception& e) {
    std::cerr << "tinydrop: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int main_entry(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    auto parsed = parse_args(args, std::getenv("TINYDROP_SEED"));
    if (auto* early = std::get_if<EarlyExit>(&parsed)) {
      std::cout << early->text;
      return early->code;
    }
    return run(std::get<RunConfig>(parsed));
  } catch (const UsageError& e) {
    std::cerr << "tinydrop: usage error: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  }
}

}  // namespace tinydrop::cli
