// SPDX-License-Identifier: Apache-2.0
// extern "C" surface over the C++ core.

#include "tinydrop/tinydrop.h"

#include <algorithm>
#include <exception>
#include <new>
#include <string>

#include <json.hpp>

#include "tinydrop/dataset.hpp"
#include "tinydrop/error.hpp"
#include "tinydrop/pipeline.hpp"
#include "tinydrop/report.hpp"
#include "tinydrop/train.hpp"
#include "tinydrop/weights_io.hpp"

struct td_model {
  tinydrop::Model model;
};

struct td_dataset {
  tinydrop::Dataset data;
};

struct td_eval {
  tinydrop::EvalResult result;
};

namespace {

using namespace tinydrop;

thread_local std::string tl_last_error;

td_status status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Argument: return TD_ERR_ARGUMENT;
    case ErrorKind::Dimension: return TD_ERR_DIMENSION;
    case ErrorKind::Config: return TD_ERR_CONFIG;
    case ErrorKind::Format: return TD_ERR_FORMAT;
    case ErrorKind::Io: return TD_ERR_IO;
    case ErrorKind::Training: return TD_ERR_TRAINING;
    case ErrorKind::Adaptation: return TD_ERR_ADAPTATION;
    case ErrorKind::Selection: return TD_ERR_SELECTION;
    case ErrorKind::Contract: return TD_ERR_CONTRACT;
  }
  return TD_ERR_INTERNAL;
}

template <class Fn>
td_status guarded(Fn&& fn) {
  try {
    fn();
    return TD_OK;
  } catch (const Error& e) {
    tl_last_error = e.what();
    return status_for(e.kind());
  } catch (const std::bad_alloc&) {
    tl_last_error = "out of memory";
    return TD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    tl_last_error = e.what();
    return TD_ERR_INTERNAL;
  } catch (...) {
    tl_last_error = "unknown error";
    return TD_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw ArgumentError(std::string(what) + " must not be NULL");
}

ViTConfig from_c(const td_vit_config& c) {
  ViTConfig cfg;
  cfg.image_size = c.image_size;
  cfg.patch_size = c.patch_size;
  cfg.channels = c.channels;
  cfg.dim = c.dim;
  cfg.depth = c.depth;
  cfg.heads = c.heads;
  cfg.mlp_ratio = c.mlp_ratio;
  cfg.num_classes = c.num_classes;
  cfg.pos_mode = c.pos_mode == TD_POS_RELATIVE_BIAS ? PosMode::RelativeBias : PosMode::Absolute;
  cfg.readout = c.readout == TD_READOUT_MEAN_PATCH ? Readout::MeanPatch : Readout::ClassToken;
  return cfg;
}

td_vit_config to_c(const ViTConfig& cfg) {
  td_vit_config c{};
  c.image_size = cfg.image_size;
  c.patch_size = cfg.patch_size;
  c.channels = cfg.channels;
  c.dim = cfg.dim;
  c.depth = cfg.depth;
  c.heads = cfg.heads;
  c.mlp_ratio = cfg.mlp_ratio;
  c.num_classes = cfg.num_classes;
  c.pos_mode = cfg.pos_mode == PosMode::RelativeBias ? TD_POS_RELATIVE_BIAS : TD_POS_ABSOLUTE;
  c.readout = cfg.readout == Readout::MeanPatch ? TD_READOUT_MEAN_PATCH : TD_READOUT_CLASS_TOKEN;
  return c;
}

PolicyParams from_c(const td_policy& p) { return PolicyParams{p.tau, p.gamma, p.r_max}; }

td_policy to_c(const PolicyParams& p) { return td_policy{p.tau, p.gamma, p.r_max}; }

td_flops_report to_c(const FlopsReport& f) {
  return td_flops_report{f.guidance_forward, f.gradcam_backward, f.target_forward, f.total,
                         f.token_count_used};
}

td_sample_result to_c(const SampleResult& r) {
  td_sample_result c{};
  c.prediction = r.prediction;
  c.exited_early = r.exited_early ? 1 : 0;
  c.confidence = r.confidence;
  c.drop_ratio = r.drop_ratio;
  c.kept_tokens = r.kept_tokens;
  c.total_tokens = r.total_tokens;
  c.has_label = r.label ? 1 : 0;
  c.label = r.label.value_or(0);
  c.correct = r.correct.value_or(false) ? 1 : 0;
  c.flops = to_c(r.flops);
  return c;
}

td_eval_summary to_c(const EvalSummary& s) {
  td_eval_summary c{};
  c.samples = s.samples;
  c.has_accuracy = s.accuracy ? 1 : 0;
  c.accuracy = s.accuracy.value_or(0.0);
  c.mean_flops = s.mean_flops;
  c.exit_rate = s.exit_rate;
  c.mean_keep_ratio = s.mean_keep_ratio;
  c.params = to_c(s.params);
  return c;
}

std::optional<std::size_t> opt_label(const size_t* label) {
  return label ? std::optional<std::size_t>(*label) : std::nullopt;
}

}  // namespace

extern "C" {

const char* td_last_error(void) { return tl_last_error.c_str(); }

const char* td_status_name(td_status status) {
  switch (status) {
    case TD_OK: return "ok";
    case TD_ERR_ARGUMENT: return "argument error";
    case TD_ERR_DIMENSION: return "dimension error";
    case TD_ERR_CONFIG: return "config error";
    case TD_ERR_FORMAT: return "format error";
    case TD_ERR_IO: return "I/O error";
    case TD_ERR_TRAINING: return "training error";
    case TD_ERR_ADAPTATION: return "adaptation error";
    case TD_ERR_SELECTION: return "selection error";
    case TD_ERR_CONTRACT: return "contract error";
    case TD_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* td_version(void) { return "1.0.0"; }

void td_policy_defaults(td_policy* out) {
  if (out) *out = to_c(PolicyParams{});
}

td_status td_policy_validate(const td_policy* policy) {
  return guarded([&] {
    require(policy, "policy");
    from_c(*policy).validate();
  });
}

void td_config_guidance_preset(td_vit_config* out) {
  if (out) *out = to_c(guidance_preset());
}

void td_config_target_preset(td_vit_config* out) {
  if (out) *out = to_c(target_preset());
}

void td_data_options_defaults(td_data_options* out) {
  if (!out) return;
  const ToyDataOptions d;
  *out = td_data_options{d.count, d.image_size, d.patch_size, d.channels,
                         d.num_classes, d.min_strength, d.max_strength};
}

void td_train_options_defaults(td_train_options* out) {
  if (!out) return;
  const TrainOptions d;
  *out = td_train_options{d.epochs, d.lr, d.seed, d.batch_size, d.momentum};
}

td_status td_model_create(const td_vit_config* config, uint64_t seed, td_model** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    const ViTConfig cfg = from_c(*config);
    cfg.validate();
    *out = new td_model{Model{cfg, init_weights(cfg, seed)}};
  });
}

td_status td_model_load(const char* path, td_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    auto [cfg, weights] = load_weights(path);
    *out = new td_model{Model{cfg, std::move(weights)}};
  });
}

td_status td_model_save(const td_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    save_weights(model->model.config, model->model.weights, path);
  });
}

td_status td_model_get_config(const td_model* model, td_vit_config* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = to_c(model->model.config);
  });
}

td_status td_model_train(td_model* model, const td_dataset* data, const td_train_options* options,
                         double* final_accuracy) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(options, "options");
    TrainOptions opts;
    opts.epochs = options->epochs;
    opts.lr = options->lr;
    opts.seed = options->seed;
    opts.batch_size = options->batch_size;
    opts.momentum = options->momentum;
    TrainResult r = train_toy(model->model.config, model->model.weights, data->data, opts);
    model->model.weights = std::move(r.weights);
    if (final_accuracy) *final_accuracy = r.final_accuracy;
  });
}

td_status td_model_accuracy(const td_model* model, const td_dataset* data, double* out) {
  return guarded([&] {
    require(model, "model");
    require(data, "data");
    require(out, "out");
    *out = accuracy(model->model.config, model->model.weights, data->data);
  });
}

void td_model_free(td_model* model) { delete model; }

td_status td_dataset_generate(const td_data_options* options, uint64_t seed, td_dataset** out) {
  return guarded([&] {
    require(options, "options");
    require(out, "out");
    ToyDataOptions o;
    o.count = options->count;
    o.image_size = options->image_size;
    o.patch_size = options->patch_size;
    o.channels = options->channels;
    o.num_classes = options->num_classes;
    o.min_strength = options->min_strength;
    o.max_strength = options->max_strength;
    *out = new td_dataset{generate_toy_dataset(o, seed)};
  });
}

td_status td_dataset_load(const char* dir, td_dataset** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new td_dataset{load_dataset(dir)};
  });
}

td_status td_dataset_save(const td_dataset* data, const char* dir) {
  return guarded([&] {
    require(data, "data");
    require(dir, "dir");
    save_dataset(data->data, dir);
  });
}

size_t td_dataset_size(const td_dataset* data) { return data ? data->data.size() : 0; }

void td_dataset_free(td_dataset* data) { delete data; }

td_status td_infer(const td_model* guidance, const td_model* target, const double* image, size_t length,
                   const size_t* label, const td_policy* policy, td_sample_result* out, double* saliency,
                   size_t* keep_indices, size_t* keep_count) {
  return guarded([&] {
    require(guidance, "guidance");
    require(target, "target");
    require(image, "image");
    require(policy, "policy");
    require(out, "out");
    const auto& cfg = target->model.config;
    const Shape shape{cfg.channels, cfg.image_size, cfg.image_size};
    if (length != cfg.channels * cfg.image_size * cfg.image_size) {
      throw DimensionError("image has " + std::to_string(length) + " values, model expects " +
                           to_string(shape));
    }
    const Tensor img(shape, std::vector<double>(image, image + length));
    const SampleResult r = infer_one(img, opt_label(label), guidance->model, target->model, from_c(*policy));
    *out = to_c(r);
    if (saliency && r.saliency) std::copy(r.saliency->scores.begin(), r.saliency->scores.end(), saliency);
    if (keep_indices) std::copy(r.selection.keep_indices.begin(), r.selection.keep_indices.end(), keep_indices);
    if (keep_count) *keep_count = r.selection.size();
  });
}

td_status td_infer_file(const td_model* guidance, const td_model* target, const char* image_path,
                        const size_t* label, const td_policy* policy, const char* prediction_path,
                        const char* saliency_csv_path, const char* selection_json_path,
                        td_sample_result* out) {
  return guarded([&] {
    require(guidance, "guidance");
    require(target, "target");
    require(image_path, "image_path");
    require(policy, "policy");
    require(prediction_path, "prediction_path");
    const Tensor img = load_tensor(image_path).tensor;
    const SampleResult r = infer_one(img, opt_label(label), guidance->model, target->model, from_c(*policy));

    auto doc = nlohmann::ordered_json::parse(sample_to_json(r));
    doc["keep_indices"] = r.selection.keep_indices;
    write_file_atomic(prediction_path, doc.dump() + "\n");
    if (saliency_csv_path && r.saliency) write_file_atomic(saliency_csv_path, saliency_to_csv(*r.saliency));
    if (selection_json_path && !r.exited_early) {
      write_file_atomic(selection_json_path, selection_to_json(r.selection) + "\n");
    }
    if (out) *out = to_c(r);
  });
}

td_status td_evaluate(const td_model* guidance, const td_model* target, const td_dataset* data,
                      const td_policy* policy, size_t workers, td_eval** out) {
  return guarded([&] {
    require(guidance, "guidance");
    require(target, "target");
    require(data, "data");
    require(policy, "policy");
    require(out, "out");
    *out = new td_eval{evaluate(data->data, guidance->model, target->model, from_c(*policy), workers)};
  });
}

td_status td_eval_get_summary(const td_eval* eval, td_eval_summary* out) {
  return guarded([&] {
    require(eval, "eval");
    require(out, "out");
    *out = to_c(eval->result.summary);
  });
}

size_t td_eval_size(const td_eval* eval) { return eval ? eval->result.records.size() : 0; }

td_status td_eval_get_sample(const td_eval* eval, size_t index, td_sample_result* out) {
  return guarded([&] {
    require(eval, "eval");
    require(out, "out");
    if (index >= eval->result.records.size()) throw ArgumentError("sample index out of range");
    *out = to_c(eval->result.records[index]);
  });
}

td_status td_eval_write_jsonl(const td_eval* eval, const char* path) {
  return guarded([&] {
    require(eval, "eval");
    require(path, "path");
    write_file_atomic(path, records_to_jsonl(eval->result.records));
  });
}

td_status td_eval_write_csv(const td_eval* eval, const char* path) {
  return guarded([&] {
    require(eval, "eval");
    require(path, "path");
    const EvalSummary s = eval->result.summary;
    write_file_atomic(path, summaries_to_csv(std::span<const EvalSummary>(&s, 1)));
  });
}

void td_eval_free(td_eval* eval) { delete eval; }

td_status td_evaluate_baseline(const td_model* target, const td_dataset* data, size_t workers,
                               td_eval_summary* out) {
  return guarded([&] {
    require(target, "target");
    require(data, "data");
    require(out, "out");
    *out = to_c(evaluate_baseline(data->data, target->model, workers));
  });
}

td_status td_sweep(const td_model* guidance, const td_model* target, const td_dataset* data,
                   const double* taus, size_t n_tau, const double* gammas, size_t n_gamma, double r_max,
                   size_t workers, const char* csv_path, td_eval_summary* out) {
  return guarded([&] {
    require(guidance, "guidance");
    require(target, "target");
    require(data, "data");
    require(taus, "taus");
    require(gammas, "gammas");
    SweepGrid grid;
    grid.taus.assign(taus, taus + n_tau);
    grid.gammas.assign(gammas, gammas + n_gamma);
    grid.r_max = r_max;
    const auto summaries = sweep(data->data, guidance->model, target->model, grid, workers);
    if (csv_path) write_file_atomic(csv_path, summaries_to_csv(summaries));
    if (out) {
      for (std::size_t i = 0; i < summaries.size(); ++i) out[i] = to_c(summaries[i]);
    }
  });
}

td_status td_flops_forward(const td_vit_config* config, size_t n_tokens, uint64_t* out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = vit_forward_flops(from_c(*config), n_tokens);
  });
}

td_status td_flops_gradcam(const td_vit_config* guidance, uint64_t* out) {
  return guarded([&] {
    require(guidance, "guidance");
    require(out, "out");
    *out = gradcam_backward_flops(from_c(*guidance));
  });
}

td_status td_flops_pipeline(const td_vit_config* guidance, const td_vit_config* target, int exited,
                            size_t kept_count, td_flops_report* out) {
  return guarded([&] {
    require(guidance, "guidance");
    require(target, "target");
    require(out, "out");
    ExitDecision d = exited ? ExitDecision{Exit{}} : ExitDecision{Proceed{0.0, 0.0, kept_count}};
    *out = to_c(pipeline_flops(d, from_c(*guidance), from_c(*target)));
  });
}

td_status td_write_file_atomic(const char* path, const char* data, size_t length) {
  return guarded([&] {
    require(path, "path");
    if (length) require(data, "data");
    write_file_atomic(path, std::string(data ? data : "", length));
  });
}

}  // extern "C"
