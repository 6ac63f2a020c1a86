/* SPDX-License-Identifier: Apache-2.0 */
#ifndef TINYDROP_H
#define TINYDROP_H

/*
 * C interface to the tinydrop guided token-dropping engine.
 *
 * Objects are opaque handles created by td_*_create / td_*_load /
 * td_*_generate and released with the matching td_*_free. Every fallible call
 * returns a td_status; on failure td_last_error() describes the problem for
 * the calling thread until its next failing call.
 *
 * Handles are immutable after creation except through td_model_train, so a
 * model or dataset may be shared by concurrent readers.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(TINYDROP_BUILDING)
#    define TD_API __declspec(dllexport)
#  else
#    define TD_API __declspec(dllimport)
#  endif
#else
#  define TD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum td_status {
  TD_OK = 0,
  TD_ERR_ARGUMENT = 1,
  TD_ERR_DIMENSION = 2,
  TD_ERR_CONFIG = 3,
  TD_ERR_FORMAT = 4,
  TD_ERR_IO = 5,
  TD_ERR_TRAINING = 6,
  TD_ERR_ADAPTATION = 7,
  TD_ERR_SELECTION = 8,
  TD_ERR_CONTRACT = 9,
  TD_ERR_INTERNAL = 10
} td_status;

typedef struct td_model td_model;
typedef struct td_dataset td_dataset;
typedef struct td_eval td_eval;

typedef enum td_pos_mode { TD_POS_ABSOLUTE = 0, TD_POS_RELATIVE_BIAS = 1 } td_pos_mode;

/* Representation fed to the final norm and head. */
typedef enum td_readout { TD_READOUT_CLASS_TOKEN = 0, TD_READOUT_MEAN_PATCH = 1 } td_readout;

typedef struct td_vit_config {
  size_t image_size;
  size_t patch_size;
  size_t channels;
  size_t dim;
  size_t depth;
  size_t heads;
  double mlp_ratio;
  size_t num_classes;
  td_pos_mode pos_mode;
  td_readout readout;
} td_vit_config;

typedef struct td_policy {
  double tau;   /* exit threshold in (0,1) */
  double gamma; /* curvature, > 0 */
  double r_max; /* maximum drop ratio in [0,1) */
} td_policy;

/* FLOP counts use the 1 multiply-add = 2 FLOPs convention. */
typedef struct td_flops_report {
  uint64_t guidance_forward;
  uint64_t gradcam_backward;
  uint64_t target_forward;
  uint64_t total;
  size_t token_count_used;
} td_flops_report;

typedef struct td_sample_result {
  size_t prediction;
  int exited_early;
  double confidence;
  double drop_ratio;
  size_t kept_tokens;
  size_t total_tokens;
  int has_label;
  size_t label;
  int correct; /* meaningful only when has_label */
  td_flops_report flops;
} td_sample_result;

typedef struct td_eval_summary {
  size_t samples;
  int has_accuracy;
  double accuracy;
  double mean_flops;
  double exit_rate;
  double mean_keep_ratio;
  td_policy params;
} td_eval_summary;

typedef struct td_data_options {
  size_t count;
  size_t image_size;
  size_t patch_size;
  size_t channels;
  size_t num_classes;
  double min_strength;
  double max_strength;
} td_data_options;

typedef struct td_train_options {
  size_t epochs;
  double lr;
  uint64_t seed;
  size_t batch_size;
  double momentum;
} td_train_options;

/* ---- diagnostics ------------------------------------------------------ */

TD_API const char* td_last_error(void);
TD_API const char* td_status_name(td_status status);
TD_API const char* td_version(void);

/* ---- defaults --------------------------------------------------------- */

/* gamma = 0.5, r_max = 0.7, tau = 0.9 */
TD_API void td_policy_defaults(td_policy* out);
TD_API td_status td_policy_validate(const td_policy* policy);
TD_API void td_config_guidance_preset(td_vit_config* out);
TD_API void td_config_target_preset(td_vit_config* out);
TD_API void td_data_options_defaults(td_data_options* out);
TD_API void td_train_options_defaults(td_train_options* out);

/* ---- models ----------------------------------------------------------- */

TD_API td_status td_model_create(const td_vit_config* config, uint64_t seed, td_model** out);
TD_API td_status td_model_load(const char* path, td_model** out);
TD_API td_status td_model_save(const td_model* model, const char* path);
TD_API td_status td_model_get_config(const td_model* model, td_vit_config* out);
/* Trains in place; final_accuracy (nullable) receives the training accuracy. */
TD_API td_status td_model_train(td_model* model, const td_dataset* data,
                                const td_train_options* options, double* final_accuracy);
TD_API td_status td_model_accuracy(const td_model* model, const td_dataset* data, double* out);
TD_API void td_model_free(td_model* model);

/* ---- datasets --------------------------------------------------------- */

TD_API td_status td_dataset_generate(const td_data_options* options, uint64_t seed, td_dataset** out);
TD_API td_status td_dataset_load(const char* dir, td_dataset** out);
TD_API td_status td_dataset_save(const td_dataset* data, const char* dir);
TD_API size_t td_dataset_size(const td_dataset* data);
TD_API void td_dataset_free(td_dataset* data);

/* ---- inference -------------------------------------------------------- */

/* image: channels*H*W doubles in row-major order. label may be NULL.
 * saliency (nullable) receives T scores; keep_indices (nullable) receives up to
 * T indices with their count in *keep_count (0 on early exit). */
TD_API td_status td_infer(const td_model* guidance, const td_model* target, const double* image,
                          size_t length, const size_t* label, const td_policy* policy,
                          td_sample_result* out, double* saliency, size_t* keep_indices,
                          size_t* keep_count);

/* Loads a TDW1 image tensor and writes the prediction JSON to prediction_path.
 * saliency_csv_path / selection_json_path are optional debug dumps (NULL to
 * skip); nothing is written for them on early exit. */
TD_API td_status td_infer_file(const td_model* guidance, const td_model* target,
                               const char* image_path, const size_t* label,
                               const td_policy* policy, const char* prediction_path,
                               const char* saliency_csv_path, const char* selection_json_path,
                               td_sample_result* out);

TD_API td_status td_evaluate(const td_model* guidance, const td_model* target,
                             const td_dataset* data, const td_policy* policy, size_t workers,
                             td_eval** out);
TD_API td_status td_eval_get_summary(const td_eval* eval, td_eval_summary* out);
TD_API size_t td_eval_size(const td_eval* eval);
TD_API td_status td_eval_get_sample(const td_eval* eval, size_t index, td_sample_result* out);
TD_API td_status td_eval_write_jsonl(const td_eval* eval, const char* path);
TD_API td_status td_eval_write_csv(const td_eval* eval, const char* path);
TD_API void td_eval_free(td_eval* eval);

TD_API td_status td_evaluate_baseline(const td_model* target, const td_dataset* data, size_t workers,
                                      td_eval_summary* out);

/* Writes the aggregate CSV to csv_path (nullable) and, when out is non-NULL,
 * n_tau * n_gamma summaries in tau-major order. */
TD_API td_status td_sweep(const td_model* guidance, const td_model* target, const td_dataset* data,
                          const double* taus, size_t n_tau, const double* gammas, size_t n_gamma,
                          double r_max, size_t workers, const char* csv_path, td_eval_summary* out);

/* ---- FLOPs ------------------------------------------------------------ */

TD_API td_status td_flops_forward(const td_vit_config* config, size_t n_tokens, uint64_t* out);
TD_API td_status td_flops_gradcam(const td_vit_config* guidance, uint64_t* out);
/* kept_count is ignored when exited is non-zero. */
TD_API td_status td_flops_pipeline(const td_vit_config* guidance, const td_vit_config* target,
                                   int exited, size_t kept_count, td_flops_report* out);

/* ---- files ------------------------------------------------------------ */

/* Writes bytes to path through a temporary file and rename. */
TD_API td_status td_write_file_atomic(const char* path, const char* data, size_t length);

#ifdef __cplusplus
}
#endif

#endif /* TINYDROP_H */
