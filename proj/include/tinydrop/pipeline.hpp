// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-sample guided inference and dataset-level evaluation.
//
// infer_one: guidance forward → exit test → (Grad-CAM saliency → drop ratio →
// keep count → top-K selection → gather + positional adaptation → target
// forward on K+1 tokens). Every result carries its FLOPs report.

#include <optional>
#include <span>
#include <vector>

#include "tinydrop/dataset.hpp"
#include "tinydrop/dropper.hpp"
#include "tinydrop/flops.hpp"
#include "tinydrop/model.hpp"
#include "tinydrop/policy.hpp"
#include "tinydrop/saliency.hpp"

namespace tinydrop {

struct Model {
  ViTConfig config;
  ViTWeights weights;
};

struct SampleResult {
  std::size_t index = 0;
  std::optional<std::size_t> label;
  std::size_t prediction = 0;
  bool exited_early = false;
  double confidence = 0.0;
  double drop_ratio = 0.0;
  std::size_t kept_tokens = 0;   // K on Proceed, T on Exit
  std::size_t total_tokens = 0;  // T of the target model
  FlopsReport flops;
  std::optional<bool> correct;

  ExitDecision decision;
  Tensor logits;             // guidance logits on Exit, target logits otherwise
  TokenSelection selection;  // empty on Exit
  std::optional<SaliencyMap> saliency;
};

struct EvalSummary {
  std::size_t samples = 0;
  std::optional<double> accuracy;  // absent when no sample is labelled
  double mean_flops = 0.0;
  double exit_rate = 0.0;
  double mean_keep_ratio = 0.0;  // mean of kept_tokens / T over all samples
  PolicyParams params;
};

struct EvalResult {
  EvalSummary summary;
  std::vector<SampleResult> records;
};

/// Throws ConfigError unless the two models share input geometry and label space.
void check_compatible(const Model& guidance, const Model& target);

SampleResult infer_one(const Tensor& image, std::optional<std::size_t> label, const Model& guidance,
                       const Model& target, const PolicyParams& params);

/// Plain full-sequence target inference.
Tensor baseline_logits(const Tensor& image, const Model& target);

EvalSummary summarize(std::span<const SampleResult> records, const PolicyParams& params);

/// Runs infer_one over the dataset on `workers` threads. Records are in
/// dataset order and independent of the worker count.
EvalResult evaluate(const Dataset& dataset, const Model& guidance, const Model& target,
                    const PolicyParams& params, std::size_t workers = 1);

/// Full-token target evaluation used as the reference point.
EvalSummary evaluate_baseline(const Dataset& dataset, const Model& target, std::size_t workers = 1);

struct SweepGrid {
  std::vector<double> taus;
  std::vector<double> gammas;
  double r_max = 0.7;
};

/// One summary per (τ, γ) pair, τ-major. Guidance work is shared across grid
/// points; each summary equals what evaluate() reports for that point.
std::vector<EvalSummary> sweep(const Dataset& dataset, const Model& guidance, const Model& target,
                               const SweepGrid& grid, std::size_t workers = 1);

}  // namespace tinydrop
