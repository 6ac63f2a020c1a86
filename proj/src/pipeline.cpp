// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/pipeline.hpp"

#include <atomic>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include "tinydrop/error.hpp"

namespace tinydrop {

namespace {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Errors are
/// rethrown after the join with the sample index attached.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::size_t first_error_index = n;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < first_error_index) {
          first_error_index = i;
          first_error = std::current_exception();
        }
      }
    }
  };

  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) {
    const std::string where = "sample " + std::to_string(first_error_index) + ": ";
    try {
      std::rethrow_exception(first_error);
    } catch (const Error& e) {
      throw Error(e.kind(), where + e.what());
    }
  }
}

struct GuidanceStage {
  ForwardTrace trace;
  ExitTest test;
  std::optional<SaliencyMap> saliency;
};

GuidanceStage run_guidance(const Tensor& image, const Model& guidance, const Model& target,
                           double tau, bool force_saliency) {
  GuidanceStage g;
  g.trace = forward_image(image, guidance.config, guidance.weights);
  const Tensor probs = softmax(g.trace.logits, 0);
  g.test = early_exit(probs.data(), tau);
  if (!g.test.exit || force_saliency) {
    g.saliency = saliency_from_trace(g.trace, g.test.class_index, guidance.config, guidance.weights,
                                     target.config.tokens());
  }
  return g;
}

Tensor target_forward(const Tensor& image, const Model& target, const TokenSelection& sel) {
  const Tensor x_patch = patch_embed(image, target.config, target.weights);
  const Tensor tokens = gather_tokens(x_patch, target.weights.class_token, sel);
  const AdaptedPositional pos = adapt_positional(target.config, target.weights, sel);
  return forward(tokens, pos, target.config, target.weights).logits;
}

/// Completes a sample from its guidance stage. `target_logits` computes the
/// reduced target forward for a selection (memoized by sweep).
SampleResult finish(std::size_t index, std::optional<std::size_t> label, const GuidanceStage& g,
                    const Model& guidance, const Model& target, const PolicyParams& params,
                    const std::function<Tensor(const TokenSelection&)>& target_logits) {
  SampleResult r;
  r.index = index;
  r.label = label;
  r.total_tokens = target.config.tokens();
  r.confidence = g.test.confidence;
  if (g.test.confidence > params.tau) {
    r.exited_early = true;
    r.prediction = g.test.class_index;
    r.kept_tokens = r.total_tokens;
    r.decision = Exit{g.test.class_index, g.test.confidence};
    r.logits = g.trace.logits;
  } else {
    Proceed p;
    p.confidence = g.test.confidence;
    p.drop_ratio = drop_ratio(p.confidence, params);
    p.kept_count = kept_count(p.drop_ratio, r.total_tokens);
    r.decision = p;
    r.drop_ratio = p.drop_ratio;
    r.kept_tokens = p.kept_count;
    r.saliency = g.saliency;
    r.selection = select_tokens(*g.saliency, p.kept_count);
    r.logits = target_logits(r.selection);
    r.prediction = argmax(r.logits.data());
  }
  r.flops = pipeline_flops(r.decision, guidance.config, target.config);
  if (label) r.correct = r.prediction == *label;
  return r;
}

}  // namespace

void check_compatible(const Model& guidance, const Model& target) {
  guidance.config.validate();
  target.config.validate();
  const auto& g = guidance.config;
  const auto& t = target.config;
  if (g.image_size != t.image_size || g.channels != t.channels) {
    throw ConfigError("guidance and target models expect different input images");
  }
  if (g.num_classes != t.num_classes) {
    throw ConfigError("guidance and target models have different class counts (" +
                      std::to_string(g.num_classes) + " vs " + std::to_string(t.num_classes) + ")");
  }
  square_side(t.tokens());
}

SampleResult infer_one(const Tensor& image, std::optional<std::size_t> label, const Model& guidance,
                       const Model& target, const PolicyParams& params) {
  params.validate();
  check_compatible(guidance, target);
  const GuidanceStage g = run_guidance(image, guidance, target, params.tau, false);
  return finish(0, label, g, guidance, target, params,
                [&](const TokenSelection& sel) { return target_forward(image, target, sel); });
}

Tensor baseline_logits(const Tensor& image, const Model& target) {
  return forward_image(image, target.config, target.weights).logits;
}

EvalSummary summarize(std::span<const SampleResult> records, const PolicyParams& params) {
  EvalSummary s;
  s.params = params;
  s.samples = records.size();
  if (records.empty()) return s;
  std::size_t labelled = 0, correct = 0, exits = 0;
  double flops = 0.0, keep = 0.0;
  for (const auto& r : records) {
    if (r.correct) {
      ++labelled;
      if (*r.correct) ++correct;
    }
    if (r.exited_early) ++exits;
    flops += static_cast<double>(r.flops.total);
    keep += static_cast<double>(r.kept_tokens) / static_cast<double>(r.total_tokens);
  }
  const double n = static_cast<double>(records.size());
  if (labelled) s.accuracy = static_cast<double>(correct) / static_cast<double>(labelled);
  s.mean_flops = flops / n;
  s.exit_rate = static_cast<double>(exits) / n;
  s.mean_keep_ratio = keep / n;
  return s;
}

EvalResult evaluate(const Dataset& dataset, const Model& guidance, const Model& target,
                    const PolicyParams& params, std::size_t workers) {
  if (dataset.empty()) throw ArgumentError("evaluate: dataset is empty");
  params.validate();
  check_compatible(guidance, target);
  EvalResult out;
  out.records.resize(dataset.size());
  parallel_for(dataset.size(), workers, [&](std::size_t i) {
    const auto& s = dataset.samples[i];
    const GuidanceStage g = run_guidance(s.image, guidance, target, params.tau, false);
    out.records[i] = finish(i, s.label, g, guidance, target, params,
                            [&](const TokenSelection& sel) { return target_forward(s.image, target, sel); });
  });
  out.summary = summarize(out.records, params);
  return out;
}

EvalSummary evaluate_baseline(const Dataset& dataset, const Model& target, std::size_t workers) {
  if (dataset.empty()) throw ArgumentError("evaluate_baseline: dataset is empty");
  std::vector<std::optional<bool>> correct(dataset.size());
  parallel_for(dataset.size(), workers, [&](std::size_t i) {
    const auto& s = dataset.samples[i];
    const Tensor logits = baseline_logits(s.image, target);
    if (s.label) correct[i] = argmax(logits.data()) == *s.label;
  });
  EvalSummary s;
  s.samples = dataset.size();
  s.params = PolicyParams{};
  s.params.r_max = 0.0;
  std::size_t labelled = 0, hits = 0;
  for (const auto& c : correct) {
    if (c) {
      ++labelled;
      hits += *c ? 1 : 0;
    }
  }
  if (labelled) s.accuracy = static_cast<double>(hits) / static_cast<double>(labelled);
  s.mean_flops = static_cast<double>(baseline_flops(target.config));
  s.exit_rate = 0.0;
  s.mean_keep_ratio = 1.0;
  return s;
}

std::vector<EvalSummary> sweep(const Dataset& dataset, const Model& guidance, const Model& target,
                               const SweepGrid& grid, std::size_t workers) {
  if (dataset.empty()) throw ArgumentError("sweep: dataset is empty");
  if (grid.taus.empty() || grid.gammas.empty()) throw ArgumentError("sweep: grid is empty");
  for (double tau : grid.taus) {
    for (double gamma : grid.gammas) PolicyParams{tau, gamma, grid.r_max}.validate();
  }
  check_compatible(guidance, target);

  // The guidance stage does not depend on τ or γ; saliency is computed for
  // every sample because some grid point may defer it.
  std::vector<GuidanceStage> stages(dataset.size());
  parallel_for(dataset.size(), workers, [&](std::size_t i) {
    stages[i] = run_guidance(dataset.samples[i].image, guidance, target, grid.taus.front(), true);
  });

  // Reduced target logits depend only on the sample and K.
  std::vector<std::map<std::size_t, Tensor>> memo(dataset.size());
  std::vector<EvalSummary> out;
  for (double tau : grid.taus) {
    for (double gamma : grid.gammas) {
      const PolicyParams params{tau, gamma, grid.r_max};
      std::vector<SampleResult> records(dataset.size());
      parallel_for(dataset.size(), workers, [&](std::size_t i) {
        const auto& s = dataset.samples[i];
        records[i] = finish(i, s.label, stages[i], guidance, target, params, [&](const TokenSelection& sel) {
          auto it = memo[i].find(sel.size());
          if (it == memo[i].end()) it = memo[i].emplace(sel.size(), target_forward(s.image, target, sel)).first;
          return it->second;
        });
      });
      out.push_back(summarize(records, params));
    }
  }
  return out;
}

}  // namespace tinydrop
