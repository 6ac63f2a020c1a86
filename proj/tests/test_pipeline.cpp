// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <tinydrop/error.hpp>
#include <tinydrop/pipeline.hpp>
#include <tinydrop/report.hpp>
#include <tinydrop/train.hpp>

#include <json.hpp>

#include "helpers.hpp"

using namespace tinydrop;
using namespace tdtest;

namespace {

struct Trained {
  Model guidance;
  Model target;
  Dataset test;
};

// Small toy models trained once for the whole suite.
const Trained& trained() {
  static const Trained t = [] {
    ToyDataOptions opts;
    opts.count = 300;
    const Dataset train = generate_toy_dataset(opts, 1);
    opts.count = 200;
    Trained out;
    out.test = generate_toy_dataset(opts, 2);
    TrainOptions topt;
    topt.epochs = 1;
    topt.seed = 3;
    out.guidance.config = guidance_preset();
    out.guidance.weights = train_toy(out.guidance.config, init_weights(out.guidance.config, 11), train, topt).weights;
    out.target.config = target_preset();
    out.target.weights = train_toy(out.target.config, init_weights(out.target.config, 12), train, topt).weights;
    return out;
  }();
  return t;
}

Model untrained(const ViTConfig& cfg, std::uint64_t seed) { return Model{cfg, init_weights(cfg, seed)}; }

Dataset first(const Dataset& d, std::size_t n) {
  Dataset out;
  out.samples.assign(d.samples.begin(), d.samples.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

void check_same_summary(const EvalSummary& a, const EvalSummary& b) {
  CHECK(a.samples == b.samples);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.mean_flops == b.mean_flops);
  CHECK(a.exit_rate == b.exit_rate);
  CHECK(a.mean_keep_ratio == b.mean_keep_ratio);
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("disabled mechanisms reproduce the full-token target") {
  Rng rng(1);
  const Model g = untrained(guidance_preset(), 2);
  const Model t = untrained(target_preset(), 3);
  const PolicyParams p{0.999999, 0.5, 0.0};
  for (int i = 0; i < 10; ++i) {
    const Tensor image = random_image(t.config, rng);
    const SampleResult r = infer_one(image, std::nullopt, g, t, p);
    REQUIRE_FALSE(r.exited_early);
    CHECK(r.kept_tokens == t.config.tokens());
    CHECK(max_abs_diff(r.logits, baseline_logits(image, t)) <= 1e-9);
    CHECK(r.prediction == argmax(baseline_logits(image, t).data()));
  }
}

TEST_CASE("a confident guidance model exits early") {
  Rng rng(4);
  Model g = untrained(guidance_preset(), 5);
  g.weights.head_b[2] = 60.0;
  const Model t = untrained(target_preset(), 6);
  const SampleResult r = infer_one(random_image(t.config, rng), std::size_t{2}, g, t, {0.999, 0.5, 0.7});
  CHECK(r.exited_early);
  CHECK(r.prediction == 2);
  CHECK(r.correct == std::optional<bool>(true));
  CHECK(r.kept_tokens == t.config.tokens());
  CHECK(r.flops.target_forward == 0);
  CHECK(r.selection.keep_indices.empty());
  CHECK_FALSE(r.saliency.has_value());
}

TEST_CASE("a top-saliency informative cell is always kept") {
  const Trained& m = trained();
  const PolicyParams p{0.999, 0.5, 0.7};
  std::size_t top_hits = 0;
  for (const Sample& s : m.test.samples) {
    const SampleResult r = infer_one(s.image, s.label, m.guidance, m.target, p);
    if (r.exited_early) continue;
    REQUIRE(r.saliency.has_value());
    if (argmax(r.saliency->scores) != *s.cell) continue;
    ++top_hits;
    const auto& keep = r.selection.keep_indices;
    CHECK(std::find(keep.begin(), keep.end(), *s.cell) != keep.end());
  }
  CHECK(top_hits > 0);
}

TEST_CASE("record invariants") {
  const Trained& m = trained();
  const PolicyParams p{0.95, 0.5, 0.7};
  const EvalResult res = evaluate(m.test, m.guidance, m.target, p, 2);
  for (const SampleResult& r : res.records) {
    if (r.exited_early) {
      CHECK(r.kept_tokens == r.total_tokens);
      CHECK(r.flops.target_forward == 0);
      CHECK(r.confidence > p.tau);
    } else {
      CHECK(r.confidence <= p.tau);
      CHECK(r.kept_tokens == r.selection.size());
      CHECK(r.kept_tokens >= 1);
      CHECK(r.saliency->tokens() == r.total_tokens);
    }
    CHECK(r.flops == pipeline_flops(r.decision, m.guidance.config, m.target.config));
  }
  const EvalSummary& s = res.summary;
  CHECK(s.exit_rate >= 0.0);
  CHECK(s.exit_rate <= 1.0);
  CHECK(s.mean_keep_ratio > 0.0);
  CHECK(s.mean_keep_ratio <= 1.0);
  double total = 0.0, lo = INFINITY;
  for (const SampleResult& r : res.records) {
    total += static_cast<double>(r.flops.total);
    lo = std::min(lo, static_cast<double>(r.flops.total));
  }
  CHECK(s.mean_flops == total / static_cast<double>(res.records.size()));
  CHECK(s.mean_flops >= lo);
}

TEST_CASE("a one-sample dataset summarizes to its record") {
  const Trained& m = trained();
  const PolicyParams p;
  const Dataset one = first(m.test, 1);
  const EvalResult res = evaluate(one, m.guidance, m.target, p);
  const SampleResult& r = res.records[0];
  CHECK(res.summary.samples == 1);
  CHECK(res.summary.accuracy == std::optional<double>(*r.correct ? 1.0 : 0.0));
  CHECK(res.summary.mean_flops == static_cast<double>(r.flops.total));
  CHECK(res.summary.exit_rate == (r.exited_early ? 1.0 : 0.0));
  CHECK(res.summary.mean_keep_ratio == static_cast<double>(r.kept_tokens) / static_cast<double>(r.total_tokens));
}

TEST_CASE("duplicating every sample leaves the summary unchanged") {
  const Trained& m = trained();
  const Dataset base = first(m.test, 64);
  Dataset doubled;
  for (const Sample& s : base.samples) {
    doubled.samples.push_back(s);
    doubled.samples.push_back(s);
  }
  const PolicyParams p{0.95, 0.5, 0.7};
  EvalSummary a = evaluate(base, m.guidance, m.target, p).summary;
  EvalSummary b = evaluate(doubled, m.guidance, m.target, p).summary;
  CHECK(b.samples == 2 * a.samples);
  b.samples = a.samples;
  CHECK(b.accuracy == a.accuracy);
  CHECK(b.mean_flops == doctest::Approx(a.mean_flops).epsilon(1e-15));
  CHECK(b.exit_rate == a.exit_rate);
  CHECK(b.mean_keep_ratio == doctest::Approx(a.mean_keep_ratio).epsilon(1e-15));
}

TEST_CASE("r_max = 0 costs exactly the guidance overhead over the baseline") {
  const Trained& m = trained();
  const PolicyParams p{0.95, 0.5, 0.0};
  const EvalResult res = evaluate(m.test, m.guidance, m.target, p, 4);
  const EvalSummary base = evaluate_baseline(m.test, m.target, 4);
  const double G = static_cast<double>(guidance_forward_flops(m.guidance.config));
  const double GC = static_cast<double>(gradcam_backward_flops(m.guidance.config));
  const double B = static_cast<double>(baseline_flops(m.target.config));
  const double n = static_cast<double>(m.test.size());
  const double exits = res.summary.exit_rate * n;
  CHECK(base.mean_flops == B);
  CHECK(res.summary.mean_flops == doctest::Approx((exits * G + (n - exits) * (G + GC + B)) / n).epsilon(1e-15));

  // With no exits the accuracy matches and the overhead is exactly G + GC.
  const Model g0 = untrained(guidance_preset(), 7);
  const EvalResult none = evaluate(m.test, g0, m.target, {0.999, 0.5, 0.0}, 4);
  REQUIRE(none.summary.exit_rate == 0.0);
  CHECK(none.summary.accuracy == base.accuracy);
  CHECK(none.summary.mean_flops - base.mean_flops == G + GC);
}

TEST_CASE("worker count does not change the records") {
  const Trained& m = trained();
  const PolicyParams p{0.95, 0.5, 0.7};
  const Dataset d = first(m.test, 60);
  const std::string one = records_to_jsonl(evaluate(d, m.guidance, m.target, p, 1).records);
  for (std::size_t w : {2u, 4u, 7u, 100u}) {
    CHECK(records_to_jsonl(evaluate(d, m.guidance, m.target, p, w).records) == one);
  }
}

TEST_CASE("sweep agrees with evaluate and is monotone") {
  const Trained& m = trained();
  SweepGrid grid;
  grid.taus = {0.5, 0.9, 0.99, 0.999};
  grid.gammas = {0.25, 0.5, 1.0};
  grid.r_max = 0.7;
  const std::vector<EvalSummary> table = sweep(m.test, m.guidance, m.target, grid, 4);
  REQUIRE(table.size() == 12);
  for (std::size_t i = 0; i < grid.taus.size(); ++i) {
    for (std::size_t j = 0; j < grid.gammas.size(); ++j) {
      const EvalSummary& s = table[i * 3 + j];
      CHECK(s.params.tau == grid.taus[i]);
      CHECK(s.params.gamma == grid.gammas[j]);
      check_same_summary(s, evaluate(m.test, m.guidance, m.target, {grid.taus[i], grid.gammas[j], 0.7}, 3).summary);
    }
  }
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 1; i < grid.taus.size(); ++i) CHECK(table[i * 3 + j].exit_rate <= table[(i - 1) * 3 + j].exit_rate);
  // Interior confidences at the highest tau: strict growth in gamma.
  const std::size_t last = (grid.taus.size() - 1) * 3;
  REQUIRE(table[last].exit_rate < 1.0);
  CHECK(table[last].mean_keep_ratio < table[last + 1].mean_keep_ratio);
  CHECK(table[last + 1].mean_keep_ratio < table[last + 2].mean_keep_ratio);
  CHECK(table[last].mean_flops < table[last + 1].mean_flops);
  CHECK(table[last + 1].mean_flops < table[last + 2].mean_flops);

  SweepGrid single;
  single.taus = {0.9};
  single.gammas = {0.5};
  check_same_summary(sweep(m.test, m.guidance, m.target, single)[0],
                     evaluate(m.test, m.guidance, m.target, PolicyParams{}).summary);
}

TEST_CASE("unlabelled samples leave accuracy absent") {
  const Trained& m = trained();
  Dataset d = first(m.test, 5);
  for (Sample& s : d.samples) s.label.reset();
  const EvalResult res = evaluate(d, m.guidance, m.target, PolicyParams{});
  CHECK_FALSE(res.summary.accuracy.has_value());
  for (const SampleResult& r : res.records) CHECK_FALSE(r.correct.has_value());
  const std::string csv = summaries_to_csv(std::span<const EvalSummary>(&res.summary, 1));
  CHECK(csv.find("0.9,0.5,0.7,,") != std::string::npos);
  CHECK(records_to_jsonl(res.records).find("\"label\":null") != std::string::npos);
}

TEST_CASE("incompatible models and bad inputs are rejected") {
  const Model g = untrained(guidance_preset(), 1);
  ViTConfig other = target_preset();
  other.num_classes = 5;
  CHECK_THROWS_AS(check_compatible(g, untrained(other, 2)), ConfigError);
  other = target_preset();
  other.image_size = 32;
  other.patch_size = 8;
  CHECK_THROWS_AS(check_compatible(g, untrained(other, 2)), ConfigError);
  const Model t = untrained(target_preset(), 3);
  CHECK_THROWS_AS(evaluate(Dataset{}, g, t, PolicyParams{}), ArgumentError);
  CHECK_THROWS_AS(infer_one(Tensor({3, 64, 64}), std::nullopt, g, t, {1.5, 0.5, 0.7}), ArgumentError);
}

TEST_CASE("report schemas") {
  const Trained& m = trained();
  const EvalResult res = evaluate(first(m.test, 10), m.guidance, m.target, {0.95, 0.5, 0.7});
  const std::string jsonl = records_to_jsonl(res.records);
  std::istringstream in(jsonl);
  std::string line;
  std::size_t lines = 0;
  const std::vector<std::string> keys{"index", "label", "prediction", "correct", "exited_early", "confidence",
                                      "drop_ratio", "kept_tokens", "total_tokens", "flops"};
  const std::vector<std::string> flops_keys{"convention", "guidance_forward", "gradcam_backward",
                                            "target_forward", "total", "token_count_used"};
  while (std::getline(in, line)) {
    const auto j = nlohmann::ordered_json::parse(line);
    std::vector<std::string> got, got_flops;
    for (const auto& [k, v] : j.items()) got.push_back(k);
    for (const auto& [k, v] : j["flops"].items()) got_flops.push_back(k);
    CHECK(got == keys);
    CHECK(got_flops == flops_keys);
    CHECK(j["flops"]["convention"] == "1 multiply-add = 2 FLOPs");
    CHECK(j["index"] == lines);
    ++lines;
  }
  CHECK(lines == 10);
  const std::string csv = summaries_to_csv(std::span<const EvalSummary>(&res.summary, 1));
  CHECK(csv.rfind("tau,gamma,r_max,accuracy,mean_gflops,exit_rate,mean_keep_ratio\n", 0) == 0);
}

}  // TEST_SUITE
