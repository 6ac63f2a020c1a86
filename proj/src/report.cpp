// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/report.hpp"

#include <cstdio>

#include <json.hpp>

namespace tinydrop {

namespace {

using json = nlohmann::ordered_json;

json flops_json(const FlopsReport& f) {
  return json{{"convention", kFlopsConvention},
              {"guidance_forward", f.guidance_forward},
              {"gradcam_backward", f.gradcam_backward},
              {"target_forward", f.target_forward},
              {"total", f.total},
              {"token_count_used", f.token_count_used}};
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

std::string sample_to_json(const SampleResult& r) {
  json j;
  j["index"] = r.index;
  j["label"] = r.label ? json(*r.label) : json(nullptr);
  j["prediction"] = r.prediction;
  j["correct"] = r.correct ? json(*r.correct) : json(nullptr);
  j["exited_early"] = r.exited_early;
  j["confidence"] = r.confidence;
  j["drop_ratio"] = r.drop_ratio;
  j["kept_tokens"] = r.kept_tokens;
  j["total_tokens"] = r.total_tokens;
  j["flops"] = flops_json(r.flops);
  return j.dump();
}

std::string records_to_jsonl(std::span<const SampleResult> records) {
  std::string out;
  for (const auto& r : records) {
    out += sample_to_json(r);
    out += '\n';
  }
  return out;
}

std::string summary_to_csv_row(const EvalSummary& s) {
  return num(s.params.tau) + ',' + num(s.params.gamma) + ',' + num(s.params.r_max) + ',' +
         (s.accuracy ? num(*s.accuracy) : std::string()) + ',' + num(s.mean_flops / 1e9) + ',' +
         num(s.exit_rate) + ',' + num(s.mean_keep_ratio);
}

std::string summaries_to_csv(std::span<const EvalSummary> summaries) {
  std::string out = kSummaryCsvHeader;
  out += '\n';
  for (const auto& s : summaries) {
    out += summary_to_csv_row(s);
    out += '\n';
  }
  return out;
}

std::string flops_to_json(const FlopsReport& f) { return flops_json(f).dump(); }

}  // namespace tinydrop
