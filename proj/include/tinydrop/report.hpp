// SPDX-License-Identifier: Apache-2.0
#pragma once

// Report serialization.
//
// Per-sample JSON lines, keys always in this order:
//   index, label, prediction, correct, exited_early, confidence, drop_ratio,
//   kept_tokens, total_tokens,
//   flops{convention, guidance_forward, gradcam_backward, target_forward,
//         total, token_count_used}
// label and correct are null for unlabelled samples.
//
// Aggregate CSV:
//   tau,gamma,r_max,accuracy,mean_gflops,exit_rate,mean_keep_ratio
// accuracy is an empty field when no sample is labelled.

#include <span>
#include <string>

#include "tinydrop/pipeline.hpp"

namespace tinydrop {

std::string sample_to_json(const SampleResult& r);
std::string records_to_jsonl(std::span<const SampleResult> records);

inline constexpr const char* kSummaryCsvHeader =
    "tau,gamma,r_max,accuracy,mean_gflops,exit_rate,mean_keep_ratio";
std::string summary_to_csv_row(const EvalSummary& s);
std::string summaries_to_csv(std::span<const EvalSummary> summaries);

std::string flops_to_json(const FlopsReport& f);

}  // namespace tinydrop
