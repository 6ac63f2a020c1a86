// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <variant>

namespace tinydrop {

struct PolicyParams {
  double tau = 0.9;    // exit threshold, in (0, 1)
  double gamma = 0.5;  // curvature of the confidence-to-drop map, > 0
  double r_max = 0.7;  // largest drop ratio, in [0, 1)

  /// Throws ArgumentError naming the offending field.
  void validate() const;
};

/// Guidance prediction is final.
struct Exit {
  std::size_t class_index = 0;
  double confidence = 0.0;
};

/// Defer to the target model with `kept_count` patch tokens.
struct Proceed {
  double confidence = 0.0;
  double drop_ratio = 0.0;
  std::size_t kept_count = 1;
};

using ExitDecision = std::variant<Exit, Proceed>;

/// Outcome of the exit test alone, before any drop ratio is computed.
struct ExitTest {
  bool exit = false;
  std::size_t class_index = 0;  // argmax of probs
  double confidence = 0.0;      // max of probs
};

/// Exit iff max(probs) > tau. Throws ContractError when probs do not sum to 1
/// within 1e-6 or contain negative entries.
ExitTest early_exit(std::span<const double> probs, double tau);

/// r = min(r_max, r_max · (c/τ)^γ), with c clamped to [0, τ] first.
double drop_ratio(double confidence, const PolicyParams& params);

/// K = max(1, ⌊(1 − r)·T⌋). The class token is not counted.
std::size_t kept_count(double drop_ratio, std::size_t tokens);

/// Full guidance-stage decision for a model with `tokens` patch tokens.
ExitDecision decide(std::span<const double> probs, const PolicyParams& params, std::size_t tokens);

}  // namespace tinydrop
