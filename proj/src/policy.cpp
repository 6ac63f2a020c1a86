// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tinydrop/error.hpp"

namespace tinydrop {

void PolicyParams::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw ArgumentError("tau must lie in (0, 1), got " + std::to_string(tau));
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ArgumentError("gamma must be positive, got " + std::to_string(gamma));
  }
  if (!(r_max >= 0.0 && r_max < 1.0)) {
    throw ArgumentError("r_max must lie in [0, 1), got " + std::to_string(r_max));
  }
}

ExitTest early_exit(std::span<const double> probs, double tau) {
  if (probs.empty()) throw ContractError("early_exit: empty probability vector");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ContractError("early_exit: probabilities must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw ContractError("early_exit: probabilities sum to " + std::to_string(sum) + ", not 1");
  }
  const auto it = std::max_element(probs.begin(), probs.end());
  ExitTest out;
  out.class_index = static_cast<std::size_t>(it - probs.begin());
  out.confidence = *it;
  out.exit = out.confidence > tau;
  return out;
}

double drop_ratio(double confidence, const PolicyParams& params) {
  const double c = std::clamp(confidence, 0.0, params.tau);
  return std::min(params.r_max, params.r_max * std::pow(c / params.tau, params.gamma));
}

std::size_t kept_count(double drop_ratio, std::size_t tokens) {
  if (tokens < 1) throw ArgumentError("kept_count: token count must be at least 1");
  if (!(drop_ratio >= 0.0 && drop_ratio <= 1.0)) {
    throw ArgumentError("kept_count: drop ratio " + std::to_string(drop_ratio) + " outside [0, 1]");
  }
  const double kept = std::floor((1.0 - drop_ratio) * static_cast<double>(tokens));
  return std::max<std::size_t>(1, static_cast<std::size_t>(kept));
}

ExitDecision decide(std::span<const double> probs, const PolicyParams& params, std::size_t tokens) {
  const ExitTest test = early_exit(probs, params.tau);
  if (test.exit) return Exit{test.class_index, test.confidence};
  Proceed p;
  p.confidence = test.confidence;
  p.drop_ratio = drop_ratio(test.confidence, params);
  p.kept_count = kept_count(p.drop_ratio, tokens);
  return p;
}

}  // namespace tinydrop
