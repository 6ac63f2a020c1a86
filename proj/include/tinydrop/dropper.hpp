// SPDX-License-Identifier: Apache-2.0
#pragma once

// Turns a saliency map and a keep count into the reduced token sequence and
// the positional structures that go with it. Row 0 is always the class token;
// row j ≥ 1 is patch keep_indices[j−1].

#include <string>
#include <vector>

#include "tinydrop/model.hpp"
#include "tinydrop/saliency.hpp"

namespace tinydrop {

struct TokenSelection {
  std::vector<std::size_t> keep_indices;  // strictly increasing, patch indices in [0, T)

  std::size_t size() const { return keep_indices.size(); }
  static TokenSelection all(std::size_t tokens);
};

/// Top-K scores, ties to the smaller index, returned in ascending order.
TokenSelection select_tokens(const SaliencyMap& saliency, std::size_t kept);

/// [x_cls; x_patch[keep_indices]] → [(K+1)×C]. Throws SelectionError on a
/// malformed selection.
Tensor gather_tokens(const Tensor& x_patch, const Tensor& x_cls, const TokenSelection& sel);

/// [P[0]; P[i+1] for i in keep_indices] → [(K+1)×C].
Tensor adapt_absolute(const Tensor& pos_embed, const TokenSelection& sel);

/// B[I, I, :] with I = [0] ++ (keep_indices + 1) → [(K+1)×(K+1)×heads].
Tensor adapt_relative_bias(const Tensor& rel_bias, const TokenSelection& sel);

/// The model's positional structure restricted to `sel`.
AdaptedPositional adapt_positional(const ViTConfig& cfg, const ViTWeights& weights,
                                   const TokenSelection& sel);

/// keep_indices as a JSON array, e.g. "[1,4,7]".
std::string selection_to_json(const TokenSelection& sel);

}  // namespace tinydrop
