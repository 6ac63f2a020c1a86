// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward-pass pieces shared by inference and reverse mode.

#include <vector>

#include "tinydrop/model.hpp"

namespace tinydrop::detail {

struct NormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

struct BlockCache {
  NormCache ln1, ln2;
  Tensor h1;
  std::vector<Tensor> q, k, v, probs;  // per head
  Tensor attn_out;
  Tensor h2, u, g;
};

struct HeadCache {
  NormCache norm;
  Tensor z;  // normalized class-token row [1×C]
};

void check_positional(const AdaptedPositional& pos, std::size_t n, const ViTConfig& cfg);
Tensor layer_norm_cached(const Tensor& x, const Tensor& gamma, const Tensor& beta, NormCache* cache);
Tensor columns(const Tensor& x, std::size_t begin, std::size_t count);
void put_columns(Tensor& dst, const Tensor& src, std::size_t begin);
Tensor block_forward(const Tensor& x, const AdaptedPositional& pos, const BlockWeights& b,
                     const ViTConfig& cfg, BlockCache* cache);
void check_features(const Tensor& features, const ViTConfig& cfg);
Tensor head_forward(const Tensor& x, Readout readout, const ViTWeights& w, HeadCache* cache);
Tensor embed_tokens(const Tensor& tokens, const AdaptedPositional& pos);

}  // namespace tinydrop::detail
