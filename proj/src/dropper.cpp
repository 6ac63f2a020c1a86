// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/dropper.hpp"

#include <algorithm>
#include <numeric>

#include "tinydrop/error.hpp"

namespace tinydrop {

namespace {

void check_selection(const TokenSelection& sel, std::size_t limit, const char* op) {
  if (sel.keep_indices.empty()) throw SelectionError(std::string(op) + ": empty selection");
  for (std::size_t i = 0; i < sel.keep_indices.size(); ++i) {
    if (sel.keep_indices[i] >= limit) {
      throw SelectionError(std::string(op) + ": index " + std::to_string(sel.keep_indices[i]) +
                           " out of bounds for " + std::to_string(limit) + " patch tokens");
    }
    if (i > 0 && sel.keep_indices[i] <= sel.keep_indices[i - 1]) {
      throw SelectionError(std::string(op) + ": indices must be strictly increasing");
    }
  }
}

std::vector<std::size_t> with_class_token(const TokenSelection& sel) {
  std::vector<std::size_t> rows;
  rows.reserve(sel.size() + 1);
  rows.push_back(0);
  for (auto i : sel.keep_indices) rows.push_back(i + 1);
  return rows;
}

}  // namespace

TokenSelection TokenSelection::all(std::size_t tokens) {
  TokenSelection s;
  s.keep_indices.resize(tokens);
  std::iota(s.keep_indices.begin(), s.keep_indices.end(), std::size_t{0});
  return s;
}

TokenSelection select_tokens(const SaliencyMap& saliency, std::size_t kept) {
  if (kept < 1 || kept > saliency.tokens()) {
    throw ArgumentError("select_tokens: K=" + std::to_string(kept) + " outside [1, " +
                        std::to_string(saliency.tokens()) + "]");
  }
  return TokenSelection{arg_top_k(saliency.scores, kept)};
}

Tensor gather_tokens(const Tensor& x_patch, const Tensor& x_cls, const TokenSelection& sel) {
  if (x_patch.rank() != 2 || x_cls.size() != x_patch.dim(1)) {
    throw DimensionError("gather_tokens: class token " + x_cls.shape_str() + " does not match patches " +
                         x_patch.shape_str());
  }
  check_selection(sel, x_patch.dim(0), "gather_tokens");
  const std::size_t C = x_patch.dim(1);
  Tensor out({sel.size() + 1, C});
  std::copy(x_cls.data().begin(), x_cls.data().end(), out.row(0).begin());
  for (std::size_t j = 0; j < sel.size(); ++j) {
    const auto src = x_patch.row(sel.keep_indices[j]);
    std::copy(src.begin(), src.end(), out.row(j + 1).begin());
  }
  return out;
}

Tensor adapt_absolute(const Tensor& pos_embed, const TokenSelection& sel) {
  if (pos_embed.rank() != 2 || pos_embed.dim(0) < 2) {
    throw AdaptationError("adapt_absolute: positional table " + pos_embed.shape_str() +
                          " must be [(T+1)xC]");
  }
  try {
    check_selection(sel, pos_embed.dim(0) - 1, "adapt_absolute");
  } catch (const SelectionError& e) {
    throw AdaptationError(e.what());
  }
  const auto rows = with_class_token(sel);
  Tensor out({rows.size(), pos_embed.dim(1)});
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto src = pos_embed.row(rows[j]);
    std::copy(src.begin(), src.end(), out.row(j).begin());
  }
  return out;
}

Tensor adapt_relative_bias(const Tensor& rel_bias, const TokenSelection& sel) {
  if (rel_bias.rank() != 3 || rel_bias.dim(0) != rel_bias.dim(1) || rel_bias.dim(0) < 2) {
    throw AdaptationError("adapt_relative_bias: bias table " + rel_bias.shape_str() +
                          " must be [(T+1)x(T+1)xheads]");
  }
  try {
    check_selection(sel, rel_bias.dim(0) - 1, "adapt_relative_bias");
  } catch (const SelectionError& e) {
    throw AdaptationError(e.what());
  }
  const auto idx = with_class_token(sel);
  const std::size_t n = idx.size(), heads = rel_bias.dim(2);
  Tensor out({n, n, heads});
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t h = 0; h < heads; ++h) out(a, b, h) = rel_bias(idx[a], idx[b], h);
    }
  }
  return out;
}

AdaptedPositional adapt_positional(const ViTConfig& cfg, const ViTWeights& weights,
                                   const TokenSelection& sel) {
  AdaptedPositional p;
  p.mode = cfg.pos_mode;
  p.table = cfg.pos_mode == PosMode::Absolute ? adapt_absolute(weights.pos_embed, sel)
                                              : adapt_relative_bias(weights.rel_bias, sel);
  return p;
}

std::string selection_to_json(const TokenSelection& sel) {
  std::string out = "[";
  for (std::size_t i = 0; i < sel.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(sel.keep_indices[i]);
  }
  return out + "]";
}

}  // namespace tinydrop
