// SPDX-License-Identifier: Apache-2.0
#pragma once

// Grad-CAM token importance from the guidance model, resampled onto the
// target model's token grid.

#include <string>
#include <vector>

#include "tinydrop/model.hpp"

namespace tinydrop {

struct SaliencyMap {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<double> scores;  // raster order, each in [0, 1]

  std::size_t tokens() const { return scores.size(); }
  Tensor as_grid() const;
};

/// ∂ logit[class_index] / ∂ A where A = trace.final_block_features.
Tensor tail_gradient(const ForwardTrace& trace, std::size_t class_index, const ViTConfig& cfg,
                     const ViTWeights& weights);

/// Grad-CAM over patch tokens: α_c = mean_t grad[t, c], map(t) = ReLU(Σ_c α_c A[t, c]),
/// laid out as an h×w raster. Row 0 (class token) of both inputs is ignored.
Tensor grad_cam(const Tensor& features, const Tensor& grad, std::size_t grid_h, std::size_t grid_w);
Tensor grad_cam(const ForwardTrace& trace, const Tensor& grad, std::size_t grid_h, std::size_t grid_w);

/// Bilinear resize of a Grad-CAM map to √T×√T, then min-max normalization.
SaliencyMap resample_to_target(const Tensor& cam, std::size_t target_tokens);

/// Saliency from an already computed guidance trace.
SaliencyMap saliency_from_trace(const ForwardTrace& trace, std::size_t class_index,
                                const ViTConfig& guidance_cfg, const ViTWeights& guidance_weights,
                                std::size_t target_tokens);

/// Runs the guidance model on `image` and returns its saliency for
/// `class_index` on a target grid of `target_tokens` patches.
SaliencyMap saliency_for_target(const Tensor& image, const ViTConfig& guidance_cfg,
                                const ViTWeights& guidance_weights, std::size_t class_index,
                                std::size_t target_tokens);

/// One CSV line per grid row.
std::string saliency_to_csv(const SaliencyMap& map);

/// Side length of a square token grid; throws ConfigError if `tokens` is not a
/// perfect square.
std::size_t square_side(std::size_t tokens);

}  // namespace tinydrop
