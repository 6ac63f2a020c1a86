// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tinydrop/error.hpp"

namespace tinydrop {

Tensor SaliencyMap::as_grid() const { return Tensor({grid_h, grid_w}, scores); }

std::size_t square_side(std::size_t tokens) {
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens))));
  if (tokens == 0 || side * side != tokens) {
    throw ConfigError("token count " + std::to_string(tokens) + " is not a perfect square");
  }
  return side;
}

Tensor tail_gradient(const ForwardTrace& trace, std::size_t class_index, const ViTConfig& cfg,
                     const ViTWeights& weights) {
  return tail_logit_gradient(trace.final_block_features, class_index, cfg, weights);
}

Tensor grad_cam(const Tensor& features, const Tensor& grad, std::size_t grid_h, std::size_t grid_w) {
  if (features.rank() != 2 || features.shape() != grad.shape()) {
    throw DimensionError("grad_cam: gradient " + grad.shape_str() + " does not match features " +
                         features.shape_str());
  }
  const std::size_t n = features.dim(0), C = features.dim(1);
  if (n < 2 || grid_h * grid_w != n - 1) {
    throw DimensionError("grad_cam: " + std::to_string(n - 1) + " patch tokens do not fill a " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  const std::size_t T = n - 1;
  std::vector<double> alpha(C, 0.0);
  for (std::size_t t = 1; t < n; ++t) {
    const auto g = grad.row(t);
    for (std::size_t c = 0; c < C; ++c) alpha[c] += g[c];
  }
  for (auto& a : alpha) a /= static_cast<double>(T);

  Tensor cam({grid_h, grid_w});
  for (std::size_t t = 0; t < T; ++t) {
    const auto a = features.row(t + 1);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += alpha[c] * a[c];
    cam[t] = std::max(0.0, s);
  }
  return cam;
}

Tensor grad_cam(const ForwardTrace& trace, const Tensor& grad, std::size_t grid_h, std::size_t grid_w) {
  return grad_cam(trace.final_block_features, grad, grid_h, grid_w);
}

SaliencyMap resample_to_target(const Tensor& cam, std::size_t target_tokens) {
  const std::size_t side = square_side(target_tokens);
  const Tensor normalized = minmax_normalize(bilinear_resize(cam, side, side));
  SaliencyMap map;
  map.grid_h = side;
  map.grid_w = side;
  map.scores = normalized.values();
  return map;
}

SaliencyMap saliency_from_trace(const ForwardTrace& trace, std::size_t class_index,
                                const ViTConfig& guidance_cfg, const ViTWeights& guidance_weights,
                                std::size_t target_tokens) {
  square_side(target_tokens);
  const std::size_t g = square_side(trace.final_block_features.dim(0) - 1);
  const Tensor grad = tail_gradient(trace, class_index, guidance_cfg, guidance_weights);
  return resample_to_target(grad_cam(trace, grad, g, g), target_tokens);
}

SaliencyMap saliency_for_target(const Tensor& image, const ViTConfig& guidance_cfg,
                                const ViTWeights& guidance_weights, std::size_t class_index,
                                std::size_t target_tokens) {
  square_side(target_tokens);
  const ForwardTrace trace = forward_image(image, guidance_cfg, guidance_weights);
  return saliency_from_trace(trace, class_index, guidance_cfg, guidance_weights, target_tokens);
}

std::string saliency_to_csv(const SaliencyMap& map) {
  std::string out;
  char buf[32];
  for (std::size_t r = 0; r < map.grid_h; ++r) {
    for (std::size_t c = 0; c < map.grid_w; ++c) {
      if (c) out += ',';
      std::snprintf(buf, sizeof buf, "%.17g", map.scores[r * map.grid_w + c]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace tinydrop
