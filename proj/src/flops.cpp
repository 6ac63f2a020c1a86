// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/flops.hpp"

#include "tinydrop/error.hpp"

namespace tinydrop {

namespace {

std::uint64_t block_flops(const ViTConfig& cfg, std::uint64_t n, ForwardFlops* parts) {
  const std::uint64_t C = cfg.dim, H = cfg.hidden(), h = cfg.heads;
  const std::uint64_t matmul = 8 * n * C * C + 4 * n * C * H;
  const std::uint64_t quadratic = 4 * n * n * C;
  const std::uint64_t elementwise = 23 * n * C + 9 * n * H;
  std::uint64_t score_elementwise = 6 * h * n * n;
  if (cfg.pos_mode == PosMode::RelativeBias) score_elementwise += h * n * n;
  if (parts) {
    parts->block_matmul += matmul;
    parts->attention_quadratic += quadratic;
    parts->elementwise += elementwise;
    parts->attention_elementwise += score_elementwise;
  }
  return matmul + quadratic + elementwise + score_elementwise;
}

std::uint64_t head_flops(const ViTConfig& cfg, std::uint64_t n) {
  const std::uint64_t C = cfg.dim, K = cfg.num_classes;
  const std::uint64_t pool = cfg.readout == Readout::MeanPatch && n > 1 ? n * C : 0;
  return pool + 8 * C + 2 * C * K + K;
}

}  // namespace

ForwardFlops vit_forward_breakdown(const ViTConfig& cfg, std::size_t n_tokens) {
  cfg.validate();
  if (n_tokens < 1) throw ArgumentError("vit_forward_flops: n_tokens must be at least 1");
  const std::uint64_t T = cfg.tokens(), C = cfg.dim, P = cfg.patch_dim(), n = n_tokens;
  ForwardFlops f;
  f.embed = 2 * T * C * P + T * C;
  if (cfg.pos_mode == PosMode::Absolute) f.positional = n * C;
  for (std::size_t i = 0; i < cfg.depth; ++i) block_flops(cfg, n, &f);
  f.head = head_flops(cfg, n);
  return f;
}

std::uint64_t vit_forward_flops(const ViTConfig& cfg, std::size_t n_tokens) {
  return vit_forward_breakdown(cfg, n_tokens).total();
}

std::uint64_t guidance_forward_flops(const ViTConfig& guidance_cfg) {
  return vit_forward_flops(guidance_cfg, guidance_cfg.tokens() + 1) + 5 * guidance_cfg.num_classes;
}

std::uint64_t gradcam_reduction_flops(const ViTConfig& guidance_cfg) {
  guidance_cfg.validate();
  const std::uint64_t T = guidance_cfg.tokens(), C = guidance_cfg.dim;
  return 3 * T * C + C + 14 * T;
}

std::uint64_t gradcam_backward_flops(const ViTConfig& guidance_cfg) {
  guidance_cfg.validate();
  const std::uint64_t tail = head_flops(guidance_cfg, guidance_cfg.tokens() + 1);
  return 2 * tail + gradcam_reduction_flops(guidance_cfg);
}

FlopsReport pipeline_flops(const ExitDecision& decision, const ViTConfig& guidance_cfg,
                           const ViTConfig& target_cfg) {
  FlopsReport r;
  r.guidance_forward = guidance_forward_flops(guidance_cfg);
  if (const auto* p = std::get_if<Proceed>(&decision)) {
    if (p->kept_count < 1 || p->kept_count > target_cfg.tokens()) {
      throw ArgumentError("pipeline_flops: kept_count " + std::to_string(p->kept_count) +
                          " outside [1, " + std::to_string(target_cfg.tokens()) + "]");
    }
    r.gradcam_backward = gradcam_backward_flops(guidance_cfg);
    r.token_count_used = p->kept_count + 1;
    r.target_forward = vit_forward_flops(target_cfg, r.token_count_used);
  } else {
    r.token_count_used = target_cfg.tokens() + 1;
  }
  r.total = r.guidance_forward + r.gradcam_backward + r.target_forward;
  return r;
}

std::uint64_t baseline_flops(const ViTConfig& target_cfg) {
  return vit_forward_flops(target_cfg, target_cfg.tokens() + 1);
}

}  // namespace tinydrop
