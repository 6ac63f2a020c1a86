// SPDX-License-Identifier: Apache-2.0
#pragma once

// Analytic FLOP counts. One multiply-add counts as 2 FLOPs. Elementwise
// charges match the table in tensor.hpp:
//
//   bias add, residual add, positional add, attention scale   1 / element
//   relative-bias add                                          1 / element
//   softmax                                                    5 / element
//   layer norm, GELU                                           8 / element
//
// For a config with C = dim, H = hidden, P = patch_dim, T patch tokens, n
// tokens entering the blocks (class token included) and h heads:
//
//   embed   2·T·C·P + T·C   (all T patches are embedded before any drop)
//   pos     n·C              (absolute mode only)
//   block   8·n·C² + 4·n²·C + 4·n·C·H              matmuls
//           + 23·n·C + 9·n·H + 6·h·n² [+ h·n² relative mode]
//   pool    n·C              (mean-patch readout only)
//   norm    8·C              (one pooled row)
//   head    2·C·classes + classes
//
// Grad-CAM backward for the guidance model:
//
//   tail     = pool + norm + head at n = T+1
//   backward = 2 · tail
//   reduce   = 3·T·C + C + 14·T
//              (gradient pooling T·C + C, weighted channel sum 2·T·C, ReLU T,
//               bilinear resize 8·T, min-max normalize 3·T, top-K 2·T;
//               resize/normalize/top-K are charged at the guidance grid size)

#include <cstdint>

#include "tinydrop/model.hpp"
#include "tinydrop/policy.hpp"

namespace tinydrop {

inline constexpr const char* kFlopsConvention = "1 multiply-add = 2 FLOPs";

struct ForwardFlops {
  std::uint64_t embed = 0;
  std::uint64_t positional = 0;
  std::uint64_t block_matmul = 0;     // n-linear matmul terms, all blocks
  std::uint64_t attention_quadratic = 0;  // 4·n²·C per block
  std::uint64_t elementwise = 0;      // bias/residual/norm/GELU, n-linear, all blocks
  std::uint64_t attention_elementwise = 0;  // scale/softmax[/bias] on the n×n scores
  std::uint64_t head = 0;             // final norm + classifier

  std::uint64_t total() const {
    return embed + positional + block_matmul + attention_quadratic + elementwise +
           attention_elementwise + head;
  }
};

ForwardFlops vit_forward_breakdown(const ViTConfig& cfg, std::size_t n_tokens);
std::uint64_t vit_forward_flops(const ViTConfig& cfg, std::size_t n_tokens);

/// Cost of the guidance forward that produces the exit decision (full
/// sequence plus the confidence softmax).
std::uint64_t guidance_forward_flops(const ViTConfig& guidance_cfg);

std::uint64_t gradcam_reduction_flops(const ViTConfig& guidance_cfg);
std::uint64_t gradcam_backward_flops(const ViTConfig& guidance_cfg);

struct FlopsReport {
  std::uint64_t guidance_forward = 0;
  std::uint64_t gradcam_backward = 0;
  std::uint64_t target_forward = 0;
  std::uint64_t total = 0;
  std::size_t token_count_used = 0;  // K+1 on Proceed, T+1 on Exit

  friend bool operator==(const FlopsReport&, const FlopsReport&) = default;
};

FlopsReport pipeline_flops(const ExitDecision& decision, const ViTConfig& guidance_cfg,
                           const ViTConfig& target_cfg);

/// Cost of plain full-sequence target inference.
std::uint64_t baseline_flops(const ViTConfig& target_cfg);

}  // namespace tinydrop
