// SPDX-License-Identifier: Apache-2.0
#pragma once

// Desk-scale vision transformer shared by the guidance and target roles.
//
// Block layout is pre-norm:
//   x ← x + proj(MHSA(LN₁(x)) [+ relative bias on the attention logits])
//   x ← x + fc₂(GELU(fc₁(LN₂(x))))
// Logits come from the final LayerNorm of either the class-token row or the
// mean of the patch-token rows, followed by a linear head.

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "tinydrop/tensor.hpp"

namespace tinydrop {

enum class PosMode { Absolute, RelativeBias };

std::string_view to_string(PosMode mode);
PosMode pos_mode_from_string(std::string_view text);

/// Which representation feeds the final norm and head.
enum class Readout { ClassToken, MeanPatch };

std::string_view to_string(Readout readout);
Readout readout_from_string(std::string_view text);

struct ViTConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t dim = 32;
  std::size_t depth = 2;
  std::size_t heads = 2;
  double mlp_ratio = 2.0;
  std::size_t num_classes = 4;
  PosMode pos_mode = PosMode::Absolute;
  Readout readout = Readout::ClassToken;

  std::size_t grid() const { return image_size / patch_size; }
  /// Patch tokens, excluding the class token.
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t hidden() const;
  std::size_t head_dim() const { return dim / heads; }

  /// Throws ConfigError when the configuration is inconsistent.
  void validate() const;

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

/// Desk-scale presets for the two roles (64×64×3 input, 4×4 patch grid).
ViTConfig guidance_preset();
ViTConfig target_preset();

struct BlockWeights {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv_w, qkv_b;    // [C×3C], [3C]; column blocks are Q | K | V
  Tensor proj_w, proj_b;  // [C×C], [C]
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b;  // [C×H], [H]
  Tensor fc2_w, fc2_b;  // [H×C], [C]

  friend bool operator==(const BlockWeights&, const BlockWeights&) = default;
};

struct ViTWeights {
  Tensor patch_w;      // [P×C]
  Tensor patch_b;      // [C]
  Tensor class_token;  // [1×C]
  Tensor pos_embed;    // [(T+1)×C], absolute mode only
  Tensor rel_bias;     // [(T+1)×(T+1)×heads], relative-bias mode only
  std::vector<BlockWeights> blocks;
  Tensor norm_gamma, norm_beta;
  Tensor head_w;  // [C×classes]
  Tensor head_b;  // [classes]

  /// Visits every active tensor in manifest order with a stable name.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;

  friend bool operator==(const ViTWeights&, const ViTWeights&) = default;
};

/// Expected shape of every active tensor, in manifest order.
std::vector<std::pair<std::string, Shape>> weight_manifest(const ViTConfig& cfg);

/// All-zero weights with the shapes the config requires.
ViTWeights zero_weights(const ViTConfig& cfg);

/// Seeded initialization: linear weights U(±1/√fan_in), zero biases, unit
/// norm gains, small uniform class token and positional parameters.
ViTWeights init_weights(const ViTConfig& cfg, std::uint64_t seed);

/// Throws ConfigError naming the first tensor whose shape disagrees with cfg.
void validate_weights(const ViTConfig& cfg, const ViTWeights& weights);

/// Positional structure matched to a (possibly reduced) token sequence. Row
/// (or row/column) 0 belongs to the class token.
struct AdaptedPositional {
  PosMode mode = PosMode::Absolute;
  Tensor table;  // [(K+1)×C] absolute, [(K+1)×(K+1)×heads] relative

  std::size_t tokens() const { return table.empty() ? 0 : table.dim(0); }
};

/// The unreduced positional structure of a model.
AdaptedPositional full_positional(const ViTConfig& cfg, const ViTWeights& weights);

struct ForwardTrace {
  Tensor logits;  // [num_classes]
  /// Output of the final transformer block [n×C], the activations Grad-CAM
  /// weights. For a block-free model these are the embedded tokens.
  Tensor final_block_features;
  AdaptedPositional positional;
  /// Sequence length seen by the embedding stage and by every block.
  std::vector<std::size_t> token_counts;
};

/// image [channels×H×W] → patch embeddings [T×C], patches in raster order,
/// each flattened channel-major then row-major before projection.
Tensor patch_embed(const Tensor& image, const ViTConfig& cfg, const ViTWeights& weights);

/// Flattened raw patches [T×P] in the order patch_embed projects them.
Tensor extract_patches(const Tensor& image, const ViTConfig& cfg);

/// Runs the transformer on a token sequence whose row 0 is the class token.
ForwardTrace forward(const Tensor& tokens, const AdaptedPositional& pos, const ViTConfig& cfg,
                     const ViTWeights& weights);

/// Full-sequence forward from an image.
ForwardTrace forward_image(const Tensor& image, const ViTConfig& cfg, const ViTWeights& weights);

/// Logits as a function of the final block's output: readout, final norm and
/// head. This is the function whose gradient Grad-CAM consumes.
Tensor tail_logits(const Tensor& features, const ViTConfig& cfg, const ViTWeights& weights);

// ---------------------------------------------------------------------------
// Reverse mode

/// ∂ logits[class_index] / ∂ features for tail_logits. With a class-token
/// readout every patch row of the result is zero.
Tensor tail_logit_gradient(const Tensor& features, std::size_t class_index, const ViTConfig& cfg,
                           const ViTWeights& weights);

/// Gradients of every parameter for a full-token forward from `image`, given
/// ∂loss/∂logits. Returns the logits of the forward pass.
Tensor accumulate_parameter_gradients(const Tensor& image, const ViTConfig& cfg,
                                      const ViTWeights& weights,
                                      const std::function<Tensor(const Tensor&)>& loss_grad,
                                      ViTWeights& grads);

}  // namespace tinydrop
