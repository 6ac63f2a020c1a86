// SPDX-License-Identifier: Apache-2.0
// Reverse-mode differentiation of the ViT forward pass.

#include <cmath>

#include "model_internal.hpp"
#include "tinydrop/error.hpp"

namespace tinydrop {

namespace {

using detail::BlockCache;
using detail::HeadCache;
using detail::NormCache;

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void accumulate_colsum(Tensor& dst, const Tensor& src) {
  for (std::size_t r = 0; r < src.dim(0); ++r) {
    const auto row = src.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) dst[c] += row[c];
  }
}

/// Backward of y = γ·x̂ + β. Accumulates dγ, dβ when given and returns dx.
Tensor layer_norm_backward(const Tensor& dy, const NormCache& cache, const Tensor& gamma,
                           Tensor* dgamma, Tensor* dbeta) {
  const std::size_t n = dy.dim(0), d = dy.dim(1);
  Tensor dx({n, d});
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    const auto g = dy.row(r);
    const auto xh = cache.xhat.row(r);
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dxhat[c] = g[c] * gamma[c];
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * xh[c];
      if (dgamma) (*dgamma)[c] += g[c] * xh[c];
      if (dbeta) (*dbeta)[c] += g[c];
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    auto out = dx.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      out[c] = cache.inv_std[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
    }
  }
  return dx;
}

/// Backward through one block. `x_in` is the block input, `grads` may be null
/// when only the input gradient is wanted. `dbias` collects ∂/∂(relative bias).
Tensor block_backward(const Tensor& dout, const Tensor& x_in, const BlockCache& cache,
                      const BlockWeights& b, const ViTConfig& cfg, BlockWeights* grads,
                      Tensor* dbias) {
  const std::size_t n = x_in.dim(0), C = cfg.dim, dh = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP branch.
  Tensor dx1 = dout;
  const Tensor& dm = dout;
  if (grads) {
    accumulate(grads->fc2_w, matmul_at(cache.g, dm));
    accumulate_colsum(grads->fc2_b, dm);
  }
  Tensor du = matmul_bt(dm, b.fc2_w);
  for (std::size_t i = 0; i < du.size(); ++i) du[i] *= gelu_derivative(cache.u[i]);
  if (grads) {
    accumulate(grads->fc1_w, matmul_at(cache.h2, du));
    accumulate_colsum(grads->fc1_b, du);
  }
  Tensor dh2 = matmul_bt(du, b.fc1_w);
  accumulate(dx1, layer_norm_backward(dh2, cache.ln2, b.ln2_gamma, grads ? &grads->ln2_gamma : nullptr,
                                      grads ? &grads->ln2_beta : nullptr));

  // Attention branch.
  Tensor dx = dx1;
  if (grads) {
    accumulate(grads->proj_w, matmul_at(cache.attn_out, dx1));
    accumulate_colsum(grads->proj_b, dx1);
  }
  Tensor d_attn = matmul_bt(dx1, b.proj_w);
  Tensor dqkv({n, 3 * C});
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const Tensor& q = cache.q[h];
    const Tensor& k = cache.k[h];
    const Tensor& v = cache.v[h];
    const Tensor& p = cache.probs[h];
    Tensor d_head = detail::columns(d_attn, h * dh, dh);
    Tensor dp = matmul_bt(d_head, v);
    Tensor dv = matmul_at(p, d_head);
    Tensor ds({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dp(i, j) * p(i, j);
      for (std::size_t j = 0; j < n; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot);
    }
    if (dbias) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) (*dbias)(i, j, h) += ds(i, j);
      }
    }
    for (auto& val : ds.data()) val *= attn_scale;
    detail::put_columns(dqkv, matmul(ds, k), h * dh);
    detail::put_columns(dqkv, matmul_at(ds, q), C + h * dh);
    detail::put_columns(dqkv, dv, 2 * C + h * dh);
  }
  if (grads) {
    accumulate(grads->qkv_w, matmul_at(cache.h1, dqkv));
    accumulate_colsum(grads->qkv_b, dqkv);
  }
  Tensor dh1 = matmul_bt(dqkv, b.qkv_w);
  accumulate(dx, layer_norm_backward(dh1, cache.ln1, b.ln1_gamma, grads ? &grads->ln1_gamma : nullptr,
                                     grads ? &grads->ln1_beta : nullptr));
  return dx;
}

/// Backward through head, final norm and readout.
Tensor head_backward(const Tensor& dlogits, const HeadCache& cache, std::size_t n, Readout readout,
                     const ViTWeights& w, ViTWeights* grads) {
  const std::size_t C = w.head_w.dim(0);
  const Tensor dl = dlogits.reshaped({1, dlogits.size()});
  if (grads) {
    accumulate(grads->head_w, matmul_at(cache.z, dl));
    accumulate_colsum(grads->head_b, dl);
  }
  Tensor dz = matmul_bt(dl, w.head_w);
  Tensor dcls = layer_norm_backward(dz, cache.norm, w.norm_gamma, grads ? &grads->norm_gamma : nullptr,
                                    grads ? &grads->norm_beta : nullptr);
  Tensor dx({n, C});
  if (readout == Readout::ClassToken || n == 1) {
    for (std::size_t c = 0; c < C; ++c) dx(0, c) = dcls(0, c);
  } else {
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (std::size_t r = 1; r < n; ++r) {
      for (std::size_t c = 0; c < C; ++c) dx(r, c) = dcls(0, c) * inv;
    }
  }
  return dx;
}

}  // namespace

Tensor tail_logit_gradient(const Tensor& features, std::size_t class_index, const ViTConfig& cfg,
                           const ViTWeights& weights) {
  if (class_index >= cfg.num_classes) {
    throw ArgumentError("class index " + std::to_string(class_index) + " out of range for " +
                        std::to_string(cfg.num_classes) + " classes");
  }
  detail::check_features(features, cfg);
  HeadCache head_cache;
  detail::head_forward(features, cfg.readout, weights, &head_cache);
  Tensor dlogits({cfg.num_classes});
  dlogits[class_index] = 1.0;
  return head_backward(dlogits, head_cache, features.dim(0), cfg.readout, weights, nullptr);
}

Tensor accumulate_parameter_gradients(const Tensor& image, const ViTConfig& cfg,
                                      const ViTWeights& weights,
                                      const std::function<Tensor(const Tensor&)>& loss_grad,
                                      ViTWeights& grads) {
  const AdaptedPositional pos = full_positional(cfg, weights);
  const Tensor patches = extract_patches(image, cfg);
  Tensor x_patch = matmul(patches, weights.patch_w);
  add_row_bias(x_patch, weights.patch_b);
  const std::size_t n = x_patch.dim(0) + 1, C = cfg.dim;
  Tensor tokens({n, C});
  for (std::size_t c = 0; c < C; ++c) tokens(0, c) = weights.class_token[c];
  std::copy(x_patch.data().begin(), x_patch.data().end(), tokens.data().begin() + static_cast<std::ptrdiff_t>(C));

  std::vector<Tensor> inputs;
  std::vector<BlockCache> caches(cfg.depth);
  Tensor x = detail::embed_tokens(tokens, pos);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    inputs.push_back(x);
    x = detail::block_forward(x, pos, weights.blocks[i], cfg, &caches[i]);
  }
  HeadCache head_cache;
  Tensor logits = detail::head_forward(x, cfg.readout, weights, &head_cache);

  const Tensor dlogits = loss_grad(logits);
  Tensor dx = head_backward(dlogits, head_cache, n, cfg.readout, weights, &grads);
  Tensor* dbias = cfg.pos_mode == PosMode::RelativeBias ? &grads.rel_bias : nullptr;
  for (std::size_t i = cfg.depth; i-- > 0;) {
    dx = block_backward(dx, inputs[i], caches[i], weights.blocks[i], cfg, &grads.blocks[i], dbias);
  }
  if (cfg.pos_mode == PosMode::Absolute) accumulate(grads.pos_embed, dx);
  for (std::size_t c = 0; c < C; ++c) grads.class_token[c] += dx(0, c);
  Tensor dpatch({n - 1, C});
  std::copy(dx.data().begin() + static_cast<std::ptrdiff_t>(C), dx.data().end(), dpatch.data().begin());
  accumulate(grads.patch_w, matmul_at(patches, dpatch));
  accumulate_colsum(grads.patch_b, dpatch);
  return logits;
}

}  // namespace tinydrop
