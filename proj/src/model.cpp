// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/model.hpp"

#include <cmath>

#include "model_internal.hpp"
#include "tinydrop/error.hpp"
#include "tinydrop/rng.hpp"

namespace tinydrop {

std::string_view to_string(PosMode mode) {
  return mode == PosMode::Absolute ? "absolute" : "relative_bias";
}

PosMode pos_mode_from_string(std::string_view text) {
  if (text == "absolute") return PosMode::Absolute;
  if (text == "relative_bias") return PosMode::RelativeBias;
  throw ConfigError("unknown pos_mode '" + std::string(text) + "'");
}

std::string_view to_string(Readout readout) {
  return readout == Readout::ClassToken ? "class_token" : "mean_patch";
}

Readout readout_from_string(std::string_view text) {
  if (text == "class_token") return Readout::ClassToken;
  if (text == "mean_patch") return Readout::MeanPatch;
  throw ConfigError("unknown readout '" + std::string(text) + "'");
}

std::size_t ViTConfig::hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(dim)));
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid ViT config: " + msg); };
  if (image_size == 0 || patch_size == 0 || channels == 0 || dim == 0 || heads == 0 ||
      num_classes == 0) {
    fail("sizes must be positive");
  }
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (dim % heads != 0) fail("dim must be divisible by heads");
  if (!(mlp_ratio > 0.0)) fail("mlp_ratio must be positive");
  const double h = mlp_ratio * static_cast<double>(dim);
  if (std::abs(h - std::round(h)) > 1e-9 || std::llround(h) < 1) {
    fail("mlp_ratio * dim must be a positive integer");
  }
}

ViTConfig guidance_preset() {
  ViTConfig c;
  c.dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  c.readout = Readout::MeanPatch;
  return c;
}

ViTConfig target_preset() {
  ViTConfig c;
  c.dim = 32;
  c.depth = 4;
  c.heads = 4;
  c.mlp_ratio = 4.0;
  return c;
}

namespace {

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }

template <class Weights, class Fn>
void visit_weights(Weights& w, PosMode mode, Fn&& fn) {
  fn("patch_w", w.patch_w);
  fn("patch_b", w.patch_b);
  fn("class_token", w.class_token);
  if (mode == PosMode::Absolute) {
    fn("pos_embed", w.pos_embed);
  } else {
    fn("rel_bias", w.rel_bias);
  }
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    auto& b = w.blocks[i];
    const std::string p = block_prefix(i);
    fn(p + "ln1_gamma", b.ln1_gamma);
    fn(p + "ln1_beta", b.ln1_beta);
    fn(p + "qkv_w", b.qkv_w);
    fn(p + "qkv_b", b.qkv_b);
    fn(p + "proj_w", b.proj_w);
    fn(p + "proj_b", b.proj_b);
    fn(p + "ln2_gamma", b.ln2_gamma);
    fn(p + "ln2_beta", b.ln2_beta);
    fn(p + "fc1_w", b.fc1_w);
    fn(p + "fc1_b", b.fc1_b);
    fn(p + "fc2_w", b.fc2_w);
    fn(p + "fc2_b", b.fc2_b);
  }
  fn("norm_gamma", w.norm_gamma);
  fn("norm_beta", w.norm_beta);
  fn("head_w", w.head_w);
  fn("head_b", w.head_b);
}

PosMode active_mode(const ViTWeights& w) {
  return w.rel_bias.empty() ? PosMode::Absolute : PosMode::RelativeBias;
}

}  // namespace

void ViTWeights::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_weights(*this, active_mode(*this), fn);
}

void ViTWeights::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_weights(*this, active_mode(*this), fn);
}

std::vector<std::pair<std::string, Shape>> weight_manifest(const ViTConfig& cfg) {
  cfg.validate();
  const std::size_t C = cfg.dim, T = cfg.tokens(), H = cfg.hidden();
  std::vector<std::pair<std::string, Shape>> m;
  m.emplace_back("patch_w", Shape{cfg.patch_dim(), C});
  m.emplace_back("patch_b", Shape{C});
  m.emplace_back("class_token", Shape{1, C});
  if (cfg.pos_mode == PosMode::Absolute) {
    m.emplace_back("pos_embed", Shape{T + 1, C});
  } else {
    m.emplace_back("rel_bias", Shape{T + 1, T + 1, cfg.heads});
  }
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string p = block_prefix(i);
    m.emplace_back(p + "ln1_gamma", Shape{C});
    m.emplace_back(p + "ln1_beta", Shape{C});
    m.emplace_back(p + "qkv_w", Shape{C, 3 * C});
    m.emplace_back(p + "qkv_b", Shape{3 * C});
    m.emplace_back(p + "proj_w", Shape{C, C});
    m.emplace_back(p + "proj_b", Shape{C});
    m.emplace_back(p + "ln2_gamma", Shape{C});
    m.emplace_back(p + "ln2_beta", Shape{C});
    m.emplace_back(p + "fc1_w", Shape{C, H});
    m.emplace_back(p + "fc1_b", Shape{H});
    m.emplace_back(p + "fc2_w", Shape{H, C});
    m.emplace_back(p + "fc2_b", Shape{C});
  }
  m.emplace_back("norm_gamma", Shape{C});
  m.emplace_back("norm_beta", Shape{C});
  m.emplace_back("head_w", Shape{C, cfg.num_classes});
  m.emplace_back("head_b", Shape{cfg.num_classes});
  return m;
}

ViTWeights zero_weights(const ViTConfig& cfg) {
  ViTWeights w;
  w.blocks.resize(cfg.depth);
  if (cfg.pos_mode == PosMode::RelativeBias) {
    // Marks the relative-bias slot active so the visitor picks it up.
    w.rel_bias = Tensor({1});
  }
  auto manifest = weight_manifest(cfg);
  std::size_t i = 0;
  w.for_each([&](const std::string&, Tensor& t) { t = Tensor(manifest[i++].second); });
  return w;
}

ViTWeights init_weights(const ViTConfig& cfg, std::uint64_t seed) {
  ViTWeights w = zero_weights(cfg);
  Rng rng(seed);
  auto fill = [&](Tensor& t, double bound) {
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  };
  auto fan_in = [&](Tensor& t) { fill(t, 1.0 / std::sqrt(static_cast<double>(t.dim(0)))); };
  auto ones = [](Tensor& t) {
    for (auto& v : t.data()) v = 1.0;
  };

  fan_in(w.patch_w);
  fill(w.class_token, 0.1);
  if (cfg.pos_mode == PosMode::Absolute) {
    fill(w.pos_embed, 0.1);
  } else {
    fill(w.rel_bias, 0.02);
  }
  for (auto& b : w.blocks) {
    ones(b.ln1_gamma);
    ones(b.ln2_gamma);
    fan_in(b.qkv_w);
    fan_in(b.proj_w);
    fan_in(b.fc1_w);
    fan_in(b.fc2_w);
  }
  ones(w.norm_gamma);
  fan_in(w.head_w);
  // Zero class-mean per input channel; cross-entropy updates preserve it.
  for (std::size_t r = 0; r < w.head_w.dim(0); ++r) {
    auto row = w.head_w.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    for (double& v : row) v -= mean;
  }
  return w;
}

void validate_weights(const ViTConfig& cfg, const ViTWeights& weights) {
  cfg.validate();
  if (weights.blocks.size() != cfg.depth) {
    throw ConfigError("weights have " + std::to_string(weights.blocks.size()) +
                      " blocks, config depth is " + std::to_string(cfg.depth));
  }
  const bool has_pos = !weights.pos_embed.empty();
  const bool has_bias = !weights.rel_bias.empty();
  if (cfg.pos_mode == PosMode::Absolute && (has_bias || !has_pos)) {
    throw ConfigError("absolute mode requires pos_embed and no rel_bias");
  }
  if (cfg.pos_mode == PosMode::RelativeBias && (has_pos || !has_bias)) {
    throw ConfigError("relative_bias mode requires rel_bias and no pos_embed");
  }
  auto manifest = weight_manifest(cfg);
  std::size_t i = 0;
  weights.for_each([&](const std::string& name, const Tensor& t) {
    if (t.shape() != manifest[i].second) {
      throw ConfigError("tensor '" + name + "' has shape " + t.shape_str() + ", expected " +
                        to_string(manifest[i].second));
    }
    ++i;
  });
}

AdaptedPositional full_positional(const ViTConfig& cfg, const ViTWeights& weights) {
  AdaptedPositional p;
  p.mode = cfg.pos_mode;
  p.table = cfg.pos_mode == PosMode::Absolute ? weights.pos_embed : weights.rel_bias;
  return p;
}

Tensor extract_patches(const Tensor& image, const ViTConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != cfg.channels || image.dim(1) != cfg.image_size ||
      image.dim(2) != cfg.image_size) {
    throw ConfigError("image shape " + image.shape_str() + " does not match config [" +
                      std::to_string(cfg.channels) + "x" + std::to_string(cfg.image_size) + "x" +
                      std::to_string(cfg.image_size) + "]");
  }
  const std::size_t g = cfg.grid(), ps = cfg.patch_size;
  Tensor patches({cfg.tokens(), cfg.patch_dim()});
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      auto row = patches.row(gy * g + gx);
      std::size_t k = 0;
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        for (std::size_t py = 0; py < ps; ++py) {
          for (std::size_t px = 0; px < ps; ++px) {
            row[k++] = image(c, gy * ps + py, gx * ps + px);
          }
        }
      }
    }
  }
  return patches;
}

Tensor patch_embed(const Tensor& image, const ViTConfig& cfg, const ViTWeights& weights) {
  Tensor x = matmul(extract_patches(image, cfg), weights.patch_w);
  add_row_bias(x, weights.patch_b);
  return x;
}

namespace detail {

void check_features(const Tensor& features, const ViTConfig& cfg) {
  if (features.rank() != 2 || features.dim(1) != cfg.dim) {
    throw DimensionError("features " + features.shape_str() + " do not have width " +
                         std::to_string(cfg.dim));
  }
}

void check_positional(const AdaptedPositional& pos, std::size_t n, const ViTConfig& cfg) {
  if (pos.mode != cfg.pos_mode) {
    throw AdaptationError("positional mode " + std::string(to_string(pos.mode)) +
                          " does not match model mode " + std::string(to_string(cfg.pos_mode)));
  }
  const Shape expected = pos.mode == PosMode::Absolute ? Shape{n, cfg.dim} : Shape{n, n, cfg.heads};
  if (pos.table.shape() != expected) {
    throw AdaptationError("positional table " + pos.table.shape_str() + " does not fit a " +
                          std::to_string(n) + "-token sequence (expected " + to_string(expected) +
                          ")");
  }
}

Tensor layer_norm_cached(const Tensor& x, const Tensor& gamma, const Tensor& beta, NormCache* cache) {
  Tensor y = layer_norm(x, gamma, beta);
  if (cache) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    cache->xhat = Tensor({n, d});
    cache->inv_std.assign(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const auto in = x.row(r);
      double mean = 0.0;
      for (double v : in) mean += v;
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (double v : in) var += (v - mean) * (v - mean);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      cache->inv_std[r] = inv;
      for (std::size_t c = 0; c < d; ++c) cache->xhat(r, c) = (in[c] - mean) * inv;
    }
  }
  return y;
}

Tensor columns(const Tensor& x, std::size_t begin, std::size_t count) {
  Tensor out({x.dim(0), count});
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    const auto in = x.row(r);
    auto o = out.row(r);
    for (std::size_t c = 0; c < count; ++c) o[c] = in[begin + c];
  }
  return out;
}

void put_columns(Tensor& dst, const Tensor& src, std::size_t begin) {
  for (std::size_t r = 0; r < src.dim(0); ++r) {
    const auto in = src.row(r);
    auto o = dst.row(r);
    for (std::size_t c = 0; c < in.size(); ++c) o[begin + c] = in[c];
  }
}

Tensor block_forward(const Tensor& x, const AdaptedPositional& pos, const BlockWeights& b,
                     const ViTConfig& cfg, BlockCache* cache) {
  const std::size_t n = x.dim(0), C = cfg.dim, dh = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor h1 = layer_norm_cached(x, b.ln1_gamma, b.ln1_beta, cache ? &cache->ln1 : nullptr);
  Tensor qkv = matmul(h1, b.qkv_w);
  add_row_bias(qkv, b.qkv_b);

  Tensor attn_out({n, C});
  if (cache) {
    cache->q.clear();
    cache->k.clear();
    cache->v.clear();
    cache->probs.clear();
  }
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Tensor q = columns(qkv, h * dh, dh);
    Tensor k = columns(qkv, C + h * dh, dh);
    Tensor v = columns(qkv, 2 * C + h * dh, dh);
    Tensor scores = scale(matmul_bt(q, k), attn_scale);
    if (pos.mode == PosMode::RelativeBias) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) scores(i, j) += pos.table(i, j, h);
      }
      flop_counter::add(n * n);
    }
    Tensor probs = softmax(scores, 1);
    put_columns(attn_out, matmul(probs, v), h * dh);
    if (cache) {
      cache->q.push_back(std::move(q));
      cache->k.push_back(std::move(k));
      cache->v.push_back(std::move(v));
      cache->probs.push_back(std::move(probs));
    }
  }
  Tensor a = matmul(attn_out, b.proj_w);
  add_row_bias(a, b.proj_b);
  Tensor x1 = add(x, a);

  Tensor h2 = layer_norm_cached(x1, b.ln2_gamma, b.ln2_beta, cache ? &cache->ln2 : nullptr);
  Tensor u = matmul(h2, b.fc1_w);
  add_row_bias(u, b.fc1_b);
  Tensor g = gelu(u);
  Tensor m = matmul(g, b.fc2_w);
  add_row_bias(m, b.fc2_b);
  Tensor x2 = add(x1, m);

  if (cache) {
    cache->h1 = std::move(h1);
    cache->attn_out = std::move(attn_out);
    cache->h2 = std::move(h2);
    cache->u = std::move(u);
    cache->g = std::move(g);
  }
  return x2;
}

Tensor head_forward(const Tensor& x, Readout readout, const ViTWeights& w, HeadCache* cache) {
  const std::size_t n = x.dim(0), C = x.dim(1);
  Tensor pooled({1, C});
  if (readout == Readout::ClassToken || n == 1) {
    for (std::size_t c = 0; c < C; ++c) pooled(0, c) = x(0, c);
  } else {
    for (std::size_t r = 1; r < n; ++r) {
      const auto row = x.row(r);
      for (std::size_t c = 0; c < C; ++c) pooled(0, c) += row[c];
    }
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (std::size_t c = 0; c < C; ++c) pooled(0, c) *= inv;
    flop_counter::add(n * C);
  }
  Tensor z = layer_norm_cached(pooled, w.norm_gamma, w.norm_beta, cache ? &cache->norm : nullptr);
  Tensor logits = matmul(z, w.head_w);
  add_row_bias(logits, w.head_b);
  if (cache) cache->z = z;
  return logits.reshaped({logits.size()});
}

Tensor embed_tokens(const Tensor& tokens, const AdaptedPositional& pos) {
  if (pos.mode == PosMode::Absolute) return add(tokens, pos.table);
  return tokens;
}

}  // namespace detail

ForwardTrace forward(const Tensor& tokens, const AdaptedPositional& pos, const ViTConfig& cfg,
                     const ViTWeights& weights) {
  if (tokens.rank() != 2 || tokens.dim(1) != cfg.dim) {
    throw DimensionError("forward: tokens " + tokens.shape_str() + " do not have width " +
                         std::to_string(cfg.dim));
  }
  const std::size_t n = tokens.dim(0);
  detail::check_positional(pos, n, cfg);

  ForwardTrace trace;
  trace.positional = pos;
  trace.token_counts.push_back(n);
  Tensor x = detail::embed_tokens(tokens, pos);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    x = detail::block_forward(x, pos, weights.blocks[i], cfg, nullptr);
    trace.token_counts.push_back(x.dim(0));
  }
  trace.final_block_features = x;
  trace.logits = detail::head_forward(x, cfg.readout, weights, nullptr);
  return trace;
}

ForwardTrace forward_image(const Tensor& image, const ViTConfig& cfg, const ViTWeights& weights) {
  const Tensor x_patch = patch_embed(image, cfg, weights);
  Tensor tokens({x_patch.dim(0) + 1, cfg.dim});
  for (std::size_t c = 0; c < cfg.dim; ++c) tokens(0, c) = weights.class_token[c];
  std::copy(x_patch.data().begin(), x_patch.data().end(), tokens.data().begin() + static_cast<std::ptrdiff_t>(cfg.dim));
  return forward(tokens, full_positional(cfg, weights), cfg, weights);
}

Tensor tail_logits(const Tensor& features, const ViTConfig& cfg, const ViTWeights& weights) {
  detail::check_features(features, cfg);
  return detail::head_forward(features, cfg.readout, weights, nullptr);
}

}  // namespace tinydrop
