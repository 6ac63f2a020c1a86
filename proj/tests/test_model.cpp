// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <tinydrop/dropper.hpp>
#include <tinydrop/error.hpp>

#include <numeric>

#include "helpers.hpp"

using namespace tinydrop;
using namespace tdtest;

namespace {

// Independent closed form for a block-free model: readout, LayerNorm, head.
Tensor depth0_logits(const Tensor& tokens_with_pos, const ViTConfig& cfg, const ViTWeights& w) {
  const std::size_t n = tokens_with_pos.dim(0), C = cfg.dim;
  std::vector<double> pooled(C, 0.0);
  if (cfg.readout == Readout::ClassToken || n == 1) {
    for (std::size_t c = 0; c < C; ++c) pooled[c] = tokens_with_pos(0, c);
  } else {
    for (std::size_t r = 1; r < n; ++r)
      for (std::size_t c = 0; c < C; ++c) pooled[c] += tokens_with_pos(r, c) / static_cast<double>(n - 1);
  }
  double mean = 0.0, var = 0.0;
  for (double v : pooled) mean += v / static_cast<double>(C);
  for (double v : pooled) var += (v - mean) * (v - mean) / static_cast<double>(C);
  std::vector<double> normed(C);
  for (std::size_t c = 0; c < C; ++c)
    normed[c] = w.norm_gamma[c] * (pooled[c] - mean) / std::sqrt(var + 1e-6) + w.norm_beta[c];
  Tensor logits({cfg.num_classes});
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    double s = w.head_b[k];
    for (std::size_t c = 0; c < C; ++c) s += normed[c] * w.head_w(c, k);
    logits[k] = s;
  }
  return logits;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation") {
  ViTConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.image_size = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny_config();
  c.num_classes = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("presets describe the desk-scale roles") {
  const ViTConfig g = guidance_preset(), t = target_preset();
  CHECK(g.tokens() == 16);
  CHECK(t.tokens() == 16);
  CHECK(g.readout == Readout::MeanPatch);
  CHECK(t.readout == Readout::ClassToken);
  CHECK(t.dim > g.dim);
  CHECK(t.depth > g.depth);
}

TEST_CASE("enum names round trip") {
  for (PosMode m : {PosMode::Absolute, PosMode::RelativeBias}) CHECK(pos_mode_from_string(to_string(m)) == m);
  for (Readout r : {Readout::ClassToken, Readout::MeanPatch}) CHECK(readout_from_string(to_string(r)) == r);
  CHECK_THROWS_AS(readout_from_string("max"), ConfigError);
}

TEST_CASE("exactly one positional structure is active per mode") {
  for (PosMode m : {PosMode::Absolute, PosMode::RelativeBias}) {
    const ViTConfig cfg = tiny_config(m);
    const ViTWeights w = init_weights(cfg, 1);
    CHECK(w.pos_embed.empty() == (m == PosMode::RelativeBias));
    CHECK(w.rel_bias.empty() == (m == PosMode::Absolute));
    CHECK_NOTHROW(validate_weights(cfg, w));
    std::size_t i = 0;
    const auto manifest = weight_manifest(cfg);
    w.for_each([&](const std::string& name, const Tensor& t) {
      REQUIRE(i < manifest.size());
      CHECK(name == manifest[i].first);
      CHECK(t.shape() == manifest[i].second);
      ++i;
    });
    CHECK(i == manifest.size());
  }
  ViTConfig cfg = tiny_config();
  ViTWeights w = init_weights(cfg, 1);
  w.head_w = Tensor({cfg.dim, cfg.num_classes + 1});
  CHECK_THROWS_AS(validate_weights(cfg, w), ConfigError);
}

TEST_CASE("init is seeded and the head is centred across classes") {
  const ViTConfig cfg = tiny_config();
  CHECK(init_weights(cfg, 5) == init_weights(cfg, 5));
  CHECK_FALSE(init_weights(cfg, 5) == init_weights(cfg, 6));
  const ViTWeights w = init_weights(cfg, 5);
  for (std::size_t c = 0; c < cfg.dim; ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < cfg.num_classes; ++k) s += w.head_w(c, k);
    CHECK(std::abs(s) < 1e-12);
  }
}

TEST_CASE("patch_embed examples") {
  ViTConfig cfg = tiny_config();
  cfg.image_size = 32;
  cfg.patch_size = 16;
  cfg.channels = 3;
  ViTWeights w = init_weights(cfg, 2);
  for (auto& v : w.patch_b.data()) v = 0.0;

  const Tensor zero({3, 32, 32});
  const Tensor e0 = patch_embed(zero, cfg, w);
  CHECK(e0.shape() == Shape{4, cfg.dim});
  for (double v : e0.data()) CHECK(v == 0.0);

  // One nonzero pixel inside patch 3 (bottom-right).
  Tensor img({3, 32, 32});
  img(1, 20, 25) = 1.0;
  const Tensor e = patch_embed(img, cfg, w);
  for (std::size_t r = 0; r < 4; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < cfg.dim; ++c) norm += std::abs(e(r, c));
    if (r == 3) {
      CHECK(norm > 0.0);
    } else {
      CHECK(norm == 0.0);
    }
  }
}

TEST_CASE("extract_patches flattens channel-major then row-major") {
  ViTConfig cfg = tiny_config();
  cfg.channels = 2;
  Tensor img({2, 8, 8});
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) img(ch, y, x) = static_cast<double>(ch * 1000 + y * 10 + x);
  const Tensor p = extract_patches(img, cfg);
  REQUIRE(p.shape() == Shape{4, 32});
  for (std::size_t t = 0; t < 4; ++t) {
    const std::size_t gy = t / 2, gx = t % 2;
    std::size_t col = 0;
    for (std::size_t ch = 0; ch < 2; ++ch)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) CHECK(p(t, col++) == img(ch, gy * 4 + y, gx * 4 + x));
  }
}

TEST_CASE("depth-0 forward equals the closed form") {
  Rng rng(3);
  for (Readout readout : {Readout::ClassToken, Readout::MeanPatch}) {
    for (PosMode mode : {PosMode::Absolute, PosMode::RelativeBias}) {
      const ViTConfig cfg = tiny_config(mode, 0, readout);
      const ViTWeights w = random_weights(cfg, 4);
      const Tensor image = random_image(cfg, rng);
      Tensor tokens = full_tokens(image, cfg, w);
      const ForwardTrace trace = forward_image(image, cfg, w);
      if (mode == PosMode::Absolute) tokens = add(tokens, w.pos_embed);
      CHECK(max_abs_diff(trace.logits, depth0_logits(tokens, cfg, w)) < 1e-12);
      CHECK(max_abs_diff(trace.final_block_features, tokens) < 1e-15);
    }
  }
}

TEST_CASE("full selection reproduces the unmodified forward") {
  Rng rng(5);
  for (PosMode mode : {PosMode::Absolute, PosMode::RelativeBias}) {
    const ViTConfig cfg = tiny_config(mode, 2);
    const ViTWeights w = random_weights(cfg, 6);
    const Tensor image = random_image(cfg, rng);
    const ForwardTrace direct = forward_image(image, cfg, w);
    const TokenSelection all = TokenSelection::all(cfg.tokens());
    const Tensor tokens = gather_tokens(patch_embed(image, cfg, w), w.class_token, all);
    const ForwardTrace via = forward(tokens, adapt_positional(cfg, w, all), cfg, w);
    CHECK(via.logits == direct.logits);
    CHECK(via.final_block_features == direct.final_block_features);
    CHECK(via.token_counts == std::vector<std::size_t>(cfg.depth + 1, cfg.tokens() + 1));
  }
}

TEST_CASE("logits are equivariant to a joint permutation of tokens and positional rows") {
  Rng rng(7);
  for (Readout readout : {Readout::ClassToken, Readout::MeanPatch}) {
    for (PosMode mode : {PosMode::Absolute, PosMode::RelativeBias}) {
      const ViTConfig cfg = tiny_config(mode, 2, readout);
      const ViTWeights w = random_weights(cfg, 8);
      for (int trial = 0; trial < 10; ++trial) {
        const Tensor image = random_image(cfg, rng);
        const Tensor tokens = full_tokens(image, cfg, w);
        const AdaptedPositional pos = full_positional(cfg, w);
        const std::size_t n = tokens.dim(0);

        // Random permutation of rows 1..n-1; the class token stays first.
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n - 1; i > 1; --i) std::swap(perm[i], perm[1 + rng.below(i)]);

        Tensor ptok({n, cfg.dim});
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < cfg.dim; ++c) ptok(r, c) = tokens(perm[r], c);
        AdaptedPositional ppos = pos;
        if (mode == PosMode::Absolute) {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < cfg.dim; ++c) ppos.table(r, c) = pos.table(perm[r], c);
        } else {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              for (std::size_t h = 0; h < cfg.heads; ++h) ppos.table(i, j, h) = pos.table(perm[i], perm[j], h);
        }
        const Tensor a = forward(tokens, pos, cfg, w).logits;
        const Tensor b = forward(ptok, ppos, cfg, w).logits;
        CHECK(max_abs_diff(a, b) < 1e-9);
      }
    }
  }
}

TEST_CASE("zeroing unselected positional rows never changes the reduced forward") {
  Rng rng(9);
  const ViTConfig cfg = tiny_config(PosMode::Absolute, 2);
  const ViTWeights w = random_weights(cfg, 10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t k = 1 + rng.below(cfg.tokens());
    std::vector<std::size_t> idx(cfg.tokens());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    const TokenSelection sel{idx};

    ViTWeights zeroed = w;
    for (std::size_t t = 0; t < cfg.tokens(); ++t) {
      if (std::binary_search(idx.begin(), idx.end(), t)) continue;
      for (std::size_t c = 0; c < cfg.dim; ++c) zeroed.pos_embed(t + 1, c) = 0.0;
    }
    const Tensor image = random_image(cfg, rng);
    const Tensor tokens = gather_tokens(patch_embed(image, cfg, w), w.class_token, sel);
    const Tensor a = forward(tokens, adapt_positional(cfg, w, sel), cfg, w).logits;
    const Tensor b = forward(tokens, adapt_positional(cfg, zeroed, sel), cfg, zeroed).logits;
    CHECK(a == b);
  }
}

TEST_CASE("relative bias B=0 equals absolute P=0") {
  Rng rng(11);
  for (Readout readout : {Readout::ClassToken, Readout::MeanPatch}) {
    const ViTConfig abs_cfg = tiny_config(PosMode::Absolute, 2, readout);
    ViTConfig rel_cfg = abs_cfg;
    rel_cfg.pos_mode = PosMode::RelativeBias;
    ViTWeights abs_w = random_weights(abs_cfg, 12);
    for (auto& v : abs_w.pos_embed.data()) v = 0.0;
    ViTWeights rel_w = abs_w;
    rel_w.pos_embed = Tensor();
    rel_w.rel_bias = Tensor({abs_cfg.tokens() + 1, abs_cfg.tokens() + 1, abs_cfg.heads});
    REQUIRE_NOTHROW(validate_weights(rel_cfg, rel_w));
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor image = random_image(abs_cfg, rng);
      CHECK(max_abs_diff(forward_image(image, abs_cfg, abs_w).logits,
                         forward_image(image, rel_cfg, rel_w).logits) < 1e-12);
    }
  }
}

TEST_CASE("tail_logits on the final features reproduces the logits") {
  Rng rng(13);
  for (Readout readout : {Readout::ClassToken, Readout::MeanPatch}) {
    const ViTConfig cfg = tiny_config(PosMode::Absolute, 2, readout);
    const ViTWeights w = random_weights(cfg, 14);
    const ForwardTrace trace = forward_image(random_image(cfg, rng), cfg, w);
    CHECK(tail_logits(trace.final_block_features, cfg, w) == trace.logits);
  }
  const ViTConfig cfg = tiny_config();
  CHECK_THROWS_AS(tail_logits(Tensor({5, cfg.dim + 1}), cfg, init_weights(cfg, 1)), DimensionError);
}

TEST_CASE("forward rejects mismatched positional structures") {
  const ViTConfig cfg = tiny_config(PosMode::Absolute, 1);
  const ViTWeights w = init_weights(cfg, 1);
  const Tensor tokens({3, cfg.dim});
  CHECK_THROWS_AS(forward(tokens, full_positional(cfg, w), cfg, w), AdaptationError);
  AdaptedPositional wrong_mode{PosMode::RelativeBias, Tensor({3, 3, cfg.heads})};
  CHECK_THROWS_AS(forward(tokens, wrong_mode, cfg, w), AdaptationError);
  CHECK_THROWS_AS(forward(Tensor({3, cfg.dim + 1}), full_positional(cfg, w), cfg, w), DimensionError);
}

}  // TEST_SUITE
