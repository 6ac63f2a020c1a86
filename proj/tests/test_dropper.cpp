// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <tinydrop/dropper.hpp>
#include <tinydrop/error.hpp>

#include <numeric>

#include "helpers.hpp"

using namespace tinydrop;
using namespace tdtest;

namespace {

SaliencyMap map_of(std::vector<double> scores) {
  SaliencyMap m;
  m.grid_h = m.grid_w = square_side(scores.size());
  m.scores = std::move(scores);
  return m;
}

TokenSelection random_selection(std::size_t T, Rng& rng) {
  std::vector<std::size_t> idx(T);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = T - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  idx.resize(1 + rng.below(T));
  std::sort(idx.begin(), idx.end());
  return TokenSelection{idx};
}

}  // namespace

TEST_SUITE("dropper") {

TEST_CASE("select_tokens examples") {
  CHECK(select_tokens(map_of({0.3, 0.1, 0.9, 0.2}), 4).keep_indices == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(select_tokens(map_of({0, 0, 0, 1, 0, 0, 0, 0, 0}), 1).keep_indices == std::vector<std::size_t>{3});
  CHECK(select_tokens(map_of({0.2, 0.8, 0.8, 0.1}), 2).keep_indices == std::vector<std::size_t>{1, 2});
  CHECK_THROWS_AS(select_tokens(map_of({0.2, 0.8, 0.8, 0.1}), 0), ArgumentError);
  CHECK_THROWS_AS(select_tokens(map_of({0.2, 0.8, 0.8, 0.1}), 5), ArgumentError);
}

TEST_CASE("selection is deterministic") {
  Rng rng(1);
  std::vector<double> s(16);
  for (auto& v : s) v = static_cast<double>(rng.below(4)) / 3.0;
  const SaliencyMap m = map_of(s);
  for (std::size_t k = 1; k <= 16; ++k) CHECK(select_tokens(m, k).keep_indices == select_tokens(m, k).keep_indices);
}

TEST_CASE("gather_tokens examples") {
  Rng rng(2);
  const Tensor patches = random_tensor({4, 3}, rng);
  const Tensor cls = random_tensor({1, 3}, rng);
  const Tensor all = gather_tokens(patches, cls, TokenSelection::all(4));
  for (std::size_t c = 0; c < 3; ++c) CHECK(all(0, c) == cls[c]);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(all(r + 1, c) == patches(r, c));

  const Tensor two = gather_tokens(patches, cls, TokenSelection{{2}});
  CHECK(two.shape() == Shape{2, 3});
  for (std::size_t c = 0; c < 3; ++c) CHECK(two(1, c) == patches(2, c));

  const Tensor p6 = random_tensor({6, 3}, rng);
  const Tensor g = gather_tokens(p6, cls, TokenSelection{{1, 4}});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(g(1, c) == p6(1, c));
    CHECK(g(2, c) == p6(4, c));
  }
}

TEST_CASE("malformed selections are rejected") {
  const Tensor patches({4, 3}), cls({1, 3});
  CHECK_THROWS_AS(gather_tokens(patches, cls, TokenSelection{{}}), SelectionError);
  CHECK_THROWS_AS(gather_tokens(patches, cls, TokenSelection{{2, 1}}), SelectionError);
  CHECK_THROWS_AS(gather_tokens(patches, cls, TokenSelection{{1, 1}}), SelectionError);
  CHECK_THROWS_AS(gather_tokens(patches, cls, TokenSelection{{4}}), SelectionError);
  CHECK_THROWS_AS(gather_tokens(patches, Tensor({1, 2}), TokenSelection{{0}}), DimensionError);
  CHECK_THROWS_AS(adapt_absolute(Tensor({5, 3}), TokenSelection{{5}}), AdaptationError);
  CHECK_THROWS_AS(adapt_relative_bias(Tensor({5, 5, 2}), TokenSelection{{3, 3}}), AdaptationError);
}

TEST_CASE("adapt_absolute examples") {
  Rng rng(3);
  const Tensor P = random_tensor({5, 3}, rng);
  CHECK(adapt_absolute(P, TokenSelection::all(4)) == P);
  const Tensor one = adapt_absolute(P, TokenSelection{{0}});
  CHECK(one.shape() == Shape{2, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(one(0, c) == P(0, c));
    CHECK(one(1, c) == P(1, c));
  }
  const Tensor two = adapt_absolute(P, TokenSelection{{1, 3}});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(two(0, c) == P(0, c));
    CHECK(two(1, c) == P(2, c));
    CHECK(two(2, c) == P(4, c));
  }
}

TEST_CASE("adapt_relative_bias examples") {
  Rng rng(4);
  const Tensor B = random_tensor({5, 5, 2}, rng);
  CHECK(adapt_relative_bias(B, TokenSelection::all(4)) == B);

  const Tensor B3 = random_tensor({3, 3, 2}, rng);
  const Tensor s = adapt_relative_bias(B3, TokenSelection{{1}});
  REQUIRE(s.shape() == Shape{2, 2, 2});
  const std::size_t rows[2] = {0, 2};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t h = 0; h < 2; ++h) CHECK(s(i, j, h) == B3(rows[i], rows[j], h));

  Tensor sym({5, 5, 2});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      for (std::size_t h = 0; h < 2; ++h) sym(i, j, h) = sym(j, i, h) = rng.uniform();
  const Tensor ss = adapt_relative_bias(sym, TokenSelection{{0, 2, 3}});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t h = 0; h < 2; ++h) CHECK(ss(i, j, h) == ss(j, i, h));
}

TEST_CASE("sentinel rows stay aligned with their positional rows") {
  Rng rng(5);
  const std::size_t T = 16, C = 4, heads = 3;
  // Tag patch t with value t in every column; positional row t+1 with 1000+t;
  // bias entry (i, j, h) with 1e6·i + 1e3·j + h.
  Tensor patches({T, C}), P({T + 1, C}), B({T + 1, T + 1, heads});
  const Tensor cls({1, C}, -1.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) patches(t, c) = static_cast<double>(t);
  for (std::size_t r = 0; r <= T; ++r)
    for (std::size_t c = 0; c < C; ++c) P(r, c) = r == 0 ? -1000.0 : 1000.0 + static_cast<double>(r - 1);
  for (std::size_t i = 0; i <= T; ++i)
    for (std::size_t j = 0; j <= T; ++j)
      for (std::size_t h = 0; h < heads; ++h) B(i, j, h) = 1e6 * static_cast<double>(i) + 1e3 * static_cast<double>(j) + static_cast<double>(h);

  for (int trial = 0; trial < 1000; ++trial) {
    const TokenSelection sel = random_selection(T, rng);
    const std::size_t K = sel.size();
    const Tensor x = gather_tokens(patches, cls, sel);
    const Tensor pa = adapt_absolute(P, sel);
    const Tensor rb = adapt_relative_bias(B, sel);
    REQUIRE(rb.shape() == Shape{K + 1, K + 1, heads});
    CHECK(x(0, 0) == -1.0);
    CHECK(pa(0, 0) == -1000.0);
    for (std::size_t j = 1; j <= K; ++j) {
      const double patch = x(j, 0);
      CHECK(pa(j, 0) == 1000.0 + patch);
    }
    for (std::size_t i = 0; i <= K; ++i)
      for (std::size_t j = 0; j <= K; ++j) {
        const double oi = i == 0 ? 0.0 : x(i, 0) + 1.0;
        const double oj = j == 0 ? 0.0 : x(j, 0) + 1.0;
        for (std::size_t h = 0; h < heads; ++h) CHECK(rb(i, j, h) == 1e6 * oi + 1e3 * oj + static_cast<double>(h));
      }
  }
}

TEST_CASE("adapt_positional follows the model mode") {
  for (PosMode mode : {PosMode::Absolute, PosMode::RelativeBias}) {
    const ViTConfig cfg = tiny_config(mode);
    const ViTWeights w = init_weights(cfg, 1);
    const AdaptedPositional ap = adapt_positional(cfg, w, TokenSelection{{1, 2}});
    CHECK(ap.mode == mode);
    CHECK(ap.tokens() == 3);
  }
}

TEST_CASE("selection json") {
  CHECK(selection_to_json(TokenSelection{{1, 4, 7}}) == "[1,4,7]");
  CHECK(selection_to_json(TokenSelection{}) == "[]");
}

}  // TEST_SUITE
