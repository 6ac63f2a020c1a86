// SPDX-License-Identifier: Apache-2.0
#pragma once

// Small fixtures shared by the unit tests.

#include <tinydrop/model.hpp>
#include <tinydrop/rng.hpp>
#include <tinydrop/tensor.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <unistd.h>

namespace tdtest {

using namespace tinydrop;

/// 8×8 single-channel images, 4-px patches: T = 4 on a 2×2 grid.
inline ViTConfig tiny_config(PosMode mode = PosMode::Absolute, std::size_t depth = 1,
                             Readout readout = Readout::ClassToken) {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.channels = 1;
  c.dim = 8;
  c.depth = depth;
  c.heads = 2;
  c.mlp_ratio = 2.0;
  c.num_classes = 3;
  c.pos_mode = mode;
  c.readout = readout;
  return c;
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Seeded init, then every tensor (gains and biases included) jittered so no
/// parameter sits at a special value.
inline ViTWeights random_weights(const ViTConfig& cfg, std::uint64_t seed, double jitter = 0.3) {
  ViTWeights w = init_weights(cfg, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  w.for_each([&](const std::string&, Tensor& t) {
    for (auto& v : t.data()) v += rng.uniform(-jitter, jitter);
  });
  return w;
}

inline Tensor random_image(const ViTConfig& cfg, Rng& rng) {
  return random_tensor({cfg.channels, cfg.image_size, cfg.image_size}, rng);
}

/// Copy of the elements, safe to iterate when `t` is a temporary.
inline std::vector<double> elems(const Tensor& t) { return t.values(); }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Full token sequence [cls; patches] for an image.
inline Tensor full_tokens(const Tensor& image, const ViTConfig& cfg, const ViTWeights& w) {
  const Tensor p = patch_embed(image, cfg, w);
  Tensor t({p.dim(0) + 1, cfg.dim});
  for (std::size_t c = 0; c < cfg.dim; ++c) t(0, c) = w.class_token[c];
  for (std::size_t r = 0; r < p.dim(0); ++r)
    for (std::size_t c = 0; c < cfg.dim; ++c) t(r + 1, c) = p(r, c);
  return t;
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("tinydrop_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace tdtest
