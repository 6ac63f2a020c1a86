// SPDX-License-Identifier: Apache-2.0
#pragma once

// Toy image classification data with a known informative token.
//
// Each image is channels×size×size with uniform noise in [0, 1). One cell of
// the patch grid carries a class-specific colour pattern blended over the
// noise with a per-sample strength; the label is the pattern class and the
// cell index is recorded so saliency quality can be measured. Pixels are then
// standardized with (p − kPixelMean) / kPixelStd, the usual preprocessing
// step before a ViT sees an image.
//
// On disk a dataset is a directory holding manifest.csv
// ("filename,label,cell", label/cell may be empty) and one TDW1 tensor file
// per image.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "tinydrop/tensor.hpp"

namespace tinydrop {

inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

struct Sample {
  Tensor image;
  std::optional<std::size_t> label;
  std::optional<std::size_t> cell;  // raster index of the informative grid cell
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

struct ToyDataOptions {
  std::size_t count = 256;
  std::size_t image_size = 64;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t num_classes = 4;
  /// Blend weight of the pattern over the noise, drawn per sample.
  double min_strength = 0.3;
  double max_strength = 1.0;
};

Dataset generate_toy_dataset(const ToyDataOptions& options, std::uint64_t seed);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace tinydrop
