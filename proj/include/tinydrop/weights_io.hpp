// SPDX-License-Identifier: Apache-2.0
#pragma once

// TDW1 container.
//
//   bytes 0..7   magic "TDWEIGHT"
//   u64 LE       length L of the metadata document
//   L bytes      UTF-8 JSON metadata:
//                  {"format":"TDW1","version":1,"kind":"vit"|"tensor",
//                   "config":{...}|null,
//                   "tensors":[{"name":...,"shape":[...]}, ...]}
//   payload      each manifest tensor as little-endian IEEE-754 doubles,
//                concatenated in manifest order, nothing after the last one
//
// The same container stores model weights (kind "vit") and single dataset
// images (kind "tensor").

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tinydrop/model.hpp"

namespace tinydrop {

inline constexpr char kTdwMagic[8] = {'T', 'D', 'W', 'E', 'I', 'G', 'H', 'T'};
inline constexpr int kTdwVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::string encode_weights(const ViTConfig& cfg, const ViTWeights& weights);
std::pair<ViTConfig, ViTWeights> decode_weights(const std::string& bytes);

std::string encode_tensor(const std::string& name, const Tensor& tensor);
NamedTensor decode_tensor(const std::string& bytes);

void save_weights(const ViTConfig& cfg, const ViTWeights& weights, const std::filesystem::path& path);
std::pair<ViTConfig, ViTWeights> load_weights(const std::filesystem::path& path);

void save_tensor(const std::string& name, const Tensor& tensor, const std::filesystem::path& path);
NamedTensor load_tensor(const std::filesystem::path& path);

// File helpers shared by every writer in the library.
std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace tinydrop
