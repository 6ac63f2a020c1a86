// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal cross-entropy trainer used only to obtain non-trivial toy weights.
// Minibatch SGD with momentum on the full-token model, deterministic for a
// given seed.

#include <cstdint>
#include <vector>

#include "tinydrop/dataset.hpp"
#include "tinydrop/model.hpp"

namespace tinydrop {

struct TrainOptions {
  std::size_t epochs = 4;
  double lr = 0.02;
  std::uint64_t seed = 1;
  std::size_t batch_size = 16;
  double momentum = 0.9;
};

struct TrainResult {
  ViTWeights weights;
  double final_accuracy = 0.0;      // training accuracy of the returned weights
  std::vector<double> epoch_loss;   // mean loss per epoch
};

/// Trains `initial` on the labelled samples of `data`. Throws TrainingError if
/// the loss becomes non-finite.
TrainResult train_toy(const ViTConfig& cfg, const ViTWeights& initial, const Dataset& data,
                      const TrainOptions& options);

/// Fraction of labelled samples whose full-token prediction matches the label.
double accuracy(const ViTConfig& cfg, const ViTWeights& weights, const Dataset& data);

}  // namespace tinydrop
