// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/train.hpp"

#include <cmath>
#include <numeric>

#include "tinydrop/error.hpp"
#include "tinydrop/rng.hpp"

namespace tinydrop {

TrainResult train_toy(const ViTConfig& cfg, const ViTWeights& initial, const Dataset& data,
                      const TrainOptions& options) {
  validate_weights(cfg, initial);
  if (!(options.lr >= 0.0)) throw ArgumentError("learning rate must be non-negative");
  if (options.batch_size == 0) throw ArgumentError("batch size must be positive");
  std::vector<std::size_t> labelled;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.samples[i];
    if (s.label) {
      if (*s.label >= cfg.num_classes) {
        throw ArgumentError("sample " + std::to_string(i) + " label " + std::to_string(*s.label) +
                            " exceeds model classes");
      }
      labelled.push_back(i);
    }
  }
  if (labelled.empty()) throw ArgumentError("training needs at least one labelled sample");

  TrainResult result;
  result.weights = initial;
  ViTWeights velocity = zero_weights(cfg);
  Rng rng(options.seed);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    // Fisher-Yates with the portable generator.
    std::vector<std::size_t> order = labelled;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      ViTWeights grads = zero_weights(cfg);
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = data.samples[order[b]];
        const std::size_t label = *s.label;
        double sample_loss = 0.0;
        accumulate_parameter_gradients(
            s.image, cfg, result.weights,
            [&](const Tensor& z) {
              Tensor p = softmax(z, 0);
              sample_loss = -std::log(std::max(p[label], 1e-300));
              p[label] -= 1.0;
              return p;
            },
            grads);
        if (!std::isfinite(sample_loss)) {
          throw TrainingError("loss became non-finite in epoch " + std::to_string(epoch) +
                              "; try a lower learning rate");
        }
        loss_sum += sample_loss;
      }
      const double step = options.lr / static_cast<double>(end - start);
      std::vector<Tensor*> vel;
      velocity.for_each([&](const std::string&, Tensor& v) { vel.push_back(&v); });
      std::vector<Tensor*> grad;
      grads.for_each([&](const std::string&, Tensor& g) { grad.push_back(&g); });
      std::size_t k = 0;
      result.weights.for_each([&](const std::string& name, Tensor& w) {
        auto wd = w.data();
        auto vd = vel[k]->data();
        auto gd = grad[k]->data();
        for (std::size_t i = 0; i < wd.size(); ++i) {
          vd[i] = options.momentum * vd[i] + step * gd[i];
          wd[i] -= vd[i];
          if (!std::isfinite(wd[i])) {
            throw TrainingError("parameter '" + name + "' diverged; try a lower learning rate");
          }
        }
        ++k;
      });
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(order.size()));
  }
  result.final_accuracy = accuracy(cfg, result.weights, data);
  return result;
}

double accuracy(const ViTConfig& cfg, const ViTWeights& weights, const Dataset& data) {
  std::size_t total = 0, correct = 0;
  for (const auto& s : data.samples) {
    if (!s.label) continue;
    ++total;
    const auto trace = forward_image(s.image, cfg, weights);
    if (argmax(trace.logits.data()) == *s.label) ++correct;
  }
  if (total == 0) throw ArgumentError("accuracy: dataset has no labelled samples");
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace tinydrop
