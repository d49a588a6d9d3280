#pragma once

#include <cstdint>
#include <functional>

#include "stairpool/data.hpp"
#include "stairpool/metrics.hpp"
#include "stairpool/unet.hpp"

namespace stairpool {

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;  // shuffling and augmentation streams
  bool augmentation = true;

  // Throws InvalidConfig naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// v = momentum * v + grad + weight_decay * p, then p -= lr * v, using each
// parameter's own momentum buffer. Throws MissingGrad when a parameter has no
// gradient in grads.
void sgd_step(const std::vector<Parameter*>& params, const GradientMap& grads, const TrainConfig& cfg);

// Argmax labels of the logits for an (n, c, spatial...) batch.
LabelMap predict(const UNet& model, const Tensor& images);

// Hard-label metrics of the model on a dataset, one case per sample.
MetricsRecord evaluate(const UNet& model, const Dataset& data, std::size_t batch_size = 8, bool with_hausdorff = true);

// Mean combined loss over the dataset without updating anything.
double mean_loss(const UNet& model, const Dataset& data, std::size_t batch_size = 8);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_dice = 0.0;
};

struct TrainResult {
  MetricsRecord metrics;  // final validation scores of the returned model
  UNet model;             // parameters from the epoch with the best val Dice
};

// Mini-batch SGD over shuffled (and optionally augmented) samples, scoring
// the validation set after each epoch. Deterministic in (model, data, cfg).
// With an empty validation set the last epoch is returned.
TrainResult train(const UNet& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace stairpool
