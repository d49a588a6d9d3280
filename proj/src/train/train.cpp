#include "stairpool/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stairpool/error.hpp"
#include "stairpool/loss.hpp"

namespace stairpool {

void TrainConfig::validate() const {
  auto bad = [](const std::string& field, const std::string& why) {
    throw Error(Errc::InvalidConfig, field + ": " + why);
  };
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("train.lr", "must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("train.momentum", "must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) bad("train.weight_decay", "must be non-negative");
  if (epochs < 1) bad("train.epochs", "must be at least 1");
  if (batch_size < 1) bad("train.batch_size", "must be at least 1");
}

void sgd_step(const std::vector<Parameter*>& params, const GradientMap& grads, const TrainConfig& cfg) {
  for (Parameter* p : params) {
    const std::vector<double>* g = grads.of(*p);
    if (!g) throw Error(Errc::MissingGrad, "no gradient for " + p->name);
    auto& w = p->value.storage();
    if (p->momentum.size() != w.size()) p->momentum.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      double& v = p->momentum[i];
      v = cfg.momentum * v + (*g)[i] + cfg.weight_decay * w[i];
      w[i] -= cfg.lr * v;
    }
  }
}

LabelMap predict(const UNet& model, const Tensor& images) {
  const Tensor logits = forward(model, images, false).logits;
  const Geometry g = Geometry::of(logits.shape());
  Shape shape{g.n};
  shape.insert(shape.end(), logits.shape().begin() + 2, logits.shape().end());
  LabelMap out(shape);
  const std::int64_t S = g.spatial();
  const double* z = logits.data().data();
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t i = 0; i < S; ++i) {
      std::int32_t best = 0;
      for (std::int64_t c = 1; c < g.c; ++c) {
        if (z[(n * g.c + c) * S + i] > z[(n * g.c + best) * S + i]) best = static_cast<std::int32_t>(c);
      }
      out[n * S + i] = best;
    }
  return out;
}

MetricsRecord evaluate(const UNet& model, const Dataset& data, std::size_t batch_size, bool with_hausdorff) {
  std::vector<LabelMap> preds, gts;
  for (const Batch& b : batches_of(data, batch_size)) {
    for (auto& m : split_cases(predict(model, b.images))) preds.push_back(std::move(m));
    for (auto& m : split_cases(b.masks)) gts.push_back(std::move(m));
  }
  return score_cases(preds, gts, model.config().num_classes, with_hausdorff);
}

double mean_loss(const UNet& model, const Dataset& data, std::size_t batch_size) {
  double total = 0.0;
  std::size_t n = 0;
  for (const Batch& b : batches_of(data, batch_size)) {
    const Tensor logits = forward(model, b.images, false).logits;
    total += loss_terms(logits, b.masks).total() * static_cast<double>(b.images.dim(0));
    n += static_cast<std::size_t>(b.images.dim(0));
  }
  return total / static_cast<double>(n);
}

TrainResult train(const UNet& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) throw Error(Errc::EmptyTensor, "training set is empty");
  std::seed_seq shuffle_seq{cfg.seed, std::uint64_t{1}};
  std::seed_seq augment_seq{cfg.seed, std::uint64_t{2}};
  std::mt19937_64 shuffle_rng(shuffle_seq), augment_rng(augment_seq);

  UNet current = model;
  std::vector<Parameter*> params = current.parameters();
  for (Parameter* p : params) p->momentum.assign(p->value.storage().size(), 0.0);

  TrainResult result{{}, current};
  double best_dice = -1.0;
  std::vector<double> loss_curve, dice_curve;
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<Sample> picked;
      picked.reserve(count);
      for (std::size_t i = start; i < start + count; ++i) {
        const Sample& s = train_set.samples[order[i]];
        picked.push_back(cfg.augmentation ? augment(s, augment_rng) : s);
      }
      const Batch b = make_batch(picked);
      Tape tape;
      const Var logits = current.forward(tape, tape.constant(b.images)).logits;
      const Var loss = combined_loss(tape, logits, b.masks);
      loss_sum += tape.value(loss)[0] * static_cast<double>(count);
      const GradientMap grads = backward(tape, loss);
      sgd_step(params, grads, cfg);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    loss_curve.push_back(stats.train_loss);
    if (val_set.size() > 0) {
      stats.val_dice = evaluate(current, val_set, cfg.batch_size, false).mean_dice;
      dice_curve.push_back(stats.val_dice);
      if (stats.val_dice > best_dice) {
        best_dice = stats.val_dice;
        result.model = current;
        result.metrics.best_epoch = epoch;
      }
    } else if (epoch == cfg.epochs) {
      result.model = current;
      result.metrics.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(stats);
  }

  const int best_epoch = result.metrics.best_epoch;
  if (val_set.size() > 0) result.metrics = evaluate(result.model, val_set, cfg.batch_size, true);
  result.metrics.loss_curve = std::move(loss_curve);
  result.metrics.val_dice_curve = std::move(dice_curve);
  result.metrics.best_epoch = best_epoch;
  return result;
}

}  // namespace stairpool
