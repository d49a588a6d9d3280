#include "stairpool/entropy.hpp"

#include <algorithm>
#include <cmath>

#include "stairpool/error.hpp"

namespace stairpool {

void ChannelStats::add(const Tensor& features) {
  const Geometry g = Geometry::of(features.shape());
  if (values_.empty()) {
    values_.resize(static_cast<std::size_t>(g.c));
  } else if (channels() != g.c) {
    throw Error(Errc::ChannelMismatch, "feature batches disagree on channel count");
  }
  const std::int64_t S = g.spatial();
  const double* d = features.data().data();
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 0; c < g.c; ++c) {
      auto& dst = values_[static_cast<std::size_t>(c)];
      dst.insert(dst.end(), d + (n * g.c + c) * S, d + (n * g.c + c + 1) * S);
    }
  }
}

EntropyEstimate ChannelStats::estimate() const {
  if (values_.empty() || values_.front().empty()) throw Error(Errc::EmptyTensor, "no feature values to estimate");
  EntropyEstimate e;
  e.n_channels = channels();
  e.n_samples_used = static_cast<std::int64_t>(values_.front().size());
  for (const auto& raw : values_) {
    std::vector<double> v = raw;
    std::sort(v.begin(), v.end());
    double total = 0.0;
    for (double x : v) total += x;
    const double mean = total / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sigma = std::sqrt(ss / static_cast<double>(v.size()));
    const double ls = std::log(std::max(sigma, kSigmaFloor));
    e.per_channel_log_sigma.push_back(ls);
  }
  for (double ls : e.per_channel_log_sigma) e.h_sigma += ls;
  return e;
}

EntropyEstimate channel_entropy(const Tensor& features) {
  if (features.size() == 0) throw Error(Errc::EmptyTensor, "channel_entropy of an empty tensor");
  ChannelStats s;
  s.add(features);
  return s.estimate();
}

EntropyEstimate output_entropy(const UNet& model, const std::vector<Tensor>& batches, const PathOverrides& overrides) {
  if (batches.empty()) throw Error(Errc::EmptyTensor, "entropy needs at least one batch");
  // One sample per forward keeps each X_o independent of how the dataset is
  // batched or ordered.
  ChannelStats s;
  for (const Tensor& x : batches) {
    const Geometry g = Geometry::of(x.shape());
    Shape one = x.shape();
    one[0] = 1;
    const std::int64_t per = x.size() / g.n;
    for (std::int64_t n = 0; n < g.n; ++n) {
      Tape tape(Tape::Mode::Inference);
      Tensor xn(one, std::vector<double>(x.data().begin() + n * per, x.data().begin() + (n + 1) * per));
      s.add(tape.value(model.forward(tape, tape.constant(std::move(xn)), overrides).x_o));
    }
  }
  return s.estimate();
}

EntropyEstimate conditional_output_entropy(const UNet& model, const std::vector<Tensor>& batches, int step,
                                           std::size_t path) {
  if (step < 1 || step > kUNetDepth) throw Error(Errc::NotStairStep, "step must be in 1..3");
  PathOverrides o{};
  o[static_cast<std::size_t>(step - 1)] = path;
  return output_entropy(model, batches, o);
}

double transfer_entropy(const UNet& model, const std::vector<Tensor>& batches, int step, std::size_t path) {
  const double cond = conditional_output_entropy(model, batches, step, path).h_sigma;
  return cond - output_entropy(model, batches).h_sigma;
}

namespace {

std::vector<int> stair_steps(const UNet& model) {
  std::vector<int> steps;
  for (int l = 1; l <= kUNetDepth; ++l) {
    if (model.is_stair_step(l)) steps.push_back(l);
  }
  if (steps.empty()) throw Error(Errc::NoStairSteps, "model has no stair pooling steps to search");
  return steps;
}

}  // namespace

TEReport search_paths(const UNet& model, const std::vector<Tensor>& batches, const SearchOptions& options) {
  const std::vector<int> steps = stair_steps(model);
  TEReport report;
  report.joint = options.joint;
  report.dataset_id = options.dataset_id;
  report.seed = options.seed;
  report.baseline_h = output_entropy(model, batches).h_sigma;

  for (int l : steps) {
    const auto& blk = model.stair_block(l);
    for (std::size_t i = 0; i < blk.num_paths(); ++i) {
      report.entries.push_back({l, i, blk.paths()[i].label(), 0.0, false});
    }
  }
  auto entry_of = [&](int l, std::size_t i) -> TEEntry& {
    for (auto& e : report.entries) {
      if (e.step == l && e.path == i) return e;
    }
    throw Error(Errc::BadPathIndex, "no report entry");
  };

  if (!options.joint) {
    for (int l : steps) {
      const auto& blk = model.stair_block(l);
      std::size_t best = 0;
      for (std::size_t i = 0; i < blk.num_paths(); ++i) {
        TEEntry& e = entry_of(l, i);
        e.te = conditional_output_entropy(model, batches, l, i).h_sigma - report.baseline_h;
        ++report.evaluations;
        if (e.te > entry_of(l, best).te) best = i;
      }
      entry_of(l, best).selected = true;
      report.selected[static_cast<std::size_t>(l - 1)] = blk.paths()[best].label();
    }
    return report;
  }

  std::size_t combos = 1;
  std::vector<std::size_t> radix;
  for (int l : steps) {
    radix.push_back(model.stair_block(l).num_paths());
    combos *= radix.back();
  }
  if (combos > kMaxJointCombinations) {
    throw Error(Errc::InvalidConfig, "joint search over " + std::to_string(combos) + " combinations exceeds the cap of " +
                                         std::to_string(kMaxJointCombinations));
  }
  if (combos > 8) {
    report.warnings.push_back("joint search evaluates " + std::to_string(combos) + " path combinations");
  }
  for (auto& e : report.entries) e.te = -INFINITY;

  std::vector<std::size_t> digits(steps.size(), 0), best_digits;
  double best_te = -INFINITY;
  for (std::size_t c = 0; c < combos; ++c) {
    PathOverrides o{};
    for (std::size_t s = 0; s < steps.size(); ++s) o[static_cast<std::size_t>(steps[s] - 1)] = digits[s];
    const double te = output_entropy(model, batches, o).h_sigma - report.baseline_h;
    ++report.evaluations;
    for (std::size_t s = 0; s < steps.size(); ++s) {
      TEEntry& e = entry_of(steps[s], digits[s]);
      e.te = std::max(e.te, te);
    }
    if (te > best_te) {
      best_te = te;
      best_digits = digits;
    }
    // Last step varies fastest, so combinations come in canonical order.
    for (std::size_t s = steps.size(); s-- > 0;) {
      if (++digits[s] < radix[s]) break;
      digits[s] = 0;
    }
  }
  report.joint_best_te = best_te;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    entry_of(steps[s], best_digits[s]).selected = true;
    report.selected[static_cast<std::size_t>(steps[s] - 1)] = model.stair_block(steps[s]).paths()[best_digits[s]].label();
  }
  return report;
}

PathSelection selection_of(const TEReport& report) {
  PathSelection sel{};
  for (std::size_t l = 0; l < sel.size(); ++l) sel[l] = report.selected[l];
  return sel;
}

}  // namespace stairpool
