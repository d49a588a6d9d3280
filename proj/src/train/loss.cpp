#include "stairpool/loss.hpp"

#include <algorithm>
#include <cmath>

#include "stairpool/error.hpp"

namespace stairpool {

namespace {

struct SoftStats {
  Geometry g;
  std::vector<double> prob;  // softmax, same layout as logits
  double ce = 0.0;
  std::vector<double> inter, total;  // per class: sum y*p and sum y + sum p
  double dice = 0.0;
};

void check_mask(const Tensor& logits, const LabelMap& mask) {
  if (logits.rank() < 3) throw Error(Errc::ShapeMismatch, "logits need batch, channel and spatial axes");
  Shape want{logits.dim(0)};
  want.insert(want.end(), logits.shape().begin() + 2, logits.shape().end());
  if (mask.shape != want) {
    throw Error(Errc::ShapeMismatch, "mask " + shape_str(mask.shape) + " does not match logits " + shape_str(logits.shape()));
  }
  const std::int64_t classes = logits.dim(1);
  for (std::int32_t v : mask.labels) {
    if (v < 0 || v >= classes) {
      throw Error(Errc::InvalidConfig, "label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

SoftStats soft_stats(const Tensor& logits, const LabelMap& mask) {
  check_mask(logits, mask);
  SoftStats s;
  s.g = Geometry::of(logits.shape());
  const std::int64_t C = s.g.c, S = s.g.spatial();
  s.prob.resize(logits.storage().size());
  s.inter.assign(static_cast<std::size_t>(C), 0.0);
  s.total.assign(static_cast<std::size_t>(C), 0.0);
  const double* z = logits.data().data();
  double nll = 0.0;
  for (std::int64_t n = 0; n < s.g.n; ++n) {
    const double* zn = z + n * C * S;
    double* pn = s.prob.data() + n * C * S;
    for (std::int64_t i = 0; i < S; ++i) {
      double mx = zn[i];
      for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, zn[c * S + i]);
      double den = 0.0;
      for (std::int64_t c = 0; c < C; ++c) den += std::exp(zn[c * S + i] - mx);
      const std::int32_t y = mask.labels[static_cast<std::size_t>(n * S + i)];
      nll -= zn[y * S + i] - mx - std::log(den);
      for (std::int64_t c = 0; c < C; ++c) {
        const double p = std::exp(zn[c * S + i] - mx) / den;
        pn[c * S + i] = p;
        s.total[static_cast<std::size_t>(c)] += p;
      }
      s.inter[static_cast<std::size_t>(y)] += pn[y * S + i];
      s.total[static_cast<std::size_t>(y)] += 1.0;
    }
  }
  s.ce = nll / static_cast<double>(s.g.n * S);
  for (std::int64_t c = 1; c < C; ++c) {
    const auto k = static_cast<std::size_t>(c);
    s.dice += 1.0 - (2.0 * s.inter[k] + kDiceSmooth) / (s.total[k] + kDiceSmooth);
  }
  if (C > 1) s.dice /= static_cast<double>(C - 1);
  return s;
}

}  // namespace

LossBreakdown loss_terms(const Tensor& logits, const LabelMap& mask) {
  const SoftStats s = soft_stats(logits, mask);
  return {s.ce, s.dice};
}

Var combined_loss(Tape& tape, Var logits, const LabelMap& mask) {
  SoftStats s = soft_stats(tape.value(logits), mask);
  const double value = s.ce + s.dice;
  const std::size_t zid = logits.id;
  return tape.record("combined_loss", {logits}, Tensor::scalar(value),
                     [zid, s = std::move(s), labels = mask.labels](Tape& t, const std::vector<double>& gout) {
    double* gz = t.grad_target(zid);
    if (!gz) return;
    const std::int64_t C = s.g.c, S = s.g.spatial();
    const double inv_pix = 1.0 / static_cast<double>(s.g.n * S);
    const double inv_fg = C > 1 ? 1.0 / static_cast<double>(C - 1) : 0.0;
    std::vector<double> gp(static_cast<std::size_t>(C));
    for (std::int64_t n = 0; n < s.g.n; ++n) {
      const double* pn = s.prob.data() + n * C * S;
      double* dn = gz + n * C * S;
      for (std::int64_t i = 0; i < S; ++i) {
        const std::int32_t y = labels[static_cast<std::size_t>(n * S + i)];
        // Dice gradient with respect to the probabilities.
        gp[0] = 0.0;
        for (std::int64_t c = 1; c < C; ++c) {
          const auto k = static_cast<std::size_t>(c);
          const double den = s.total[k] + kDiceSmooth;
          const double yc = c == y ? 1.0 : 0.0;
          gp[k] = -inv_fg * (2.0 * yc * den - (2.0 * s.inter[k] + kDiceSmooth)) / (den * den);
        }
        double dot = 0.0;
        for (std::int64_t c = 0; c < C; ++c) dot += pn[c * S + i] * gp[static_cast<std::size_t>(c)];
        for (std::int64_t c = 0; c < C; ++c) {
          const double p = pn[c * S + i];
          const double ce = (p - (c == y ? 1.0 : 0.0)) * inv_pix;
          dn[c * S + i] += gout[0] * (ce + p * (gp[static_cast<std::size_t>(c)] - dot));
        }
      }
    }
  });
}

}  // namespace stairpool
