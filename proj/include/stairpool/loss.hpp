#pragma once

#include "stairpool/data.hpp"
#include "stairpool/tape.hpp"

namespace stairpool {

// Additive smoothing in the soft Dice ratio. Keeps the term defined when a
// class is absent from both the batch and the prediction.
inline constexpr double kDiceSmooth = 1.0;

struct LossBreakdown {
  double ce = 0.0;    // mean per-pixel cross-entropy
  double dice = 0.0;  // soft Dice loss averaged over foreground classes
  double total() const noexcept { return ce + dice; }
};

// Cross-entropy of softmaxed logits plus soft Dice loss over classes
// 1..C-1. logits are (n, C, spatial...), mask is (n, spatial...).
// Throws ShapeMismatch, or InvalidConfig for labels outside [0, C).
LossBreakdown loss_terms(const Tensor& logits, const LabelMap& mask);

// Scalar loss recorded on the tape with an analytic backward rule.
Var combined_loss(Tape& tape, Var logits, const LabelMap& mask);

}  // namespace stairpool
