#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stairpool/tape.hpp"

namespace stairpool {

// Per-spatial-axis extents (2 entries for 2D maps, 3 for 3D).
using Extents = std::vector<int>;

// Non-overlapping max pooling; kernel must equal stride. The backward pass
// routes each window's gradient to its first maximum in row-major scan order.
Var max_pool(Tape& tape, Var x, const Extents& kernel, const Extents& stride);

// Cross-correlation with zero padding. w is (out_channels, in_channels, k...),
// b is (out_channels). Stride defaults to 1 on every axis.
Var conv(Tape& tape, Var x, Var w, Var b, const Extents& padding, const Extents& stride = {});

// Up-convolution with kernel == stride. w is (in_channels, out_channels, k...).
Var transposed_conv(Tape& tape, Var x, Var w, Var b, const Extents& stride);

Var relu(Tape& tape, Var x);

// Concatenation along axis 1 (channels).
Var concat(Tape& tape, std::span<const Var> xs);

// Sub-range [begin, begin + count) of axis 1. Works for feature maps and for
// convolution weights alike.
Var slice_channels(Tape& tape, Var x, std::int64_t begin, std::int64_t count);

// Per-pixel softmax over axis 1.
Var softmax_channels(Tape& tape, Var x);

Var add(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, double k);
Var sum(Tape& tape, Var a);

}  // namespace stairpool
