#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stairpool/ops.hpp"

namespace stairpool {

// Weight + bias pair applied as a stride-1 convolution.
struct ConvLayer {
  Parameter weight;
  Parameter bias;
  Extents padding;

  Var operator()(Tape& tape, Var x) const;
  std::int64_t in_channels() const { return weight.value.dim(1); }
  std::int64_t out_channels() const { return weight.value.dim(0); }
  std::int64_t param_count() const { return weight.value.size() + bias.value.size(); }
};

// Up-convolution with kernel == stride == 2 on every spatial axis.
struct UpConvLayer {
  Parameter weight;  // (in, out, 2...)
  Parameter bias;

  Var operator()(Tape& tape, Var x) const;
  std::int64_t param_count() const { return weight.value.size() + bias.value.size(); }
};

// Kernel shape (out, in, k, k[, k]) for the given dimensionality.
Shape conv_weight_shape(int ndim, std::int64_t out, std::int64_t in, int k);

// He-normal initialized, same-padded (odd k) convolution with zero bias.
ConvLayer make_conv(const std::string& name, int ndim, std::int64_t in, std::int64_t out, int k,
                    std::mt19937_64& rng);
UpConvLayer make_upconv(const std::string& name, int ndim, std::int64_t in, std::int64_t out,
                        std::mt19937_64& rng);

}  // namespace stairpool
