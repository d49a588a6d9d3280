#include "stairpool/layers.hpp"

#include <cmath>

namespace stairpool {

Var ConvLayer::operator()(Tape& tape, Var x) const {
  return conv(tape, x, tape.watch(weight), tape.watch(bias), padding);
}

Var UpConvLayer::operator()(Tape& tape, Var x) const {
  const int ndim = static_cast<int>(weight.value.rank()) - 2;
  return transposed_conv(tape, x, tape.watch(weight), tape.watch(bias), Extents(ndim, 2));
}

Shape conv_weight_shape(int ndim, std::int64_t out, std::int64_t in, int k) {
  Shape s{out, in};
  for (int a = 0; a < ndim; ++a) s.push_back(k);
  return s;
}

ConvLayer make_conv(const std::string& name, int ndim, std::int64_t in, std::int64_t out, int k,
                    std::mt19937_64& rng) {
  Tensor w(conv_weight_shape(ndim, out, in, k));
  const double fan_in = static_cast<double>(w.size() / out);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : w.data()) v = normal(rng);
  return ConvLayer{Parameter(name + ".w", std::move(w)), Parameter(name + ".b", Tensor({out}, 0.0)),
                   Extents(ndim, (k - 1) / 2)};
}

UpConvLayer make_upconv(const std::string& name, int ndim, std::int64_t in, std::int64_t out,
                        std::mt19937_64& rng) {
  Shape s{in, out};
  for (int a = 0; a < ndim; ++a) s.push_back(2);
  Tensor w(s);
  // Each output cell receives exactly `in` contributions.
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in)));
  for (auto& v : w.data()) v = normal(rng);
  return UpConvLayer{Parameter(name + ".w", std::move(w)), Parameter(name + ".b", Tensor({out}, 0.0))};
}

}  // namespace stairpool
