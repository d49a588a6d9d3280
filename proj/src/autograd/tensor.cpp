#include "stairpool/tensor.hpp"

#include <cmath>
#include <sstream>

#include "stairpool/error.hpp"

namespace stairpool {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::NonDivisibleShape: return "NonDivisibleShape";
    case Errc::KernelStrideMismatch: return "KernelStrideMismatch";
    case Errc::ChannelMismatch: return "ChannelMismatch";
    case Errc::ShapeUnderflow: return "ShapeUnderflow";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NotScalar: return "NotScalar";
    case Errc::TapeMismatch: return "TapeMismatch";
    case Errc::UnsupportedNdim: return "UnsupportedNdim";
    case Errc::ProductMismatch: return "ProductMismatch";
    case Errc::NotNarrow: return "NotNarrow";
    case Errc::NoActivePaths: return "NoActivePaths";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::NotStairStep: return "NotStairStep";
    case Errc::BadPathIndex: return "BadPathIndex";
    case Errc::UnknownPathLabel: return "UnknownPathLabel";
    case Errc::EmptyTensor: return "EmptyTensor";
    case Errc::MissingGrad: return "MissingGrad";
    case Errc::NonSquare: return "NonSquare";
    case Errc::BadSize: return "BadSize";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::CrcMismatch: return "CrcMismatch";
    case Errc::MissingParameter: return "MissingParameter";
    case Errc::NoStairSteps: return "NoStairSteps";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

static void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e < 1) throw Error(Errc::ShapeUnderflow, "non-positive extent in " + shape_str(shape));
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw Error(Errc::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                         " does not match shape " + shape_str(shape_));
  }
}

const std::vector<double>& Tensor::grad() const {
  if (!grad_) throw Error(Errc::MissingGrad, "tensor has no gradient");
  return *grad_;
}

std::vector<double>& Tensor::grad_mut() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), momentum(value.storage().size(), 0.0) {
  value.set_requires_grad(true);
}

Geometry Geometry::of(const Shape& shape) {
  Geometry g;
  if (shape.size() == 4) {
    g = {shape[0], shape[1], 1, shape[2], shape[3], 2};
  } else if (shape.size() == 5) {
    g = {shape[0], shape[1], shape[2], shape[3], shape[4], 3};
  } else {
    throw Error(Errc::UnsupportedNdim,
                "expected (batch, channel, 2 or 3 spatial axes), got " + shape_str(shape));
  }
  return g;
}

}  // namespace stairpool
