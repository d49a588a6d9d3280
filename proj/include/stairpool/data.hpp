#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "stairpool/tensor.hpp"

namespace stairpool {

// Integer class labels laid out like a tensor without its channel axis.
struct LabelMap {
  Shape shape;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  explicit LabelMap(Shape s, std::int32_t fill = 0) : shape(std::move(s)), labels(static_cast<std::size_t>(numel(shape)), fill) {}

  std::int64_t size() const noexcept { return static_cast<std::int64_t>(labels.size()); }
  std::int32_t operator[](std::int64_t i) const { return labels[static_cast<std::size_t>(i)]; }
  std::int32_t& operator[](std::int64_t i) { return labels[static_cast<std::size_t>(i)]; }
  bool operator==(const LabelMap&) const = default;
};

// One image with its mask. image is (channels, spatial...), mask is (spatial...).
struct Sample {
  Tensor image;
  LabelMap mask;
  std::uint64_t seed = 0;  // per-sample generator seed
};

struct DatasetSpec {
  std::int64_t n = 0;
  std::int64_t size = 64;
  std::int64_t num_classes = 4;
  std::uint64_t seed = 0;
  int ndim = 2;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
};

// Synthetic segmentation data. Each image holds several anti-aliased shapes
// on a noisy background. Round shapes (ellipses, rings) and boxes form the
// shape classes; the last class marks the largest shape when a small marker
// dot sits in the opposite corner, so getting it right needs long-range
// context. 3D mode extrudes the shapes along depth.
// Throws BadSize unless size is a multiple of 8 and >= 16, and InvalidConfig
// unless 3 <= num_classes <= 5.
Dataset generate_synthetic_dataset(const DatasetSpec& spec);
Dataset generate_synthetic_dataset(std::int64_t n, std::int64_t size, std::int64_t num_classes, std::uint64_t seed,
                                   int ndim = 2);

struct Batch {
  Tensor images;  // (n, channels, spatial...)
  LabelMap masks; // (n, spatial...)
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);
Batch make_batch(std::span<const Sample> samples);
// Consecutive batches of at most batch_size samples, in dataset order.
std::vector<Batch> batches_of(const Dataset& data, std::size_t batch_size);

// Flips and quarter turns in the last two (height, width) axes.
struct Transform {
  bool hflip = false;
  bool vflip = false;
  int quarter_turns = 0;  // counter-clockwise, 0..3
};

Transform draw_transform(std::mt19937_64& rng);
// Throws NonSquare when height != width.
Sample apply_transform(const Sample& s, const Transform& t);
Sample augment(const Sample& s, std::mt19937_64& rng);

}  // namespace stairpool
