#include "stairpool/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "stairpool/error.hpp"

namespace stairpool {

namespace {

constexpr double kMarkerProbability = 0.9;
constexpr double kNoise = 0.05;
constexpr double kBackground = 0.1;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

enum class Kind { Ellipse, Box, Ring };

struct Shape3 {
  Kind kind = Kind::Ellipse;
  double cz = 0, cy = 0, cx = 0;
  double rz = 0, ry = 0, rx = 0;  // half extents along depth, local v, local u
  double angle = 0;
  double intensity = 1;
  std::int32_t label = 0;

  bool contains(double z, double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    const double w = rz > 0 ? (z - cz) / rz : 0.0;
    switch (kind) {
      case Kind::Ellipse: return u * u + v * v + w * w <= 1.0;
      case Kind::Box: return std::abs(u) <= 1.0 && std::abs(v) <= 1.0 && std::abs(w) <= 1.0;
      case Kind::Ring: {
        const double q = u * u + v * v;
        return std::abs(w) <= 1.0 && q <= 1.0 && q >= 0.36;
      }
    }
    return false;
  }
  double reach() const { return std::max({rx, ry, rz}) + 1.0; }
};

// Kinds that may represent each shape class for a given number of shape
// classes.
std::vector<Kind> kinds_for(std::int64_t shape_classes, std::int32_t cls) {
  if (shape_classes == 1) return {Kind::Ellipse, Kind::Box, Kind::Ring};
  if (shape_classes == 2) return cls == 1 ? std::vector<Kind>{Kind::Ellipse, Kind::Ring} : std::vector<Kind>{Kind::Box};
  static const std::array<Kind, 3> one{Kind::Ellipse, Kind::Box, Kind::Ring};
  return {one[static_cast<std::size_t>(cls - 1)]};
}

class Canvas {
 public:
  Canvas(int ndim, std::int64_t size)
      : ndim_(ndim), size_(size), depth_(ndim == 3 ? size : 1),
        image_(static_cast<std::size_t>(depth_ * size * size), kBackground),
        mask_(static_cast<std::size_t>(depth_ * size * size), 0) {}

  // Composites a shape with supersampled coverage.
  void draw(const Shape3& s) {
    const int ss = ndim_ == 3 ? 2 : 4;
    const int ssz = ndim_ == 3 ? 2 : 1;
    const double r = s.reach();
    const auto lo = [&](double c, std::int64_t n) { return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(c - r)), 0, n - 1); };
    const auto hi = [&](double c, std::int64_t n) { return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(c + r)), 0, n - 1); };
    const std::int64_t z0 = ndim_ == 3 ? lo(s.cz, depth_) : 0, z1 = ndim_ == 3 ? hi(s.cz, depth_) : 0;
    for (std::int64_t z = z0; z <= z1; ++z)
      for (std::int64_t y = lo(s.cy, size_); y <= hi(s.cy, size_); ++y)
        for (std::int64_t x = lo(s.cx, size_); x <= hi(s.cx, size_); ++x) {
          int hits = 0;
          for (int a = 0; a < ssz; ++a)
            for (int b = 0; b < ss; ++b)
              for (int c = 0; c < ss; ++c) {
                const double pz = ndim_ == 3 ? static_cast<double>(z) + (a + 0.5) / ssz : 0.0;
                hits += s.contains(pz, static_cast<double>(y) + (b + 0.5) / ss, static_cast<double>(x) + (c + 0.5) / ss);
              }
          if (!hits) continue;
          const int total = ssz * ss * ss;
          const double f = static_cast<double>(hits) / total;
          const std::size_t i = static_cast<std::size_t>((z * size_ + y) * size_ + x);
          image_[i] = image_[i] * (1.0 - f) + f * s.intensity;
          if (2 * hits >= total) mask_[i] = s.label;
        }
  }

  std::vector<double>& image() { return image_; }
  std::vector<std::int32_t>& mask() { return mask_; }

 private:
  int ndim_;
  std::int64_t size_, depth_;
  std::vector<double> image_;
  std::vector<std::int32_t> mask_;
};

Sample generate_one(const DatasetSpec& spec, std::int64_t index) {
  const std::uint64_t sample_seed = splitmix(spec.seed ^ splitmix(static_cast<std::uint64_t>(index)));
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };

  const std::int64_t S = spec.size;
  const auto Sd = static_cast<double>(S);
  const std::int64_t C = spec.num_classes;
  const std::int64_t shape_classes = C - 2;
  const std::int32_t context_class = static_cast<std::int32_t>(C - 1);
  const bool three = spec.ndim == 3;

  std::uniform_int_distribution<int> count_dist(static_cast<int>(std::max<std::int64_t>(2, C - 1)), 5);
  const int k = count_dist(rng);

  // Classes for the non-anchor shapes: every shape class at least once.
  std::vector<std::int32_t> classes;
  for (std::int32_t c = 1; c <= shape_classes; ++c) classes.push_back(c);
  std::uniform_int_distribution<std::int32_t> any_class(1, static_cast<std::int32_t>(shape_classes));
  while (static_cast<int>(classes.size()) < k - 1) classes.push_back(any_class(rng));
  std::shuffle(classes.begin(), classes.end(), rng);
  const std::int32_t anchor_class = any_class(rng);

  auto make_shape = [&](std::int32_t cls, double r_lo, double r_hi) {
    Shape3 s;
    const auto kinds = kinds_for(shape_classes, cls);
    s.kind = kinds[static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, kinds.size() - 1)(rng))];
    s.rx = uni(r_lo, r_hi) * Sd;
    s.ry = s.rx * uni(0.6, 1.0);
    s.rz = three ? s.rx * uni(0.6, 1.0) : 0.0;
    s.angle = uni(0.0, 3.14159265358979);
    const double m = std::max(s.rx, s.ry) + 1.0;
    s.cx = uni(m, Sd - m);
    s.cy = uni(m, Sd - m);
    s.cz = three ? uni(s.rz + 1.0, Sd - s.rz - 1.0) : 0.0;
    s.intensity = uni(0.45, 0.95);
    s.label = cls;
    return s;
  };

  Canvas canvas(spec.ndim, S);
  Shape3 anchor = make_shape(anchor_class, 0.16, 0.22);
  const bool marker = U(rng) < kMarkerProbability;
  if (marker) anchor.label = context_class;
  canvas.draw(anchor);
  for (std::int32_t cls : classes) canvas.draw(make_shape(cls, 0.07, 0.13));

  if (marker) {
    // Small dot in the corner farthest from the anchor.
    Shape3 dot;
    dot.kind = Kind::Ellipse;
    dot.rx = dot.ry = std::max(1.5, 0.035 * Sd);
    dot.rz = three ? dot.rx : 0.0;
    const double inset = 0.06 * Sd + dot.rx;
    dot.cx = anchor.cx < Sd / 2 ? Sd - inset : inset;
    dot.cy = anchor.cy < Sd / 2 ? Sd - inset : inset;
    dot.cz = three ? (anchor.cz < Sd / 2 ? Sd - inset : inset) : 0.0;
    dot.intensity = 1.0;
    dot.label = 0;
    canvas.draw(dot);
  }

  std::normal_distribution<double> noise(0.0, kNoise);
  for (double& v : canvas.image()) v += noise(rng);

  Sample s;
  s.seed = sample_seed;
  Shape spatial = three ? Shape{S, S, S} : Shape{S, S};
  Shape image_shape{1};
  image_shape.insert(image_shape.end(), spatial.begin(), spatial.end());
  s.image = Tensor(image_shape, std::move(canvas.image()));
  s.mask.shape = spatial;
  s.mask.labels = std::move(canvas.mask());
  return s;
}

}  // namespace

Dataset generate_synthetic_dataset(const DatasetSpec& spec) {
  if (spec.size < 16 || spec.size % 8 != 0) {
    throw Error(Errc::BadSize, "image size must be a multiple of 8 and at least 16, got " + std::to_string(spec.size));
  }
  if (spec.n < 0) throw Error(Errc::BadSize, "sample count must be non-negative");
  if (spec.num_classes < 3 || spec.num_classes > 5) {
    throw Error(Errc::InvalidConfig, "synthetic data supports 3 to 5 classes, got " + std::to_string(spec.num_classes));
  }
  if (spec.ndim != 2 && spec.ndim != 3) throw Error(Errc::UnsupportedNdim, "synthetic data is 2D or 3D");
  Dataset d;
  d.spec = spec;
  d.samples.reserve(static_cast<std::size_t>(spec.n));
  for (std::int64_t i = 0; i < spec.n; ++i) d.samples.push_back(generate_one(spec, i));
  return d;
}

Dataset generate_synthetic_dataset(std::int64_t n, std::int64_t size, std::int64_t num_classes, std::uint64_t seed,
                                   int ndim) {
  return generate_synthetic_dataset(DatasetSpec{n, size, num_classes, seed, ndim});
}

Batch make_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw Error(Errc::EmptyTensor, "empty batch");
  const Sample& first = samples.front();
  Shape image_shape{static_cast<std::int64_t>(samples.size())};
  image_shape.insert(image_shape.end(), first.image.shape().begin(), first.image.shape().end());
  Shape mask_shape{static_cast<std::int64_t>(samples.size())};
  mask_shape.insert(mask_shape.end(), first.mask.shape.begin(), first.mask.shape.end());
  std::vector<double> images;
  images.reserve(static_cast<std::size_t>(numel(image_shape)));
  Batch b;
  b.masks.shape = mask_shape;
  b.masks.labels.reserve(static_cast<std::size_t>(numel(mask_shape)));
  for (const Sample& s : samples) {
    if (s.image.shape() != first.image.shape() || s.mask.shape != first.mask.shape) {
      throw Error(Errc::ShapeMismatch, "samples in a batch must share extents");
    }
    images.insert(images.end(), s.image.data().begin(), s.image.data().end());
    b.masks.labels.insert(b.masks.labels.end(), s.mask.labels.begin(), s.mask.labels.end());
  }
  b.images = Tensor(image_shape, std::move(images));
  return b;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<Sample> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) picked.push_back(data.samples.at(i));
  return make_batch(picked);
}

std::vector<Batch> batches_of(const Dataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw Error(Errc::InvalidConfig, "batch size must be positive");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - i);
    out.push_back(make_batch(std::span<const Sample>(data.samples).subspan(i, n)));
  }
  return out;
}

Transform draw_transform(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1), turns(0, 3);
  Transform t;
  t.hflip = coin(rng) == 1;
  t.vflip = coin(rng) == 1;
  t.quarter_turns = turns(rng);
  return t;
}

namespace {

// Applies t to `planes` consecutive n x n planes.
template <typename T>
std::vector<T> transform_planes(const std::vector<T>& in, std::int64_t n, const Transform& t) {
  const std::int64_t plane = n * n;
  const std::int64_t planes = static_cast<std::int64_t>(in.size()) / plane;
  std::vector<T> out(in.size());
  const int k = ((t.quarter_turns % 4) + 4) % 4;
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = in.data() + p * plane;
    T* dst = out.data() + p * plane;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        // Undo the rotation, then the flips, to find the source pixel.
        std::int64_t si = i, sj = j;
        for (int r = 0; r < k; ++r) {
          const std::int64_t ti = sj, tj = n - 1 - si;
          si = ti;
          sj = tj;
        }
        if (t.vflip) si = n - 1 - si;
        if (t.hflip) sj = n - 1 - sj;
        dst[i * n + j] = src[si * n + sj];
      }
  }
  return out;
}

}  // namespace

Sample apply_transform(const Sample& s, const Transform& t) {
  const Shape& ms = s.mask.shape;
  if (ms.size() < 2 || ms[ms.size() - 1] != ms[ms.size() - 2]) {
    throw Error(Errc::NonSquare, "augmentation needs square height and width, got " + shape_str(ms));
  }
  const std::int64_t n = ms.back();
  Sample out;
  out.seed = s.seed;
  out.image = Tensor(s.image.shape(), transform_planes(s.image.storage(), n, t));
  out.mask.shape = ms;
  out.mask.labels = transform_planes(s.mask.labels, n, t);
  return out;
}

Sample augment(const Sample& s, std::mt19937_64& rng) { return apply_transform(s, draw_transform(rng)); }

}  // namespace stairpool
