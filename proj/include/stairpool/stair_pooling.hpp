#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "stairpool/layers.hpp"

namespace stairpool {

// One ordering of narrow pooling kernels. Labels spell each step's kernel
// digits, first index = depth (3D) / height, last = width, joined by '>':
// "P21>P12" pools vertically first, then horizontally.
struct PathSpec {
  int ndim = 2;
  std::vector<Extents> steps;

  std::string label() const;
  // Per-axis product of all step kernels.
  Extents total_stride() const;
  bool operator==(const PathSpec&) const = default;

  // Throws UnknownPathLabel on malformed input.
  static PathSpec parse(std::string_view label);
};

// Single-axis decompositions of `target_stride`, one per axis ordering, in
// canonical order (orderings compared lexicographically by the sequence of
// axes pooled, so the vertical-first path comes first).
std::vector<PathSpec> enumerate_paths(int ndim, const Extents& target_stride);
std::vector<PathSpec> enumerate_paths(int ndim);

// Throws NotNarrow(step) if a step is a full or degenerate kernel and
// ProductMismatch(axis, got, want) if the composed stride differs from the
// target.
void validate_path(const PathSpec& path, const Extents& target_stride);

// Several narrow pooling paths, each step followed by a same-padded C->C
// conv and ReLU, fused by a 1x1 conv over the concatenated path outputs.
class StairPoolBlock {
 public:
  struct Options {
    // Std-dev of the noise added to the identity initialization.
    double init_noise = 0.01;
    // Accept paths whose composed stride is not 2 per axis (for example the
    // P'122 family). Such paths must still share one stride and be narrow.
    bool allow_nonstandard = false;
  };

  StairPoolBlock(std::string name, int ndim, std::int64_t channels, std::vector<PathSpec> paths,
                 std::mt19937_64& rng, Options options);
  StairPoolBlock(std::string name, int ndim, std::int64_t channels, std::vector<PathSpec> paths,
                 std::mt19937_64& rng)
      : StairPoolBlock(std::move(name), ndim, channels, std::move(paths), rng, Options{}) {}

  int ndim() const noexcept { return ndim_; }
  std::int64_t channels() const noexcept { return channels_; }
  const std::string& name() const noexcept { return name_; }
  const std::vector<PathSpec>& paths() const noexcept { return paths_; }
  std::size_t num_paths() const noexcept { return paths_.size(); }
  const Extents& stride() const noexcept { return stride_; }
  // Throws UnknownPathLabel.
  std::size_t path_index(std::string_view label) const;

  const std::vector<bool>& active_paths() const noexcept { return active_; }
  // Throws NoActivePaths for an all-false mask, BadPathIndex for a wrong size.
  void set_active_paths(std::vector<bool> mask);

  // Output Y_i of one path (pool, conv, ReLU per step).
  Var path_forward(Tape& tape, Var x, std::size_t path) const;
  // Fused output Z over the active paths. Per-path outputs are appended to
  // `path_outputs` when given.
  Var forward(Tape& tape, Var x, std::vector<Var>* path_outputs = nullptr) const;
  // Fusion applied to the listed paths only: their outputs are concatenated
  // and mixed by the matching input-channel slices of the fusion conv.
  Var forward_subset(Tape& tape, Var x, const std::vector<std::size_t>& paths,
                     std::vector<Var>* path_outputs = nullptr) const;

  // Copy that keeps one path, its step convs and its fusion slice.
  StairPoolBlock select(std::size_t path) const;

  std::vector<ConvLayer>& path_convs(std::size_t path) { return path_convs_.at(path); }
  const std::vector<ConvLayer>& path_convs(std::size_t path) const { return path_convs_.at(path); }
  ConvLayer& fusion() noexcept { return fusion_; }
  const ConvLayer& fusion() const noexcept { return fusion_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::int64_t param_count() const;

 private:
  StairPoolBlock() = default;

  std::string name_;
  int ndim_ = 2;
  std::int64_t channels_ = 0;
  Extents stride_;
  std::vector<PathSpec> paths_;
  std::vector<std::vector<ConvLayer>> path_convs_;
  ConvLayer fusion_;
  std::vector<bool> active_;
};

}  // namespace stairpool
