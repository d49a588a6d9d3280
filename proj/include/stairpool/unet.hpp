#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stairpool/layers.hpp"
#include "stairpool/stair_pooling.hpp"

namespace stairpool {

inline constexpr int kUNetDepth = 3;

enum class PoolingKind { Plain, StairFull, StairSelected };

struct PoolingChoice {
  PoolingKind kind = PoolingKind::Plain;
  std::string label;  // path label, StairSelected only

  static PoolingChoice plain() { return {}; }
  static PoolingChoice stair_full() { return {PoolingKind::StairFull, {}}; }
  static PoolingChoice stair_selected(std::string label) { return {PoolingKind::StairSelected, std::move(label)}; }

  // "plain", "stair_full" or "stair_selected:<label>".
  std::string to_string() const;
  static PoolingChoice parse(std::string_view text);
  bool operator==(const PoolingChoice&) const = default;
};

struct ModelConfig {
  int ndim = 2;
  std::int64_t in_channels = 1;
  std::int64_t num_classes = 4;
  std::int64_t base_channels = 16;
  int depth = kUNetDepth;
  std::array<PoolingChoice, kUNetDepth> pooling{};
  // Upper bound on the widest (bottleneck) stage, 8 * base_channels.
  std::int64_t max_channels = 512;
  double stair_init_noise = 0.01;

  // Throws InvalidConfig naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Per-step path override (index into that step's block paths).
using PathOverrides = std::array<std::optional<std::size_t>, kUNetDepth>;
// Per-step path label to keep when pruning.
using PathSelection = std::array<std::optional<std::string>, kUNetDepth>;

// Vars produced by one forward pass on a tape. Index 0 is step l = 1.
struct TraceVars {
  std::array<Var, kUNetDepth> z{};
  std::array<std::vector<Var>, kUNetDepth> y{};
  Var x_o{};
  Var logits{};
};

struct ForwardTrace {
  bool recorded = false;
  std::array<Tensor, kUNetDepth> z{};               // down-sampled features Z^l
  std::array<std::vector<Tensor>, kUNetDepth> y{};  // path features Y_i^l (stair steps)
  Tensor x_o;                                       // decoder feature entering the 1x1 head
  Tensor logits;
};

class UNet {
 public:
  struct EncoderStage {
    ConvLayer conv1, conv2;
    std::optional<StairPoolBlock> stair;  // empty for plain max pooling
  };
  struct DecoderStage {
    UpConvLayer up;
    ConvLayer conv1, conv2;
  };

  const ModelConfig& config() const noexcept { return cfg_; }

  // Overridden steps replace the fused Z^l by Y_i^l routed through the
  // matching slice of the fusion conv. Throws NotStairStep / BadPathIndex.
  TraceVars forward(Tape& tape, Var x, const PathOverrides& overrides = {}) const;

  bool is_stair_step(int step) const;  // step in 1..3
  const StairPoolBlock& stair_block(int step) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find_parameter(std::string_view name);
  const Parameter* find_parameter(std::string_view name) const;
  std::int64_t param_count() const;

  const std::array<EncoderStage, kUNetDepth>& encoders() const noexcept { return enc_; }
  const std::array<DecoderStage, kUNetDepth>& decoders() const noexcept { return dec_; }

 private:
  friend UNet build_unet(const ModelConfig& cfg, std::uint64_t seed);
  friend UNet apply_path_selection(const UNet& model, const PathSelection& selection);

  ModelConfig cfg_;
  std::array<EncoderStage, kUNetDepth> enc_;
  ConvLayer bottleneck1_, bottleneck2_;
  std::array<DecoderStage, kUNetDepth> dec_;  // index 0 is the highest resolution
  ConvLayer head_;
};

using Model = UNet;

// Deterministic in (cfg, seed). Stair blocks draw from their own streams, so
// models that differ only in pooling share every other weight.
UNet build_unet(const ModelConfig& cfg, std::uint64_t seed);

// Inference-only forward. With record == false only logits are filled.
ForwardTrace forward(const UNet& model, const Tensor& x, bool record);
ForwardTrace forward_with_path_override(const UNet& model, const Tensor& x, int step, std::size_t path);
ForwardTrace forward_with_path_overrides(const UNet& model, const Tensor& x, const PathOverrides& overrides);

// Prunes each selected stair step to one path. Throws NotStairStep or
// UnknownPathLabel.
UNet apply_path_selection(const UNet& model, const PathSelection& selection);

std::int64_t param_count(const UNet& model);

}  // namespace stairpool
