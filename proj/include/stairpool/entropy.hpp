#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stairpool/unet.hpp"

namespace stairpool {

// Standard deviations below this are clamped before taking the log, so dead
// channels give a large negative but finite contribution.
inline constexpr double kSigmaFloor = 1e-8;

// Gaussian entropy proxy of a feature map: the sum over channels of log sigma.
struct EntropyEstimate {
  std::vector<double> per_channel_log_sigma;
  double h_sigma = 0.0;
  std::int64_t n_channels = 0;
  std::int64_t n_samples_used = 0;  // values per channel
};

// Pools per-channel values over any number of (n, c, spatial...) tensors.
// The estimate depends only on the multiset of values per channel, never on
// the order in which tensors or entries were added.
class ChannelStats {
 public:
  void add(const Tensor& features);
  EntropyEstimate estimate() const;
  std::int64_t channels() const noexcept { return static_cast<std::int64_t>(values_.size()); }

 private:
  std::vector<std::vector<double>> values_;
};

// Population standard deviation per channel over batch and spatial entries.
// Throws EmptyTensor.
EntropyEstimate channel_entropy(const Tensor& features);

// Entropy of X_o pooled over all batches, with the given path overrides.
EntropyEstimate output_entropy(const UNet& model, const std::vector<Tensor>& batches,
                               const PathOverrides& overrides = {});
// X_o entropy when step `step` (1..3) is driven by path `path` alone.
EntropyEstimate conditional_output_entropy(const UNet& model, const std::vector<Tensor>& batches, int step,
                                           std::size_t path);
// H(X_o | Y_i) - H(X_o).
double transfer_entropy(const UNet& model, const std::vector<Tensor>& batches, int step, std::size_t path);

struct TEEntry {
  int step = 1;
  std::size_t path = 0;
  std::string label;
  double te = 0.0;
  bool selected = false;
};

struct TEReport {
  std::vector<TEEntry> entries;  // ordered by step, then canonical path order
  std::array<std::optional<std::string>, kUNetDepth> selected{};
  double baseline_h = 0.0;       // H(X_o) with every block fused
  std::size_t evaluations = 0;   // conditional entropies computed
  bool joint = false;
  double joint_best_te = 0.0;    // joint mode only
  std::string dataset_id;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

struct SearchOptions {
  // Exhaustive search over the cross product of per-step choices. Each entry
  // then reports the best TE among combinations using that path.
  bool joint = false;
  std::string dataset_id;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kMaxJointCombinations = 216;

// Throws NoStairSteps, or InvalidConfig when a joint search would exceed
// kMaxJointCombinations.
TEReport search_paths(const UNet& model, const std::vector<Tensor>& batches, const SearchOptions& options = {});

PathSelection selection_of(const TEReport& report);

}  // namespace stairpool
