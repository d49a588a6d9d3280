#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "stairpool/data.hpp"

namespace stairpool {

// Hard Dice overlap of one class: 1 when both masks lack it, 0 when exactly
// one does. Throws ShapeMismatch.
double dice_score(const LabelMap& pred, const LabelMap& gt, std::int32_t class_id);

// Pixels of the class with at least one face neighbour of another class.
// Pixels on the image border count, since the outside is not the class.
// Returned as flat indices in increasing order.
std::vector<std::int64_t> boundary_points(const LabelMap& mask, std::int32_t class_id);

struct HausdorffResult {
  bool defined = true;  // false when exactly one mask lacks the class
  double hd = 0.0;      // symmetric max-rule distance, in pixels
  double hd95 = 0.0;    // 95th percentile of the pooled directed distances
};

// Distances between the two boundary sets, computed with an exact Euclidean
// distance transform. Throws ShapeMismatch.
HausdorffResult hausdorff(const LabelMap& pred, const LabelMap& gt, std::int32_t class_id);
// hd, or nullopt when undefined.
std::optional<double> hausdorff_distance(const LabelMap& pred, const LabelMap& gt, std::int32_t class_id);

struct MetricsRecord {
  // Foreground classes 1..C-1, so index k is class k + 1.
  std::vector<double> per_class_dice;
  double mean_dice = 0.0;
  // Means over cases where the distance is defined; nullopt if none is.
  std::vector<std::optional<double>> per_class_hd;
  std::vector<std::optional<double>> per_class_hd95;
  std::optional<double> mean_hd;
  std::optional<double> mean_hd95;
  std::int64_t cases = 0;

  // Filled by training.
  std::vector<double> loss_curve;      // mean training loss per epoch
  std::vector<double> val_dice_curve;  // mean validation Dice per epoch
  int best_epoch = 0;                  // 1-based; 0 before any epoch
};

// Scores predicted against reference label maps, one pair per case.
MetricsRecord score_cases(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                          std::int64_t num_classes, bool with_hausdorff = true);

// Splits an (n, spatial...) label map into n cases.
std::vector<LabelMap> split_cases(const LabelMap& batch);

}  // namespace stairpool
