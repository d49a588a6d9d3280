#include "stairpool/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stairpool/error.hpp"

namespace stairpool {

namespace {

void require_same(const LabelMap& a, const LabelMap& b) {
  if (a.shape != b.shape) {
    throw Error(Errc::ShapeMismatch, "label maps differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
}

struct Grid {
  std::int64_t d = 1, h = 1, w = 1;
  int dims = 2;
};

Grid grid_of(const Shape& s) {
  Grid g;
  if (s.size() == 2) {
    g.h = s[0];
    g.w = s[1];
  } else if (s.size() == 3) {
    g.d = s[0];
    g.h = s[1];
    g.w = s[2];
    g.dims = 3;
  } else if (s.size() == 1) {
    g.w = s[0];
    g.dims = 1;
  } else {
    throw Error(Errc::UnsupportedNdim, "label maps are 1D, 2D or 3D, got " + shape_str(s));
  }
  return g;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared distance transform of one line (lower envelope of parabolas).
void edt_line(const double* f, double* out, std::int64_t n, std::int64_t stride, std::vector<std::int64_t>& v,
              std::vector<double>& z, std::vector<double>& buf) {
  buf.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = f[i * stride];
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n + 1));
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    const double fq = buf[static_cast<std::size_t>(q)];
    if (fq == kInf) continue;
    while (k >= 0) {
      const std::int64_t p = v[static_cast<std::size_t>(k)];
      const double fp = buf[static_cast<std::size_t>(p)];
      const double s = ((fq + double(q * q)) - (fp + double(p * p))) / (2.0 * double(q - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        v[static_cast<std::size_t>(++k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k + 1)] = kInf;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
    }
  }
  for (std::int64_t q = 0, j = 0; q < n; ++q) {
    if (k < 0) {
      out[q * stride] = kInf;
      continue;
    }
    while (z[static_cast<std::size_t>(j + 1)] < double(q)) ++j;
    const std::int64_t p = v[static_cast<std::size_t>(j)];
    out[q * stride] = double((q - p) * (q - p)) + buf[static_cast<std::size_t>(p)];
  }
}

// Squared Euclidean distance from every pixel to the nearest seed.
std::vector<double> squared_edt(const Grid& g, const std::vector<std::int64_t>& seeds) {
  std::vector<double> f(static_cast<std::size_t>(g.d * g.h * g.w), kInf);
  for (std::int64_t s : seeds) f[static_cast<std::size_t>(s)] = 0.0;
  std::vector<std::int64_t> v;
  std::vector<double> z, buf;
  for (std::int64_t a = 0; a < g.d; ++a)
    for (std::int64_t b = 0; b < g.h; ++b) {
      double* line = f.data() + (a * g.h + b) * g.w;
      edt_line(line, line, g.w, 1, v, z, buf);
    }
  for (std::int64_t a = 0; a < g.d; ++a)
    for (std::int64_t c = 0; c < g.w; ++c) {
      double* line = f.data() + a * g.h * g.w + c;
      edt_line(line, line, g.h, g.w, v, z, buf);
    }
  if (g.d > 1) {
    for (std::int64_t b = 0; b < g.h; ++b)
      for (std::int64_t c = 0; c < g.w; ++c) {
        double* line = f.data() + b * g.w + c;
        edt_line(line, line, g.d, g.h * g.w, v, z, buf);
      }
  }
  return f;
}

double percentile95(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const double pos = 0.95 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double dice_score(const LabelMap& pred, const LabelMap& gt, std::int32_t class_id) {
  require_same(pred, gt);
  std::int64_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool a = pred.labels[i] == class_id, b = gt.labels[i] == class_id;
    p += a;
    g += b;
    both += a && b;
  }
  if (p == 0 && g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::int64_t> boundary_points(const LabelMap& mask, std::int32_t class_id) {
  const Grid g = grid_of(mask.shape);
  std::vector<std::int64_t> out;
  auto at = [&](std::int64_t a, std::int64_t b, std::int64_t c) {
    if (a < 0 || b < 0 || c < 0 || a >= g.d || b >= g.h || c >= g.w) return false;
    return mask.labels[static_cast<std::size_t>((a * g.h + b) * g.w + c)] == class_id;
  };
  for (std::int64_t a = 0; a < g.d; ++a)
    for (std::int64_t b = 0; b < g.h; ++b)
      for (std::int64_t c = 0; c < g.w; ++c) {
        if (!at(a, b, c)) continue;
        bool edge = !at(a, b, c - 1) || !at(a, b, c + 1);
        if (g.dims >= 2) edge = edge || !at(a, b - 1, c) || !at(a, b + 1, c);
        if (g.dims == 3) edge = edge || !at(a - 1, b, c) || !at(a + 1, b, c);
        if (edge) out.push_back((a * g.h + b) * g.w + c);
      }
  return out;
}

HausdorffResult hausdorff(const LabelMap& pred, const LabelMap& gt, std::int32_t class_id) {
  require_same(pred, gt);
  const Grid g = grid_of(pred.shape);
  const auto bp = boundary_points(pred, class_id);
  const auto bg = boundary_points(gt, class_id);
  HausdorffResult r;
  if (bp.empty() && bg.empty()) return r;
  if (bp.empty() || bg.empty()) {
    r.defined = false;
    r.hd = r.hd95 = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const auto to_gt = squared_edt(g, bg);
  const auto to_pred = squared_edt(g, bp);
  std::vector<double> pooled;
  pooled.reserve(bp.size() + bg.size());
  for (std::int64_t i : bp) pooled.push_back(std::sqrt(to_gt[static_cast<std::size_t>(i)]));
  for (std::int64_t i : bg) pooled.push_back(std::sqrt(to_pred[static_cast<std::size_t>(i)]));
  r.hd = *std::max_element(pooled.begin(), pooled.end());
  r.hd95 = percentile95(std::move(pooled));
  return r;
}

std::optional<double> hausdorff_distance(const LabelMap& pred, const LabelMap& gt, std::int32_t class_id) {
  const HausdorffResult r = hausdorff(pred, gt, class_id);
  if (!r.defined) return std::nullopt;
  return r.hd;
}

MetricsRecord score_cases(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                          std::int64_t num_classes, bool with_hausdorff) {
  if (preds.size() != gts.size()) throw Error(Errc::ShapeMismatch, "prediction and reference counts differ");
  if (preds.empty()) throw Error(Errc::EmptyTensor, "no cases to score");
  if (num_classes < 2) throw Error(Errc::InvalidConfig, "scoring needs at least one foreground class");
  const auto fg = static_cast<std::size_t>(num_classes - 1);
  MetricsRecord m;
  m.cases = static_cast<std::int64_t>(preds.size());
  m.per_class_dice.assign(fg, 0.0);
  std::vector<double> hd_sum(fg, 0.0), hd95_sum(fg, 0.0);
  std::vector<std::int64_t> hd_n(fg, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t k = 0; k < fg; ++k) {
      const auto cls = static_cast<std::int32_t>(k + 1);
      m.per_class_dice[k] += dice_score(preds[i], gts[i], cls);
      if (!with_hausdorff) continue;
      const HausdorffResult h = hausdorff(preds[i], gts[i], cls);
      if (!h.defined) continue;
      hd_sum[k] += h.hd;
      hd95_sum[k] += h.hd95;
      ++hd_n[k];
    }
  }
  for (double& d : m.per_class_dice) d /= static_cast<double>(preds.size());
  for (double d : m.per_class_dice) m.mean_dice += d;
  m.mean_dice /= static_cast<double>(fg);
  if (!with_hausdorff) return m;
  double hd_total = 0.0, hd95_total = 0.0;
  std::int64_t defined = 0;
  for (std::size_t k = 0; k < fg; ++k) {
    if (hd_n[k] == 0) {
      m.per_class_hd.push_back(std::nullopt);
      m.per_class_hd95.push_back(std::nullopt);
      continue;
    }
    m.per_class_hd.push_back(hd_sum[k] / static_cast<double>(hd_n[k]));
    m.per_class_hd95.push_back(hd95_sum[k] / static_cast<double>(hd_n[k]));
    hd_total += *m.per_class_hd.back();
    hd95_total += *m.per_class_hd95.back();
    ++defined;
  }
  if (defined > 0) {
    m.mean_hd = hd_total / static_cast<double>(defined);
    m.mean_hd95 = hd95_total / static_cast<double>(defined);
  }
  return m;
}

std::vector<LabelMap> split_cases(const LabelMap& batch) {
  if (batch.shape.size() < 2) throw Error(Errc::ShapeMismatch, "batched label map needs a leading case axis");
  const Shape one(batch.shape.begin() + 1, batch.shape.end());
  const std::int64_t per = numel(one);
  std::vector<LabelMap> out;
  for (std::int64_t n = 0; n < batch.shape[0]; ++n) {
    LabelMap m;
    m.shape = one;
    m.labels.assign(batch.labels.begin() + n * per, batch.labels.begin() + (n + 1) * per);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace stairpool
