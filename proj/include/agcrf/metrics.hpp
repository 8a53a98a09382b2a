#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "agcrf/tensor.hpp"

namespace agcrf {

// ---- depth -----------------------------------------------------------------

/// Errors over valid pixels. The delta accuracies are fractions in [0, 1].
/// Predictions are floored at kMinDepth before any logarithm.
struct DepthMetrics {
  double rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, log10 = 0, sc_inv = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  std::size_t count = 0;
};

constexpr double kMinDepth = 1e-3;

/// Accumulates per-pixel terms so several images can be pooled.
class DepthAccumulator {
 public:
  /// pred, target, mask: [1, H, W]; pixels with mask == 0 are skipped.
  void add(const Tensor& pred, const Tensor& target, const Tensor& mask);
  DepthMetrics result() const;

 private:
  double abs_rel_ = 0, sq_rel_ = 0, sq_ = 0, sq_log_ = 0, log10_ = 0, d_ = 0, d2_ = 0;
  std::size_t n_ = 0, good1_ = 0, good2_ = 0, good3_ = 0;
};

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& target, const Tensor& mask);

// ---- segmentation ----------------------------------------------------------

struct SegMetrics {
  double pix_acc = 0;
  double miou = 0;
};

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);
  /// pred and target hold integer labels; target == ignore is skipped.
  void add(const Tensor& pred, const Tensor& target, int ignore = 255);
  std::uint64_t at(int truth, int predicted) const { return m_[static_cast<std::size_t>(truth) * k_ + predicted]; }
  int classes() const { return k_; }
  /// Mean IoU over classes with a non-empty union.
  SegMetrics result() const;

 private:
  int k_;
  std::vector<std::uint64_t> m_;
};

SegMetrics seg_metrics(const Tensor& pred, const Tensor& target, int classes, int ignore = 255);

/// Per-pixel argmax over channels, returned as [1, H, W] labels.
Tensor argmax_channels(const Tensor& scores);

// ---- boundaries ------------------------------------------------------------

/// Thins a [1, H, W] probability map: a pixel survives if it is >= both
/// neighbours along the normal direction, taken from the Hessian of a
/// triangle-smoothed copy. Suppressed pixels become 0.
Tensor edge_nms(const Tensor& prob);

struct MatchCounts {
  std::size_t matched = 0;     // one-to-one matches
  std::size_t predicted = 0;   // predicted positives
  std::size_t truth = 0;       // ground-truth positives
};

/// Greedy one-to-one matching: predicted pixels in raster order take the
/// nearest free ground-truth pixel within Euclidean distance `radius`
/// (raster order breaks distance ties).
MatchCounts match_edges(const Tensor& pred_binary, const Tensor& truth, int radius);

/// F from counts. Empty truth with predictions gives 0; empty truth and no
/// predictions gives 1; no predictions with non-empty truth gives 0.
double f_from_counts(const MatchCounts& c);

/// Default tolerance: max(1, round(0.0075 * diagonal)).
int default_tolerance(int height, int width);

/// Thresholds 0.01, 0.02, ..., 0.99.
std::vector<double> default_thresholds();

struct FMeasure {
  double ods = 0, ois = 0, ap = 0;
  double ods_threshold = 0;
  /// (recall, precision) per threshold, ascending threshold.
  std::vector<std::pair<double, double>> curve;
};

/// Simplified ODS/OIS/AP over a set of images: NMS, thresholding, greedy
/// tolerance matching. radius < 0 uses default_tolerance per image.
FMeasure f_measure(std::span<const Tensor> probs, std::span<const Tensor> truths,
                   const std::vector<double>& thresholds = default_thresholds(), int radius = -1);

}  // namespace agcrf
