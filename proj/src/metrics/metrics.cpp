#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "agcrf/metrics.hpp"

namespace agcrf {

void DepthAccumulator::add(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "depth_metrics");
  require_same_shape(pred, mask, "depth_metrics");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double gt = target[i];
    if (!(gt > 0.0)) throw std::invalid_argument("depth_metrics: ground-truth depth must be positive on valid pixels");
    const double p = std::max(pred[i], kMinDepth);
    const double diff = p - gt;
    abs_rel_ += std::abs(diff) / gt;
    sq_rel_ += diff * diff / gt;
    sq_ += diff * diff;
    const double dl = std::log(p) - std::log(gt);
    sq_log_ += dl * dl;
    d_ += dl;
    d2_ += dl * dl;
    log10_ += std::abs(std::log10(p) - std::log10(gt));
    const double ratio = std::max(p / gt, gt / p);
    good1_ += ratio < 1.25;
    good2_ += ratio < 1.25 * 1.25;
    good3_ += ratio < 1.25 * 1.25 * 1.25;
    ++n_;
  }
}

DepthMetrics DepthAccumulator::result() const {
  DepthMetrics m;
  m.count = n_;
  if (n_ == 0) return m;
  const double n = static_cast<double>(n_);
  m.rel = abs_rel_ / n;
  m.sq_rel = sq_rel_ / n;
  m.rmse = std::sqrt(sq_ / n);
  m.rmse_log = std::sqrt(sq_log_ / n);
  m.log10 = log10_ / n;
  // Scale-invariant error: variance of the log difference.
  const double mean = d_ / n;
  m.sc_inv = std::sqrt(std::max(0.0, d2_ / n - mean * mean));
  m.delta1 = good1_ / n;
  m.delta2 = good2_ / n;
  m.delta3 = good3_ / n;
  return m;
}

DepthMetrics depth_metrics(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  DepthAccumulator acc;
  acc.add(pred, target, mask);
  return acc.result();
}

ConfusionMatrix::ConfusionMatrix(int classes) : k_(classes) {
  if (classes < 1) throw std::invalid_argument("ConfusionMatrix: need at least one class");
  m_.assign(static_cast<std::size_t>(classes) * classes, 0);
}

void ConfusionMatrix::add(const Tensor& pred, const Tensor& target, int ignore) {
  require_same_shape(pred, target, "seg_metrics");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int t = static_cast<int>(target[i]);
    if (t == ignore) continue;
    const int p = static_cast<int>(pred[i]);
    if (t < 0 || t >= k_ || p < 0 || p >= k_)
      throw std::invalid_argument("seg_metrics: label out of range at pixel " + std::to_string(i));
    ++m_[static_cast<std::size_t>(t) * k_ + p];
  }
}

SegMetrics ConfusionMatrix::result() const {
  SegMetrics r;
  std::uint64_t total = 0, correct = 0;
  for (int t = 0; t < k_; ++t)
    for (int p = 0; p < k_; ++p) {
      total += at(t, p);
      if (t == p) correct += at(t, p);
    }
  r.pix_acc = total ? static_cast<double>(correct) / total : 0.0;
  double iou_sum = 0.0;
  int present = 0;
  for (int c = 0; c < k_; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < k_; ++j) {
      row += at(c, j);
      col += at(j, c);
    }
    const std::uint64_t uni = row + col - at(c, c);
    if (uni == 0) continue;
    iou_sum += static_cast<double>(at(c, c)) / uni;
    ++present;
  }
  r.miou = present ? iou_sum / present : 0.0;
  return r;
}

SegMetrics seg_metrics(const Tensor& pred, const Tensor& target, int classes, int ignore) {
  ConfusionMatrix cm(classes);
  cm.add(pred, target, ignore);
  return cm.result();
}

Tensor argmax_channels(const Tensor& scores) {
  require_image(scores, "argmax_channels");
  const int k = scores.channels();
  const std::size_t plane = static_cast<std::size_t>(scores.height()) * scores.width();
  Tensor out({1, scores.height(), scores.width()});
  for (std::size_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (scores[c * plane + i] > scores[best * plane + i]) best = c;
    out[i] = best;
  }
  return out;
}

}  // namespace agcrf
