#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "agcrf/metrics.hpp"

namespace agcrf {
namespace {

void check_map(const Tensor& t, const char* what) {
  require_image(t, what);
  if (t.channels() != 1) throw ShapeError(std::string(what) + ": expected a [1, H, W] map");
}

// Separable [1 2 1] / 4 smoothing with replicated borders.
Tensor triangle_smooth(const Tensor& m) {
  const int h = m.height(), w = m.width();
  Tensor tmp({1, h, w}), out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      tmp.at(0, y, x) = 0.25 * m.at(0, y, std::max(x - 1, 0)) + 0.5 * m.at(0, y, x) + 0.25 * m.at(0, y, std::min(x + 1, w - 1));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(0, y, x) = 0.25 * tmp.at(0, std::max(y - 1, 0), x) + 0.5 * tmp.at(0, y, x) + 0.25 * tmp.at(0, std::min(y + 1, h - 1), x);
  return out;
}

// Bilinear sample with zero outside the image.
double sample(const Tensor& m, double y, double x) {
  const int h = m.height(), w = m.width();
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto px = [&](int yy, int xx) { return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : m.at(0, yy, xx); };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) + fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

}  // namespace

Tensor edge_nms(const Tensor& prob) {
  check_map(prob, "edge_nms");
  const int h = prob.height(), w = prob.width();
  const Tensor s = triangle_smooth(prob);
  auto at = [&](int y, int x) { return s.at(0, std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };
  Tensor out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = prob.at(0, y, x);
      if (v <= 0.0) continue;
      const double hxx = at(y, x + 1) - 2 * at(y, x) + at(y, x - 1);
      const double hyy = at(y + 1, x) - 2 * at(y, x) + at(y - 1, x);
      const double hxy = 0.25 * (at(y + 1, x + 1) - at(y + 1, x - 1) - at(y - 1, x + 1) + at(y - 1, x - 1));
      // Normal = eigenvector of the Hessian eigenvalue with the largest magnitude.
      const double mean = 0.5 * (hxx + hyy);
      const double rad = std::sqrt(0.25 * (hxx - hyy) * (hxx - hyy) + hxy * hxy);
      const double lam = std::abs(mean + rad) >= std::abs(mean - rad) ? mean + rad : mean - rad;
      double nx = hxy, ny = lam - hxx;
      if (std::abs(nx) + std::abs(ny) < 1e-12) {
        nx = lam - hyy;
        ny = hxy;
      }
      const double len = std::hypot(nx, ny);
      if (len < 1e-12) {
        out.at(0, y, x) = v;  // flat neighbourhood: nothing to compare against
        continue;
      }
      nx /= len;
      ny /= len;
      if (v >= sample(prob, y + ny, x + nx) && v >= sample(prob, y - ny, x - nx)) out.at(0, y, x) = v;
    }
  return out;
}

MatchCounts match_edges(const Tensor& pred_binary, const Tensor& truth, int radius) {
  check_map(pred_binary, "match_edges");
  require_same_shape(pred_binary, truth, "match_edges");
  const int h = truth.height(), w = truth.width();
  MatchCounts c;
  std::vector<char> used(truth.size(), 0);
  for (std::size_t i = 0; i < truth.size(); ++i) c.truth += truth[i] != 0.0;
  const int r2 = radius * radius;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (pred_binary.at(0, y, x) == 0.0) continue;
      ++c.predicted;
      int best = -1, best_d = r2 + 1;
      for (int yy = std::max(0, y - radius); yy <= std::min(h - 1, y + radius); ++yy)
        for (int xx = std::max(0, x - radius); xx <= std::min(w - 1, x + radius); ++xx) {
          const int idx = yy * w + xx;
          if (truth[idx] == 0.0 || used[idx]) continue;
          const int d = (yy - y) * (yy - y) + (xx - x) * (xx - x);
          if (d < best_d) {
            best_d = d;
            best = idx;
          }
        }
      if (best >= 0) {
        used[best] = 1;
        ++c.matched;
      }
    }
  return c;
}

double f_from_counts(const MatchCounts& c) {
  if (c.truth == 0) return c.predicted == 0 ? 1.0 : 0.0;
  if (c.predicted == 0 || c.matched == 0) return 0.0;
  const double p = static_cast<double>(c.matched) / c.predicted;
  const double r = static_cast<double>(c.matched) / c.truth;
  return 2 * p * r / (p + r);
}

int default_tolerance(int height, int width) {
  const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
  return std::max(1, static_cast<int>(std::lround(0.0075 * diag)));
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 99; ++i) t.push_back(i / 100.0);
  return t;
}

FMeasure f_measure(std::span<const Tensor> probs, std::span<const Tensor> truths, const std::vector<double>& thresholds,
                   int radius) {
  if (probs.size() != truths.size()) throw std::invalid_argument("f_measure: prediction and truth counts differ");
  if (thresholds.empty()) throw std::invalid_argument("f_measure: empty threshold grid");
  const std::size_t n = probs.size(), nt = thresholds.size();
  std::vector<MatchCounts> total(nt);
  FMeasure out;
  double ois_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    check_map(probs[i], "f_measure");
    const Tensor thin = edge_nms(probs[i]);
    const int rad = radius >= 0 ? radius : default_tolerance(thin.height(), thin.width());
    double best = 0.0;
    for (std::size_t k = 0; k < nt; ++k) {
      Tensor bin({1, thin.height(), thin.width()});
      for (std::size_t j = 0; j < bin.size(); ++j) bin[j] = thin[j] >= thresholds[k] ? 1.0 : 0.0;
      const MatchCounts c = match_edges(bin, truths[i], rad);
      best = std::max(best, f_from_counts(c));
      total[k].matched += c.matched;
      total[k].predicted += c.predicted;
      total[k].truth += c.truth;
    }
    ois_sum += best;
  }
  out.ois = n ? ois_sum / n : 0.0;
  for (std::size_t k = 0; k < nt; ++k) {
    const double f = f_from_counts(total[k]);
    if (f > out.ods) {
      out.ods = f;
      out.ods_threshold = thresholds[k];
    }
    const double p = total[k].predicted ? static_cast<double>(total[k].matched) / total[k].predicted : 1.0;
    const double r = total[k].truth ? static_cast<double>(total[k].matched) / total[k].truth : 1.0;
    out.curve.emplace_back(r, p);
  }
  // Area under the polyline through the (recall, precision) points, sorted by recall.
  std::vector<std::pair<double, double>> pts = out.curve;
  std::sort(pts.begin(), pts.end());
  for (std::size_t k = 1; k < pts.size(); ++k)
    out.ap += (pts[k].first - pts[k - 1].first) * 0.5 * (pts[k].second + pts[k - 1].second);
  return out;
}

}  // namespace agcrf
