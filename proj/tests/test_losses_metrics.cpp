#include <doctest.h>

#include <cmath>

#include "agcrf/losses.hpp"
#include "agcrf/metrics.hpp"
#include "support.hpp"

using namespace agcrf;
using testsupport::random_tensor;

namespace {

Tensor map1(int h, int w, std::vector<double> v) { return Tensor({1, h, w}, std::move(v)); }

Tensor binary(SplitMix64& rng, int h, int w, double p) {
  Tensor t({1, h, w});
  for (double& v : t.values()) v = rng.uniform() < p ? 1.0 : 0.0;
  return t;
}

// Straightforward greedy matcher: raster-ordered predictions, nearest free truth
// pixel, raster order on ties.
std::size_t greedy_matches(const Tensor& pred, const Tensor& truth, int radius) {
  const int H = pred.height(), W = pred.width();
  std::vector<bool> used(truth.size(), false);
  std::size_t matched = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (pred.at(0, y, x) == 0.0) continue;
      int best = -1;
      double best_d = 1e300;
      for (int ty = 0; ty < H; ++ty)
        for (int tx = 0; tx < W; ++tx) {
          const int idx = ty * W + tx;
          if (truth[idx] == 0.0 || used[idx]) continue;
          const double d = std::hypot(ty - y, tx - x);
          if (d <= radius && d < best_d) {
            best_d = d;
            best = idx;
          }
        }
      if (best >= 0) {
        used[best] = true;
        ++matched;
      }
    }
  return matched;
}

}  // namespace

TEST_CASE("balanced BCE: the 4-pixel hand case") {
  const Tensor p = map1(2, 2, {0.9, 0.8, 0.3, 0.1});
  const Tensor e = map1(2, 2, {1, 1, 0, 0});
  const double expect = -0.5 * (std::log(0.9) + std::log(0.8)) - 0.5 * (std::log(0.7) + std::log(0.9));
  CHECK(std::abs(balanced_bce(p, e) - expect) < 1e-15);
  CHECK(std::abs(balanced_bce(p, e) - 0.3952698) < 1e-7);
  CHECK(bce_beta(e, false) == 0.5);
}

TEST_CASE("balanced BCE: beta weighting, clamping and the HED swap") {
  const Tensor e = map1(1, 4, {1, 0, 0, 0});
  const Tensor p = map1(1, 4, {0.6, 0.2, 0.1, 0.4});
  const double pos = -std::log(0.6), neg = -(std::log(0.8) + std::log(0.9) + std::log(0.6));
  CHECK(std::abs(balanced_bce(p, e) - (0.25 * pos + 0.75 * neg)) < 1e-14);
  CHECK(std::abs(balanced_bce(p, e, true) - (0.75 * pos + 0.25 * neg)) < 1e-14);
  CHECK(balanced_bce(map1(1, 4, {1, 0, 0, 0}), e) <= 4 * 2.8e-11);
  CHECK_THROWS_AS(balanced_bce(p, map1(1, 4, {1, 0.5, 0, 0})), std::invalid_argument);
}

TEST_CASE("balanced BCE with no positives ignores positive-pixel predictions") {
  Tape tape;
  const Tensor e = map1(1, 3, {0, 0, 0});
  CHECK(bce_beta(e, false) == 0.0);
  Var p = tape.parameter(map1(1, 3, {0.2, 0.5, 0.7}));
  tape.backward(balanced_bce(p, e));
  const Tensor g = tape.grad(p);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(g[i] - 1.0 / (1.0 - p.value()[i])) < 1e-12);
  // Swapped weights on an all-positive target put weight 0 on the positives.
  Tape t2;
  const Tensor e2 = map1(1, 2, {1, 1});
  CHECK(bce_beta(e2, true) == 0.0);
  Var q = t2.parameter(map1(1, 2, {0.3, 0.4}));
  t2.backward(balanced_bce(q, e2, true));
  CHECK(t2.grad(q)[0] == 0.0);
  CHECK(t2.grad(q)[1] == 0.0);
}

TEST_CASE("balanced BCE is permutation invariant and doubles with duplication") {
  SplitMix64 rng(61);
  const Tensor p = random_tensor(rng, {1, 3, 4}, 0.05, 0.95);
  const Tensor e = binary(rng, 3, 4, 0.3);
  Tensor pr({1, 3, 4}), er({1, 3, 4});
  for (std::size_t i = 0; i < 12; ++i) {
    pr[i] = p[11 - i];
    er[i] = e[11 - i];
  }
  CHECK(std::abs(balanced_bce(p, e) - balanced_bce(pr, er)) < 1e-12);
  const Tensor pp = Tensor({1, 6, 4}, [&] {
    std::vector<double> v(p.raw());
    v.insert(v.end(), p.raw().begin(), p.raw().end());
    return v;
  }());
  const Tensor ee = Tensor({1, 6, 4}, [&] {
    std::vector<double> v(e.raw());
    v.insert(v.end(), e.raw().begin(), e.raw().end());
    return v;
  }());
  CHECK(std::abs(balanced_bce(pp, ee) - 2 * balanced_bce(p, e)) < 1e-12);
}

TEST_CASE("l2 loss: equality, constant offset, masked loop") {
  SplitMix64 rng(62);
  const Tensor t = random_tensor(rng, {1, 3, 3});
  const Tensor all = Tensor::full({1, 3, 3}, 1.0);
  CHECK(l2_loss(t, t, all) == 0.0);
  CHECK(std::abs(l2_loss(t + Tensor::full({1, 3, 3}, 0.4), t, all) - 0.16) < 1e-15);
  const Tensor p = random_tensor(rng, {1, 3, 3});
  const Tensor m = binary(rng, 3, 3, 0.5);
  double s = 0.0;
  int n = 0;
  for (int i = 0; i < 9; ++i)
    if (m[i] != 0.0) {
      s += (p[i] - t[i]) * (p[i] - t[i]);
      ++n;
    }
  CHECK(std::abs(l2_loss(p, t, m) - (n ? s / n : 0.0)) < 1e-14);
  CHECK(l2_loss(p, t, Tensor({1, 3, 3})) == 0.0);
}

TEST_CASE("cross-entropy: uniform logits give ln K, confident logits give ~0") {
  for (int K : {2, 3, 7}) {
    const Tensor labels = map1(2, 2, {0, 1, 0, 1});
    CHECK(std::abs(ce_loss(Tensor::full({K, 2, 2}, 0.37), labels) - std::log(K)) < 1e-12);
  }
  Tensor logits({3, 1, 2});
  logits.at(2, 0, 0) = 200;
  logits.at(0, 0, 1) = 200;
  CHECK(ce_loss(logits, map1(1, 2, {2, 0})) < 1e-12);
  // The ignore label drops a pixel from the mean.
  CHECK(ce_loss(logits, map1(1, 2, {2, kIgnoreLabel})) < 1e-12);
}

TEST_CASE("cross-entropy matches a scalar loop") {
  SplitMix64 rng(63);
  const Tensor logits = random_tensor(rng, {4, 3, 3}, -3, 3);
  Tensor labels({1, 3, 3});
  for (double& v : labels.values()) v = static_cast<double>(rng.below(4));
  labels[4] = kIgnoreLabel;
  double s = 0.0;
  int n = 0;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) {
      const int lab = static_cast<int>(labels.at(0, y, x));
      if (lab == kIgnoreLabel) continue;
      double z = 0.0;
      for (int k = 0; k < 4; ++k) z += std::exp(logits.at(k, y, x));
      s += std::log(z) - logits.at(lab, y, x);
      ++n;
    }
  CHECK(std::abs(ce_loss(logits, labels) - s / n) < 1e-12);
}

TEST_CASE("depth metrics: identity, 1.3x scaling, the 3-pixel hand case") {
  const Tensor t = map1(1, 3, {1, 2, 4});
  const Tensor m = Tensor::full({1, 1, 3}, 1.0);
  const DepthMetrics same = depth_metrics(t, t, m);
  CHECK(same.rel == 0.0);
  CHECK(same.rmse == 0.0);
  CHECK(same.log10 == 0.0);
  CHECK(same.delta1 == 1.0);
  CHECK(same.delta3 == 1.0);

  const DepthMetrics s13 = depth_metrics(t * 1.3, t, m);
  CHECK(s13.delta1 == 0.0);
  CHECK(s13.delta2 == 1.0);
  CHECK(std::abs(s13.rel - 0.3) < 1e-12);

  const DepthMetrics h = depth_metrics(map1(1, 3, {1.1, 1.8, 5}), t, m);
  CHECK(std::abs(h.rel - 0.15) < 1e-9);
  CHECK(std::abs(h.rmse - std::sqrt(1.05 / 3)) < 1e-9);
  CHECK(std::abs(h.rmse - 0.5916) < 1e-4);
  CHECK(h.count == 3u);
}

TEST_CASE("depth metrics skip masked pixels and pool across images") {
  const Tensor t = map1(1, 4, {1, 2, 4, 8});
  const Tensor p = map1(1, 4, {1.1, 1.8, 5, 100});
  const DepthMetrics masked = depth_metrics(p, t, map1(1, 4, {1, 1, 1, 0}));
  CHECK(std::abs(masked.rel - 0.15) < 1e-12);
  DepthAccumulator acc;
  acc.add(map1(1, 1, {1.1}), map1(1, 1, {1}), map1(1, 1, {1}));
  acc.add(map1(1, 2, {1.8, 5}), map1(1, 2, {2, 4}), map1(1, 2, {1, 1}));
  CHECK(std::abs(acc.result().rel - 0.15) < 1e-12);
}

TEST_CASE("segmentation metrics: perfect, disjoint, 3-class hand count") {
  const Tensor t = map1(2, 2, {0, 1, 1, 2});
  const SegMetrics perfect = seg_metrics(t, t, 3);
  CHECK(perfect.pix_acc == 1.0);
  CHECK(perfect.miou == 1.0);
  const SegMetrics wrong = seg_metrics(map1(1, 2, {1, 1}), map1(1, 2, {0, 0}), 2);
  CHECK(wrong.pix_acc == 0.0);
  CHECK(wrong.miou == 0.0);

  // truth / prediction over 16 pixels:
  //   class 0: 6 pixels, 5 right, 1 -> class 1
  //   class 1: 5 pixels, 3 right, 2 -> class 2
  //   class 2: 5 pixels, 4 right, 1 -> class 0
  const Tensor truth = map1(4, 4, {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2});
  const Tensor pred = map1(4, 4, {0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 0});
  const SegMetrics s = seg_metrics(pred, truth, 3);
  CHECK(std::abs(s.pix_acc - 12.0 / 16) < 1e-15);
  // IoU_k = tp / (truth_k + pred_k - tp): 5/(6+6-5), 3/(5+4-3), 4/(5+6-4).
  CHECK(std::abs(s.miou - (5.0 / 7 + 3.0 / 6 + 4.0 / 7) / 3) < 1e-15);
  ConfusionMatrix cm(3);
  cm.add(pred, truth);
  CHECK(cm.at(0, 1) == 1u);
  CHECK(cm.at(1, 2) == 2u);
  CHECK(cm.at(2, 0) == 1u);
}

TEST_CASE("argmax over channels takes the first maximum") {
  Tensor s({3, 1, 2});
  s.at(1, 0, 0) = 2;
  s.at(2, 0, 0) = 2;
  s.at(0, 0, 1) = -1;
  s.at(1, 0, 1) = -1;
  s.at(2, 0, 1) = -0.5;
  const Tensor a = argmax_channels(s);
  CHECK(a[0] == 1.0);
  CHECK(a[1] == 2.0);
}

TEST_CASE("F-measure: perfect thin prediction and empty prediction") {
  Tensor gt({1, 8, 8});
  for (int y = 0; y < 8; ++y) gt.at(0, y, 3) = 1.0;
  const std::vector<Tensor> truths{gt};
  const FMeasure perfect = f_measure(std::vector<Tensor>{gt}, truths);
  CHECK(perfect.ods == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(perfect.ois == doctest::Approx(1.0).epsilon(1e-12));
  const FMeasure none = f_measure(std::vector<Tensor>{Tensor({1, 8, 8})}, truths);
  CHECK(none.ods == 0.0);
  CHECK(none.ois == 0.0);
}

TEST_CASE("F-measure: one-pixel shift inside the tolerance, two outside") {
  CHECK(default_tolerance(8, 8) == 1);
  Tensor gt({1, 8, 8}), near({1, 8, 8}), far({1, 8, 8});
  for (int y = 0; y < 8; ++y) {
    gt.at(0, y, 3) = 1.0;
    near.at(0, y, 4) = 1.0;
    far.at(0, y, y < 4 ? 3 : 5) = 1.0;
  }
  const std::vector<Tensor> truths{gt};
  CHECK(f_measure(std::vector<Tensor>{near}, truths).ods == doctest::Approx(1.0).epsilon(1e-12));
  // Half the far line sits on the truth: P = R = 4/8.
  CHECK(greedy_matches(far, gt, 1) == 4u);
  const MatchCounts c = match_edges(far, gt, 1);
  CHECK(c.matched == 4u);
  CHECK(f_from_counts(c) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(f_measure(std::vector<Tensor>{far}, truths).ods == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("greedy matching agrees with a brute-force matcher on random maps") {
  SplitMix64 rng(64);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = binary(rng, 8, 8, 0.2), t = binary(rng, 8, 8, 0.2);
    const int r = rng.range(1, 2);
    CHECK(match_edges(p, t, r).matched == greedy_matches(p, t, r));
  }
}

TEST_CASE("F from counts conventions") {
  CHECK(f_from_counts({0, 3, 0}) == 0.0);
  CHECK(f_from_counts({0, 0, 0}) == 1.0);
  CHECK(f_from_counts({0, 0, 5}) == 0.0);
  CHECK(f_from_counts({2, 4, 2}) == doctest::Approx(2.0 / 3.0));
}
