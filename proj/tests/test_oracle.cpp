#include <doctest.h>

#include <cmath>

#include "agcrf/oracle.hpp"
#include "support.hpp"

using namespace agcrf;
using namespace agcrf::crf;
using testsupport::random_tensor;

namespace {

GateMap const_gates(int S, int h, int w, double v) {
  GateMap g;
  g.scales = S;
  for (int p = 0; p < pair_count(S); ++p) g.alpha.push_back(Tensor::full({1, h, w}, v));
  return g;
}

// One gate between two single-pixel scales; coupling k on the 0 -> 1 pair.
oracle::TinyInstance single_gate(double f0, double f1, double k, double corner) {
  oracle::TinyInstance t;
  t.scales = ScaleSet::from_features({Tensor::full({1, 1, 1}, f0), Tensor::full({1, 1, 1}, f1)});
  t.bank = KernelBank::zeros({1, 1}, AgcrfConfig::exact());
  t.bank.L[pair_index(2, 0, 1)][4] = k;
  t.corner = corner;
  t.active_pairs = {{0, 1}};
  return t;
}

}  // namespace

TEST_CASE("gauss_solve: known system and singular input") {
  const std::vector<double> A{2, 1, 0, 1, 3, 1, 0, 1, 4};
  const std::vector<double> x{1, -2, 0.5};
  std::vector<double> b(3, 0.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) b[i] += A[i * 3 + j] * x[j];
  const auto got = oracle::gauss_solve(A, b, 3);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(got[i] - x[i]) < 1e-14);
  CHECK_THROWS_AS(oracle::gauss_solve({1, 2, 2, 4}, {1, 1}, 2), oracle::SingularSystemError);
}

TEST_CASE("fixed-gate solve: zero coupling gives f, the 2x2 case gives (8/3, 10/3)") {
  SplitMix64 rng(51);
  ScaleSet s = ScaleSet::from_features({random_tensor(rng, {2, 2, 3}), random_tensor(rng, {1, 2, 3})});
  const KernelBank zero = KernelBank::zeros(s.channels(), AgcrfConfig::exact());
  const auto r0 = oracle::solve_fixed_gate_mean(s, zero, const_gates(2, 2, 3, 1.0));
  CHECK(max_abs_diff(r0.h[0], s.f[0]) == 0.0);
  CHECK(max_abs_diff(r0.h[1], s.f[1]) == 0.0);

  const ScaleSet one = ScaleSet::from_features({Tensor::full({1, 1, 1}, 1.0), Tensor::full({1, 1, 1}, 2.0)});
  KernelBank bank = KernelBank::zeros({1, 1}, AgcrfConfig::exact());
  for (Tensor& L : bank.L) L[4] = 0.5;
  const auto r = oracle::solve_fixed_gate_mean(one, bank, const_gates(2, 1, 1, 1.0));
  CHECK(std::abs(r.h[0][0] - 8.0 / 3.0) < 1e-14);
  CHECK(std::abs(r.h[1][0] - 10.0 / 3.0) < 1e-14);
  CHECK(r.residual <= 1e-9);
}

TEST_CASE("dense system has one unknown per (scale, channel, pixel)") {
  SplitMix64 rng(52);
  const ScaleSet s = ScaleSet::from_features({random_tensor(rng, {3, 2, 2}), random_tensor(rng, {2, 2, 2})});
  const KernelBank bank = KernelBank::zeros(s.channels(), AgcrfConfig::exact());
  const auto sys = oracle::assemble_fixed_gate_system(s, bank, const_gates(2, 2, 2, 0.5));
  CHECK(sys.n == 20);
  CHECK(sys.A.size() == 400u);
  CHECK(sys.scale_offset[1] == 12);
  for (int i = 0; i < sys.n; ++i)
    for (int j = 0; j < sys.n; ++j) CHECK(sys.A[i * sys.n + j] == (i == j ? 1.0 : 0.0));
}

TEST_CASE("zero coupling makes every gate configuration equally likely") {
  SplitMix64 rng(53);
  oracle::TinyInstance t;
  t.scales = ScaleSet::from_features({random_tensor(rng, {1, 2, 2}), random_tensor(rng, {1, 2, 2})});
  t.bank = KernelBank::zeros({1, 1}, AgcrfConfig::exact());
  t.corner = 0.0;
  const auto r = oracle::enumerate_gates(t);
  CHECK(r.gate_count == 8);
  CHECK(r.configurations == 256);
  for (double p : r.probability) CHECK(std::abs(p - 1.0 / 256) < 1e-15);
  for (const Tensor& m : r.marginals.alpha)
    for (double v : m.values()) CHECK(std::abs(v - 0.5) <= 1e-12);
  CHECK(r.evidence_sum_residual <= 1e-10);
}

TEST_CASE("single gate: marginal and mean match the hand-solved Gaussians") {
  const double f0 = 1.0, f1 = 2.0, k = 0.5, corner = 1.0;
  const auto r = oracle::enumerate_gates(single_gate(f0, f1, k, corner));
  REQUIRE(r.configurations == 2);
  // Open gate: quadratic form [[1, -k], [-k, 1]], mean A^-1 f.
  const double det = 1.0 - k * k;
  const double h0 = (f0 + k * f1) / det, h1 = (f1 + k * f0) / det;
  const double log_ratio = corner + 0.5 * (f0 * h0 + f1 * h1) - 0.5 * (f0 * f0 + f1 * f1) - 0.5 * std::log(det);
  const double p = 1.0 / (1.0 + std::exp(-log_ratio));
  CHECK(std::abs(r.marginals.at(0, 1)[0] - p) < 1e-12);
  CHECK(r.marginals.at(1, 0)[0] == 0.0);
  CHECK(std::abs(r.mean_h[0][0] - ((1 - p) * f0 + p * h0)) < 1e-12);
  CHECK(std::abs(r.mean_h[1][0] - ((1 - p) * f1 + p * h1)) < 1e-12);
}

TEST_CASE("mirrored scales and kernels give mirrored gate marginals") {
  SplitMix64 rng(54);
  oracle::TinyInstance t;
  const Tensor f = random_tensor(rng, {1, 1, 2});
  t.scales = ScaleSet::from_features({f, f});
  t.bank = KernelBank::zeros({1, 1}, AgcrfConfig::exact());
  const Tensor L = random_tensor(rng, {1, 1, 3, 3}, -0.2, 0.2), l = random_tensor(rng, {1, 1, 3, 3}, -0.2, 0.2);
  for (int p = 0; p < 2; ++p) {
    t.bank.L[p] = L;
    t.bank.l_er[p] = l;
    t.bank.l_re[p] = l;
  }
  const auto r = oracle::enumerate_gates(t);
  CHECK(max_abs_diff(r.marginals.at(0, 1), r.marginals.at(1, 0)) <= 1e-12);
}

TEST_CASE("strong coupling is rejected as non-normalizable") {
  CHECK_THROWS_AS(oracle::enumerate_gates(single_gate(1.0, 2.0, 1.5, 0.0)), oracle::NonNormalizableError);
}

TEST_CASE("random tiny instances normalize exactly") {
  SplitMix64 rng(55);
  int accepted = 0;
  for (int trial = 0; trial < 200 && accepted < 10; ++trial) {
    oracle::TinyInstance t;
    t.scales = ScaleSet::from_features({random_tensor(rng, {1, 1, 2}), random_tensor(rng, {1, 1, 2})});
    for (auto& a : t.scales.a) a = random_tensor(rng, a.shape(), 1.0, 2.0);
    t.bank = KernelBank::zeros({1, 1}, AgcrfConfig::exact());
    for (auto* v : {&t.bank.L, &t.bank.l_er, &t.bank.l_re})
      for (Tensor& k : *v) k = random_tensor(rng, k.shape(), -0.3, 0.3);
    t.corner = rng.uniform(-0.5, 0.5);
    try {
      const auto r = oracle::enumerate_gates(t);
      ++accepted;
      CHECK(r.evidence_sum_residual <= 1e-10);
      CHECK(r.min_precision_eigenvalue > 0.0);
      for (const Tensor& m : r.marginals.alpha)
        for (double v : m.values()) CHECK((v >= 0.0 && v <= 1.0));
    } catch (const oracle::NonNormalizableError&) {
    }
  }
  CHECK(accepted == 10);
}

TEST_CASE("Jacobi eigenvalues and the Gershgorin test") {
  const auto ev = oracle::symmetric_eigenvalues({2, 1, 1, 2}, 2);
  CHECK(std::abs(ev[0] - 1.0) < 1e-14);
  CHECK(std::abs(ev[1] - 3.0) < 1e-14);
  CHECK(oracle::gershgorin_positive({2, 1, 1, 2}, 2));
  CHECK_FALSE(oracle::gershgorin_positive({1, 1, 1, 1}, 2));
}

TEST_CASE("central differences: exact on linear, second order on quadratic") {
  std::vector<double> x{0.3, -1.2, 2.0};
  const oracle::ScalarFn lin = [](std::span<const double> v) { return 2 * v[0] - 3 * v[1] + 0.5 * v[2]; };
  const auto g = oracle::fd_gradient(lin, x);
  CHECK(std::abs(g[0] - 2.0) < 1e-9);
  CHECK(std::abs(g[1] + 3.0) < 1e-9);
  CHECK(std::abs(g[2] - 0.5) < 1e-9);
  const oracle::ScalarFn quad = [](std::span<const double> v) { return v[0] * v[0] + v[0] * v[1]; };
  const auto q = oracle::fd_gradient(quad, x);
  CHECK(std::abs(q[0] - (2 * x[0] + x[1])) < 1e-9);
  CHECK(std::abs(q[1] - x[0]) < 1e-9);
  CHECK(oracle::relative_error(1.0, 1.0) == 0.0);
  CHECK(oracle::relative_error(100.0, 101.0) == doctest::Approx(1.0 / 101.0));
}
