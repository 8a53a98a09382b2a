#include <doctest.h>

#include <cmath>

#include "agcrf/crf.hpp"
#include "agcrf/oracle.hpp"
#include "support.hpp"

using namespace agcrf;
using namespace agcrf::crf;
using testsupport::random_tensor;

namespace {

// Random exact-mode instance whose fixed-gate update is a contraction.
ScaleSet random_scales(SplitMix64& rng, const std::vector<int>& channels, int h, int w) {
  std::vector<Tensor> f;
  for (int c : channels) f.push_back(random_tensor(rng, {c, h, w}));
  ScaleSet s = ScaleSet::from_features(std::move(f));
  for (auto& a : s.a) a = random_tensor(rng, a.shape(), 1.0, 2.0);
  return s;
}

KernelBank random_bank(SplitMix64& rng, const std::vector<int>& channels, const AgcrfConfig& cfg, double bound) {
  KernelBank b = KernelBank::zeros(channels, cfg);
  for (auto* v : {&b.L, &b.l_er, &b.l_re})
    for (Tensor& t : *v) t = random_tensor(rng, t.shape(), -bound, bound);
  return b;
}

GateMap const_gates(int S, int h, int w, double v) {
  GateMap g;
  g.scales = S;
  for (int p = 0; p < pair_count(S); ++p) g.alpha.push_back(Tensor::full({1, h, w}, v));
  return g;
}

double max_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, max_abs_diff(a[i], b[i]));
  return d;
}

}  // namespace

TEST_CASE("pair indexing is a bijection onto 0..S(S-1)-1") {
  for (int S : {2, 3, 5}) {
    std::vector<int> seen(pair_count(S), 0);
    for (int e = 0; e < S; ++e)
      for (int r = 0; r < S; ++r)
        if (e != r) ++seen.at(pair_index(S, e, r));
    for (int n : seen) CHECK(n == 1);
  }
  CHECK_THROWS(pair_index(3, 1, 1));
}

TEST_CASE("zero conditional weights predict the biases") {
  SplitMix64 rng(31);
  AgcrfConfig cfg = AgcrfConfig::exact();
  cfg.conditional_kernels = true;
  const ScaleSet s = random_scales(rng, {2, 3}, 3, 4);
  CondKernelHeads heads = CondKernelHeads::zeros({2, 3}, cfg);
  for (auto* v : {&heads.b_L, &heads.b_le, &heads.b_lr})
    for (Tensor& t : *v) t = random_tensor(rng, t.shape());
  const KernelBank bank = predict_kernels(heads, s, cfg);
  for (std::size_t p = 0; p < bank.L.size(); ++p)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 4; ++x)
        for (int c = 0; c < bank.L[p].channels(); ++c) CHECK(bank.L[p].at(c, y, x) == heads.b_L[p][c]);
}

TEST_CASE("conditional kernels are affine in the features") {
  SplitMix64 rng(32);
  AgcrfConfig cfg = AgcrfConfig::exact();
  cfg.conditional_kernels = true;
  ScaleSet s = random_scales(rng, {2, 2}, 3, 3);
  CondKernelHeads heads = CondKernelHeads::zeros({2, 2}, cfg);
  for (auto* v : {&heads.W_L, &heads.b_L, &heads.W_le, &heads.b_le, &heads.W_lr, &heads.b_lr})
    for (Tensor& t : *v) t = random_tensor(rng, t.shape());
  const KernelBank k1 = predict_kernels(heads, s, cfg);
  for (auto& h : s.h) h *= 2.0;
  const KernelBank k2 = predict_kernels(heads, s, cfg);
  for (std::size_t p = 0; p < k1.L.size(); ++p) {
    Tensor bias(k1.L[p].shape());
    for (int c = 0; c < bias.channels(); ++c)
      for (int i = 0; i < 9; ++i) bias[c * 9 + i] = heads.b_L[p][c];
    CHECK(max_abs_diff(k2.L[p] - bias, (k1.L[p] - bias) * 2.0) < 1e-12);
  }
}

TEST_CASE("conditional kernels match a dense matrix-vector reconstruction") {
  SplitMix64 rng(33);
  AgcrfConfig cfg = AgcrfConfig::exact();
  cfg.conditional_kernels = true;
  cfg.attention_mode = AttentionMode::PerChannel;
  const ScaleSet s = random_scales(rng, {2, 3, 1}, 2, 3);
  CondKernelHeads heads = CondKernelHeads::zeros(s.channels(), cfg);
  for (auto* v : {&heads.W_L, &heads.b_L, &heads.W_le, &heads.b_le, &heads.W_lr, &heads.b_lr})
    for (Tensor& t : *v) t = random_tensor(rng, t.shape());
  const KernelBank bank = predict_kernels(heads, s, cfg);
  for (int e = 0; e < 3; ++e)
    for (int r = 0; r < 3; ++r) {
      if (e == r) continue;
      const int p = pair_index(3, e, r);
      const Tensor parts[] = {s.h[e], s.h[r]};
      CHECK(max_abs_diff(bank.L[p], oracle::naive_kernel_field(heads.W_L[p], heads.b_L[p], concat_channels(parts))) <
            1e-12);
      CHECK(max_abs_diff(bank.l_er[p], oracle::naive_kernel_field(heads.W_le[p], heads.b_le[p], s.h[e])) < 1e-12);
      CHECK(max_abs_diff(bank.l_re[p], oracle::naive_kernel_field(heads.W_lr[p], heads.b_lr[p], s.h[r])) < 1e-12);
    }
}

TEST_CASE("messages: zero kernel, delta kernel and nested loops") {
  SplitMix64 rng(34);
  const AgcrfConfig cfg = AgcrfConfig::exact();
  const ScaleSet s = random_scales(rng, {2, 2}, 4, 3);
  KernelBank bank = KernelBank::zeros({2, 2}, cfg);
  CHECK(message(0, 1, bank, s).max_abs() == 0.0);
  for (int c = 0; c < 2; ++c) bank.L[pair_index(2, 0, 1)][(c * 2 + c) * 9 + 4] = 1.0;
  CHECK(message(0, 1, bank, s) == s.h[0]);
  bank = random_bank(rng, {2, 2}, cfg, 1.0);
  CHECK(max_abs_diff(message(1, 0, bank, s), oracle::naive_message(1, 0, bank, s)) < 1e-12);
}

TEST_CASE("attention: sigma(0) = 0.5, sigma of the logits, term by term") {
  SplitMix64 rng(35);
  AgcrfConfig cfg = AgcrfConfig::exact();
  ScaleSet zero = ScaleSet::from_features({Tensor({1, 2, 2}), Tensor({1, 2, 2})});
  const KernelBank zb = KernelBank::zeros({1, 1}, cfg);
  const Tensor half = attention(0, 1, zb, zero, cfg);
  for (double v : half.values()) CHECK(v == 0.5);

  for (Variant var : {Variant::Flag, Variant::Plag})
    for (int sign : {+1, -1}) {
      cfg.variant = var;
      cfg.attention_sign = sign;
      ScaleSet s = random_scales(rng, {1, 1}, 2, 2);
      for (auto& h : s.h) h = random_tensor(rng, h.shape());
      const KernelBank bank = random_bank(rng, {1, 1}, cfg, 1.0);
      const Tensor m = attention_logits(0, 1, bank, s, cfg);
      CHECK(max_abs_diff(m, oracle::naive_attention_logits(0, 1, bank, s, cfg)) < 1e-12);
      const Tensor a = attention(0, 1, bank, s, cfg);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - 1.0 / (1.0 + std::exp(-sign * m[i]))) < 1e-15);
    }
}

TEST_CASE("zero pairwise kernels collapse the update to f") {
  SplitMix64 rng(36);
  for (Variant var : {Variant::Flag, Variant::Plag}) {
    AgcrfConfig cfg = AgcrfConfig::exact(1);
    cfg.variant = var;
    ScaleSet s = random_scales(rng, {2, 1, 3}, 3, 3);
    for (auto& h : s.h) h = random_tensor(rng, h.shape());
    AgcrfParams params;
    params.shared = KernelBank::zeros(s.channels(), cfg);
    const InferResult r = infer(s, params, cfg);
    CHECK(max_diff(r.scales.h, s.f) == 0.0);
    for (const Tensor& a : r.gates.alpha)
      for (double v : a.values()) CHECK(v == 0.5);
  }
}

TEST_CASE("two-scale single-pixel fixed point is (8/3, 10/3)") {
  ScaleSet s = ScaleSet::from_features({Tensor::full({1, 1, 1}, 1.0), Tensor::full({1, 1, 1}, 2.0)});
  KernelBank bank = KernelBank::zeros({1, 1}, AgcrfConfig::exact());
  for (Tensor& L : bank.L) L[4] = 0.5;
  const GateMap gates = const_gates(2, 1, 1, 1.0);
  int steps = 0;
  while (steps < 50 && std::abs(s.h[0][0] - 8.0 / 3.0) + std::abs(s.h[1][0] - 10.0 / 3.0) > 1e-10) {
    s = mean_field_step(s, bank, gates, AgcrfConfig::exact());
    ++steps;
  }
  CHECK(steps <= 50);
  CHECK(std::abs(s.h[0][0] - 8.0 / 3.0) < 1e-9);
  CHECK(std::abs(s.h[1][0] - 10.0 / 3.0) < 1e-9);
}

TEST_CASE("fixed-gate iteration converges to the direct linear solve") {
  SplitMix64 rng(37);
  const AgcrfConfig cfg = AgcrfConfig::exact();
  for (int trial = 0; trial < 10; ++trial) {
    const int S = rng.range(2, 3);
    std::vector<int> ch;
    for (int i = 0; i < S; ++i) ch.push_back(rng.range(1, 4));
    const int h = rng.range(1, 4), w = rng.range(1, 4);
    ScaleSet s = random_scales(rng, ch, h, w);
    const KernelBank bank = random_bank(rng, ch, cfg, 0.8 / (9.0 * 4 * (S - 1)));
    GateMap g = const_gates(S, h, w, 0.0);
    for (Tensor& a : g.alpha) a = random_tensor(rng, a.shape(), 0.0, 1.0);
    const auto exact = oracle::solve_fixed_gate_mean(s, bank, g);
    for (int it = 0; it < 300; ++it) s = mean_field_step(s, bank, g, cfg);
    CHECK(max_diff(s.h, exact.h) < 1e-6);
  }
}

TEST_CASE("FLAG and PLAG agree when every linear kernel is zero") {
  SplitMix64 rng(38);
  AgcrfConfig cfg = AgcrfConfig::exact(40);
  const ScaleSet s = random_scales(rng, {2, 2, 1}, 3, 3);
  AgcrfParams params;
  params.shared = random_bank(rng, s.channels(), cfg, 0.05);
  for (auto* v : {&params.shared.l_er, &params.shared.l_re})
    for (Tensor& t : *v) t = Tensor::zeros(t.shape());
  const InferResult flag = infer(s, params, cfg);
  cfg.variant = Variant::Plag;
  const InferResult plag = infer(s, params, cfg);
  CHECK(max_diff(flag.scales.h, plag.scales.h) < 1e-9);
}

TEST_CASE("conditional kernels with zero weights reproduce shared kernels") {
  SplitMix64 rng(39);
  AgcrfConfig cfg = AgcrfConfig::exact();
  cfg.attention_mode = AttentionMode::PerChannel;
  const ScaleSet s = random_scales(rng, {2, 3}, 4, 4);
  AgcrfParams shared, cond;
  shared.shared = random_bank(rng, s.channels(), cfg, 0.1);
  cond.heads = CondKernelHeads::from_shared(shared.shared);
  AgcrfConfig ck = cfg;
  ck.conditional_kernels = true;
  for (int T = 1; T <= 5; ++T) {
    cfg.iterations = ck.iterations = T;
    CHECK(max_diff(infer(s, shared, cfg).scales.h, infer(s, cond, ck).scales.h) <= 1e-12 * T);
  }
}

TEST_CASE("mirroring features and kernels mirrors the result") {
  SplitMix64 rng(40);
  AgcrfConfig cfg = AgcrfConfig::exact(3);
  const ScaleSet s = random_scales(rng, {2, 1}, 3, 5);
  AgcrfParams p;
  p.shared = random_bank(rng, s.channels(), cfg, 0.1);
  ScaleSet ms = s;
  for (auto* v : {&ms.f, &ms.h, &ms.a})
    for (Tensor& t : *v) t = mirror_x(t);
  AgcrfParams mp = p;
  for (auto* v : {&mp.shared.L, &mp.shared.l_er, &mp.shared.l_re})
    for (Tensor& t : *v) t = mirror_x(t);
  const InferResult a = infer(s, p, cfg), b = infer(ms, mp, cfg);
  for (std::size_t i = 0; i < a.scales.h.size(); ++i) CHECK(max_abs_diff(mirror_x(a.scales.h[i]), b.scales.h[i]) < 1e-12);
  for (std::size_t i = 0; i < a.gates.alpha.size(); ++i)
    CHECK(max_abs_diff(mirror_x(a.gates.alpha[i]), b.gates.alpha[i]) < 1e-12);
}

TEST_CASE("gates stay strictly inside (0, 1)") {
  SplitMix64 rng(41);
  for (double x : {-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6}) {
    CHECK(gate_sigmoid(x) > 0.0);
    CHECK(gate_sigmoid(x) < 1.0);
  }
  for (int i = 0; i < 10000; ++i) {
    const double v = gate_sigmoid(rng.uniform(-1e3, 1e3));
    CHECK((v > 0.0 && v < 1.0));
  }
}

TEST_CASE("energy: zero gates and the loop oracle") {
  SplitMix64 rng(42);
  const AgcrfConfig cfg = AgcrfConfig::exact();
  ScaleSet s = random_scales(rng, {2, 1}, 2, 3);
  const KernelBank bank = random_bank(rng, s.channels(), cfg, 1.0);
  const GateMap off = const_gates(2, 2, 3, 0.0);
  CHECK(energy(s, off, bank, Variant::Flag) == 0.0);
  for (auto& h : s.h) h = random_tensor(rng, h.shape());
  double quad = 0.0;
  for (int sc = 0; sc < 2; ++sc)
    for (int c = 0; c < s.h[sc].channels(); ++c)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x) {
          const double d = s.h[sc].at(c, y, x) - s.f[sc].at(c, y, x);
          quad -= 0.5 * s.a[sc].at(0, y, x) * d * d;
        }
  CHECK(std::abs(energy(s, off, bank, Variant::Flag) - quad) < 1e-12);
  GateMap g = const_gates(2, 2, 3, 0.0);
  for (Tensor& a : g.alpha)
    for (double& v : a.values()) v = rng.below(2) ? 1.0 : 0.0;
  for (Variant var : {Variant::Flag, Variant::Plag})
    CHECK(std::abs(energy(s, g, bank, var, 0.7) - oracle::naive_energy(s, g, bank, var, 0.7)) < 1e-12);
}

TEST_CASE("runaway iterations trip the divergence detector") {
  ScaleSet s = ScaleSet::from_features({Tensor::full({1, 2, 2}, 1.0), Tensor::full({1, 2, 2}, 1.0)});
  AgcrfConfig cfg = AgcrfConfig::exact(200);
  cfg.gates = GateOverride::Open;
  AgcrfParams p;
  p.shared = KernelBank::zeros({1, 1}, cfg);
  for (Tensor& L : p.shared.L) L = Tensor::full(L.shape(), 2.0);
  CHECK_THROWS_AS(infer(s, p, cfg), DivergenceError);
  cfg.damping = 0.0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("end-to-end gradients through inference match finite differences") {
  SplitMix64 rng(43);
  for (bool ck : {false, true})
    for (Variant var : {Variant::Flag, Variant::Plag}) {
      AgcrfConfig cfg = AgcrfConfig::exact(2);
      cfg.variant = var;
      cfg.conditional_kernels = ck;
      const ScaleSet s0 = random_scales(rng, {1, 2}, 2, 2);
      const KernelBank b0 = random_bank(rng, s0.channels(), cfg, 0.2);
      const CondKernelHeads h0 = [&] {
        CondKernelHeads h = CondKernelHeads::from_shared(b0);
        for (Tensor& t : h.W_L) t = random_tensor(rng, t.shape(), -0.05, 0.05);
        return h;
      }();
      const Tensor w0 = random_tensor(rng, s0.f[0].shape()), w1 = random_tensor(rng, s0.f[1].shape());

      // Differentiate with respect to f_1 and the first pair's L (or W_L).
      Tape tape;
      ScaleVars sv = lift(tape, s0, true);
      sv.h = sv.f;
      ParamVars pv;
      if (ck) pv.heads = lift(tape, h0, true);
      else pv.shared = lift(tape, b0, true);
      const InferVars r = infer(sv, pv, cfg);
      tape.backward(sum(r.h[0] * tape.constant(w0)) + sum(r.h[1] * tape.constant(w1)));
      const Var kv = ck ? pv.heads.W_L[0] : pv.shared.L[0];
      const Tensor gf = tape.grad(sv.f[1]), gk = tape.grad(kv);

      auto loss_at = [&](const Tensor& f1, const Tensor& k) {
        ScaleSet s = s0;
        s.f[1] = f1;
        s.h = s.f;
        AgcrfParams p;
        p.shared = b0;
        p.heads = h0;
        (ck ? p.heads.W_L[0] : p.shared.L[0]) = k;
        const InferResult res = infer(s, p, cfg);
        return dot(res.scales.h[0], w0) + dot(res.scales.h[1], w1);
      };
      const Tensor k0 = ck ? h0.W_L[0] : b0.L[0];
      const oracle::ScalarFn lf = [&](std::span<const double> v) {
        return loss_at(Tensor(s0.f[1].shape(), std::vector<double>(v.begin(), v.end())), k0);
      };
      const oracle::ScalarFn lk = [&](std::span<const double> v) {
        return loss_at(s0.f[1], Tensor(k0.shape(), std::vector<double>(v.begin(), v.end())));
      };
      const auto ff = oracle::fd_gradient(lf, s0.f[1].values());
      const auto fk = oracle::fd_gradient(lk, k0.values());
      for (std::size_t i = 0; i < ff.size(); ++i) CHECK(oracle::relative_error(gf[i], ff[i]) < 1e-6);
      for (std::size_t i = 0; i < fk.size(); ++i) CHECK(oracle::relative_error(gk[i], fk[i]) < 1e-6);
    }
}
