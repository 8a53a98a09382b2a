#include <algorithm>
#include <cmath>
#include <cstdio>

#include "agcrf/app.hpp"
#include "agcrf/ops.hpp"
#include "agcrf/oracle.hpp"
#include "agcrf/rng.hpp"

namespace agcrf::app {
namespace {

Tensor random_tensor(SplitMix64& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

CheckRow row(std::string name, double value, double tol, std::string note = "") {
  return {std::move(name), value <= tol, value, tol, std::move(note)};
}

// Random shared-kernel instance. Kernel magnitudes are scaled so the
// fixed-gate iteration is a contraction.
struct Instance {
  crf::ScaleSet scales;
  crf::KernelBank bank;
  crf::GateMap gates;
};

Instance random_instance(SplitMix64& rng, int S, int max_c, int h, int w, const crf::AgcrfConfig& cfg) {
  Instance in;
  std::vector<Tensor> f;
  std::vector<int> channels;
  for (int s = 0; s < S; ++s) {
    channels.push_back(rng.range(1, max_c));
    f.push_back(random_tensor(rng, {channels.back(), h, w}, -1, 1));
  }
  in.scales = crf::ScaleSet::from_features(std::move(f));
  for (auto& a : in.scales.a) a = random_tensor(rng, a.shape(), 1.0, 2.0);
  for (int s = 0; s < S; ++s) in.scales.h[s] = random_tensor(rng, in.scales.f[s].shape(), -1, 1);
  in.bank = crf::KernelBank::zeros(channels, cfg);
  const double bound = 0.8 / (9.0 * max_c * (S - 1));
  for (auto* v : {&in.bank.L, &in.bank.l_er, &in.bank.l_re})
    for (Tensor& t : *v) t = random_tensor(rng, t.shape(), -bound, bound);
  in.gates.mode = crf::AttentionMode::Scalar;
  in.gates.scales = S;
  for (int p = 0; p < crf::pair_count(S); ++p) in.gates.alpha.push_back(random_tensor(rng, {1, h, w}, 0.0, 1.0));
  return in;
}

double max_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, max_abs_diff(a[i], b[i]));
  return d;
}

CheckRow check_ops(SplitMix64& rng) {
  double err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int ci = rng.range(1, 3), co = rng.range(1, 3), s = rng.range(1, 2), p = rng.range(0, 1);
    const int kc = 2 * rng.range(0, 1) + 1;  // conv2d takes odd kernels that tile exactly
    const int hc = (rng.range(1, 4) - 1) * s + kc - 2 * p;
    if (hc >= 1) {
      const Tensor x = random_tensor(rng, {ci, hc, hc + s}, -1, 1);
      const Tensor w = random_tensor(rng, {co, ci, kc, kc}, -1, 1);
      err = std::max(err, max_abs_diff(conv2d(x, w, s, p), oracle::naive_conv2d(x, w, s, p)));
    }
    const int kd = rng.range(std::max(1, 2 * p + 1), 4);
    const Tensor xd = random_tensor(rng, {ci, rng.range(1, 4), rng.range(1, 4)}, -1, 1);
    const Tensor wd = random_tensor(rng, {ci, co, kd, kd}, -1, 1);
    err = std::max(err, max_abs_diff(deconv2d(xd, wd, s, p), oracle::naive_deconv2d(xd, wd, s, p)));
    const Tensor xp = random_tensor(rng, {ci, 2 * rng.range(1, 3), 2 * rng.range(1, 3)}, -1, 1);
    err = std::max(err, max_abs_diff(maxpool2d(xp, 2, 2).output, oracle::naive_maxpool2d(xp, 2, 2)));
  }
  return row("conv/deconv/pool vs loops", err, 1e-12);
}

CheckRow check_crf_terms(SplitMix64& rng) {
  double err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    crf::AgcrfConfig cfg = crf::AgcrfConfig::exact();
    cfg.attention_mode = trial % 2 ? crf::AttentionMode::PerChannel : crf::AttentionMode::Scalar;
    cfg.variant = trial % 4 < 2 ? crf::Variant::Flag : crf::Variant::Plag;
    const int S = rng.range(2, 3);
    Instance in = random_instance(rng, S, 3, rng.range(1, 4), rng.range(1, 4), cfg);
    for (int e = 0; e < S; ++e)
      for (int r = 0; r < S; ++r) {
        if (e == r) continue;
        err = std::max(err, max_abs_diff(crf::message(e, r, in.bank, in.scales),
                                         oracle::naive_message(e, r, in.bank, in.scales)));
        err = std::max(err, max_abs_diff(crf::attention_logits(e, r, in.bank, in.scales, cfg),
                                         oracle::naive_attention_logits(e, r, in.bank, in.scales, cfg)));
      }
  }
  return row("message and attention vs loops", err, 1e-12);
}

CheckRow check_conditional(SplitMix64& rng) {
  double err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    crf::AgcrfConfig cfg = crf::AgcrfConfig::exact();
    cfg.conditional_kernels = true;
    const int S = rng.range(2, 3);
    Instance in = random_instance(rng, S, 2, 3, 3, cfg);
    crf::CondKernelHeads heads = crf::CondKernelHeads::zeros(in.scales.channels(), cfg);
    for (auto* v : {&heads.W_L, &heads.b_L, &heads.W_le, &heads.b_le, &heads.W_lr, &heads.b_lr})
      for (Tensor& t : *v) t = random_tensor(rng, t.shape(), -0.2, 0.2);
    const crf::KernelBank bank = crf::predict_kernels(heads, in.scales, cfg);
    for (int e = 0; e < S; ++e)
      for (int r = 0; r < S; ++r) {
        if (e == r) continue;
        const int p = crf::pair_index(S, e, r);
        const Tensor parts[] = {in.scales.h[e], in.scales.h[r]};
        err = std::max(err, max_abs_diff(bank.L[p], oracle::naive_kernel_field(heads.W_L[p], heads.b_L[p],
                                                                                concat_channels(parts))));
        err = std::max(err, max_abs_diff(bank.l_er[p],
                                         oracle::naive_kernel_field(heads.W_le[p], heads.b_le[p], in.scales.h[e])));
        err = std::max(err, max_abs_diff(crf::message(e, r, bank, in.scales),
                                         oracle::naive_message(e, r, bank, in.scales)));
      }
  }
  return row("conditional kernels vs loops", err, 1e-12);
}

CheckRow check_energy(SplitMix64& rng) {
  double err = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const crf::AgcrfConfig cfg = crf::AgcrfConfig::exact();
    Instance in = random_instance(rng, rng.range(2, 3), 2, 3, 2, cfg);
    for (Tensor& g : in.gates.alpha)
      for (double& v : g.values()) v = v < 0.5 ? 0.0 : 1.0;
    const crf::Variant var = trial % 2 ? crf::Variant::Plag : crf::Variant::Flag;
    const double a = crf::energy(in.scales, in.gates, in.bank, var, 1.0);
    const double b = oracle::naive_energy(in.scales, in.gates, in.bank, var, 1.0);
    err = std::max(err, std::abs(a - b) / std::max(1.0, std::abs(b)));
  }
  return row("energy vs loops", err, 1e-12);
}

// Iterates the update with frozen gates until it stops moving.
std::vector<Tensor> iterate_fixed(crf::ScaleSet s, const crf::KernelBank& bank, const crf::GateMap& gates,
                                  int max_iter, int* used = nullptr) {
  const crf::AgcrfConfig cfg = crf::AgcrfConfig::exact();
  int it = 0;
  for (; it < max_iter; ++it) {
    crf::ScaleSet next = crf::mean_field_step(s, bank, gates, cfg);
    const double d = max_diff(next.h, s.h);
    s = std::move(next);
    if (d == 0.0) break;
  }
  if (used) *used = it;
  return s.h;
}

crf::ScaleSet two_scale_pixel(crf::KernelBank& bank, crf::GateMap& gates) {
  crf::ScaleSet s = crf::ScaleSet::from_features({Tensor::full({1, 1, 1}, 1.0), Tensor::full({1, 1, 1}, 2.0)});
  bank = crf::KernelBank::zeros({1, 1}, crf::AgcrfConfig::exact());
  for (Tensor& L : bank.L) L[4] = 0.5;
  gates.mode = crf::AttentionMode::Scalar;
  gates.scales = 2;
  gates.alpha = {Tensor::full({1, 1, 1}, 1.0), Tensor::full({1, 1, 1}, 1.0)};
  return s;
}

std::vector<CheckRow> check_fixed_gate(SplitMix64& rng) {
  std::vector<CheckRow> rows;
  crf::KernelBank bank;
  crf::GateMap gates;
  const crf::ScaleSet s = two_scale_pixel(bank, gates);
  const auto exact = oracle::solve_fixed_gate_mean(s, bank, gates);
  const double direct = std::max(std::abs(exact.h[0][0] - 8.0 / 3.0), std::abs(exact.h[1][0] - 10.0 / 3.0));
  rows.push_back(row("fixed gate 2x2 direct solve", direct, 1e-12, "(8/3, 10/3)"));
  int used = 0;
  const auto h = iterate_fixed(s, bank, gates, 50, &used);
  const double it = std::max(std::abs(h[0][0] - 8.0 / 3.0), std::abs(h[1][0] - 10.0 / 3.0));
  rows.push_back(row("fixed gate 2x2 mean field", it, 1e-9, std::to_string(used) + " iterations"));

  double worst = 0.0, residual = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int S = rng.range(2, 3);
    Instance in = random_instance(rng, S, 4, rng.range(1, 4), rng.range(1, 4), crf::AgcrfConfig::exact());
    in.scales.h = in.scales.f;
    const auto sol = oracle::solve_fixed_gate_mean(in.scales, in.bank, in.gates);
    residual = std::max(residual, sol.residual);
    worst = std::max(worst, max_diff(iterate_fixed(in.scales, in.bank, in.gates, 2000), sol.h));
  }
  rows.push_back(row("fixed gate random x50", worst, 1e-6));
  rows.push_back(row("fixed gate solve residual", residual, 1e-9));
  return rows;
}

oracle::TinyInstance random_tiny(SplitMix64& rng) {
  oracle::TinyInstance t;
  const int S = 2, h = rng.range(1, 2), w = rng.range(1, 2);
  std::vector<Tensor> f;
  for (int s = 0; s < S; ++s) f.push_back(random_tensor(rng, {1, h, w}, -1, 1));
  t.scales = crf::ScaleSet::from_features(std::move(f));
  for (auto& a : t.scales.a) a = random_tensor(rng, a.shape(), 1.0, 2.0);
  t.bank = crf::KernelBank::zeros({1, 1}, crf::AgcrfConfig::exact());
  for (auto* v : {&t.bank.L, &t.bank.l_er, &t.bank.l_re})
    for (Tensor& k : *v) k = random_tensor(rng, k.shape(), -0.3, 0.3);
  t.variant = rng.below(2) ? crf::Variant::Plag : crf::Variant::Flag;
  t.corner = rng.uniform(-0.5, 0.5);
  return t;
}

std::vector<CheckRow> check_gates(SplitMix64& rng) {
  std::vector<CheckRow> rows;
  {
    // Zero kernels (corner included): every configuration has the same evidence.
    oracle::TinyInstance t = random_tiny(rng);
    for (auto* v : {&t.bank.L, &t.bank.l_er, &t.bank.l_re})
      for (Tensor& k : *v) k = Tensor::zeros(k.shape());
    t.corner = 0.0;
    const auto r = oracle::enumerate_gates(t);
    double d = 0.0;
    for (const Tensor& m : r.marginals.alpha)
      for (double v : m.values()) d = std::max(d, std::abs(v - 0.5));
    rows.push_back(row("gates: zero coupling P=0.5", d, 1e-12));
  }
  {
    // One gate on one pixel: evidence ratio of the two Gaussian integrals.
    oracle::TinyInstance t;
    t.scales = crf::ScaleSet::from_features({Tensor::full({1, 1, 1}, 1.0), Tensor::full({1, 1, 1}, 2.0)});
    t.bank = crf::KernelBank::zeros({1, 1}, crf::AgcrfConfig::exact());
    const double k = 0.5, corner = 1.0;
    t.bank.L[crf::pair_index(2, 0, 1)][4] = k;
    t.corner = corner;
    t.active_pairs = {{0, 1}};
    const auto r = oracle::enumerate_gates(t);
    const double det = 1.0 - k * k, f1 = 1.0, f2 = 2.0;
    const double quad = (f1 * f1 + 2 * k * f1 * f2 + f2 * f2) / det;
    const double ratio = std::exp(corner + 0.5 * quad - 0.5 * (f1 * f1 + f2 * f2)) / std::sqrt(det);
    const double p = ratio / (1.0 + ratio);
    rows.push_back(row("gates: single gate hand case", std::abs(r.marginals.at(0, 1)[0] - p), 1e-12));
  }
  {
    oracle::TinyInstance t = random_tiny(rng);
    t.scales.f[1] = t.scales.f[0];
    t.scales.a[1] = t.scales.a[0];
    const int p01 = crf::pair_index(2, 0, 1), p10 = crf::pair_index(2, 1, 0);
    t.bank.L[p10] = t.bank.L[p01];
    t.bank.l_er[p10] = t.bank.l_er[p01];
    t.bank.l_re[p10] = t.bank.l_re[p01];
    const auto r = oracle::enumerate_gates(t);
    rows.push_back(row("gates: exchange symmetry", max_abs_diff(r.marginals.at(0, 1), r.marginals.at(1, 0)), 1e-12));
  }
  {
    int accepted = 0, rejected = 0;
    double norm = 0.0, gap = 0.0;
    while (accepted < 10 && rejected < 1000) {
      const oracle::TinyInstance t = random_tiny(rng);
      oracle::GateEnumeration r;
      try {
        r = oracle::enumerate_gates(t);
      } catch (const oracle::NonNormalizableError&) {
        ++rejected;
        continue;
      }
      ++accepted;
      norm = std::max(norm, r.evidence_sum_residual);
      crf::AgcrfParams params;
      params.shared = t.bank;
      crf::AgcrfConfig cfg = crf::AgcrfConfig::exact(50);
      cfg.variant = t.variant;
      const crf::InferResult mf = crf::infer(t.scales, params, cfg);
      gap = std::max(gap, max_diff(mf.scales.h, r.mean_h));
    }
    rows.push_back(row("gates: normalization x10", norm, 1e-10,
                       std::to_string(accepted) + " accepted, " + std::to_string(rejected) + " rejected"));
    rows.push_back({"gates: mean-field gap in E[h]", accepted == 10, gap, 0.0, "reported, not asserted"});
  }
  return rows;
}

CheckRow check_gradient(SplitMix64& rng) {
  crf::AgcrfConfig cfg = crf::AgcrfConfig::exact(2);
  cfg.attention_mode = crf::AttentionMode::PerChannel;
  Instance base = random_instance(rng, 2, 2, 3, 3, cfg);
  base.scales.h = base.scales.f;
  const Tensor w0 = random_tensor(rng, base.scales.f[0].shape(), -1, 1);
  const Tensor w1 = random_tensor(rng, base.scales.f[1].shape(), -1, 1);

  // Parameters flattened as f_0, f_1, then every kernel.
  std::vector<Tensor*> slots{&base.scales.f[0], &base.scales.f[1]};
  for (auto* v : {&base.bank.L, &base.bank.l_er, &base.bank.l_re})
    for (Tensor& t : *v) slots.push_back(&t);
  std::vector<double> x;
  for (Tensor* t : slots) x.insert(x.end(), t->values().begin(), t->values().end());

  auto unpack = [&](std::span<const double> v) {
    Instance in = base;
    std::vector<Tensor*> dst{&in.scales.f[0], &in.scales.f[1]};
    for (auto* b : {&in.bank.L, &in.bank.l_er, &in.bank.l_re})
      for (Tensor& t : *b) dst.push_back(&t);
    std::size_t o = 0;
    for (Tensor* t : dst)
      for (double& e : t->values()) e = v[o++];
    in.scales.h = in.scales.f;
    return in;
  };
  const oracle::ScalarFn loss = [&](std::span<const double> v) {
    const Instance in = unpack(v);
    crf::AgcrfParams params;
    params.shared = in.bank;
    const crf::InferResult r = crf::infer(in.scales, params, cfg);
    return dot(r.scales.h[0], w0) + dot(r.scales.h[1], w1);
  };

  Tape tape;
  crf::ScaleVars sv = crf::lift(tape, base.scales, true);
  sv.h = sv.f;
  crf::ParamVars pv;
  pv.shared = crf::lift(tape, base.bank, true);
  const crf::InferVars r = crf::infer(sv, pv, cfg);
  const Var total = sum(r.h[0] * tape.constant(w0)) + sum(r.h[1] * tape.constant(w1));
  tape.backward(total);
  std::vector<double> g;
  std::vector<Var> vars{sv.f[0], sv.f[1]};
  for (auto* v : {&pv.shared.L, &pv.shared.l_er, &pv.shared.l_re}) vars.insert(vars.end(), v->begin(), v->end());
  for (const Var& v : vars) {
    const Tensor t = tape.grad(v);
    g.insert(g.end(), t.values().begin(), t.values().end());
  }
  const std::vector<double> fd = oracle::fd_gradient(loss, x);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, oracle::relative_error(g[i], fd[i]));
  return row("AG-CRF gradient vs finite differences", worst, 1e-6, std::to_string(g.size()) + " coordinates");
}

}  // namespace

std::vector<CheckRow> run_checks(std::uint64_t seed) {
  SplitMix64 rng(seed, 0x636865636bULL);
  std::vector<CheckRow> rows;
  rows.push_back(check_ops(rng));
  rows.push_back(check_crf_terms(rng));
  rows.push_back(check_conditional(rng));
  rows.push_back(check_energy(rng));
  for (auto& r : check_fixed_gate(rng)) rows.push_back(std::move(r));
  for (auto& r : check_gates(rng)) rows.push_back(std::move(r));
  rows.push_back(check_gradient(rng));
  return rows;
}

std::string format_checks(const std::vector<CheckRow>& rows) {
  std::string out;
  char buf[256];
  for (const auto& r : rows) {
    if (r.tolerance > 0)
      std::snprintf(buf, sizeof buf, "%-4s  %-40s  %.3e  (tol %.0e)", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.value, r.tolerance);
    else
      std::snprintf(buf, sizeof buf, "%-4s  %-40s  %.3e", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.value);
    out += buf;
    if (!r.note.empty()) out += "  " + r.note;
    out += "\n";
  }
  return out;
}

}  // namespace agcrf::app
