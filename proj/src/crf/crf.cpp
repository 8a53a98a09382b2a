#include "agcrf/crf.hpp"

#include <algorithm>
#include <sstream>

#include "agcrf/ops.hpp"

namespace agcrf::crf {

void AgcrfConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("agcrf: iterations must be >= 1");
  if (attention_sign != 1 && attention_sign != -1) throw std::invalid_argument("agcrf: attention_sign must be +1 or -1");
  if (!(damping > 0.0 && damping <= 1.0)) throw std::invalid_argument("agcrf: damping must lie in (0, 1]");
  if (!(divergence_limit > 0.0)) throw std::invalid_argument("agcrf: divergence_limit must be positive");
}

AgcrfConfig AgcrfConfig::exact(int iterations) {
  AgcrfConfig cfg;
  cfg.iterations = iterations;
  cfg.attention_mode = AttentionMode::Scalar;
  cfg.unary_weight = UnaryWeight::Precision;
  return cfg;
}

int pair_count(int scales) { return scales * (scales - 1); }

int pair_index(int scales, int emitter, int receiver) {
  if (emitter == receiver || emitter < 0 || receiver < 0 || emitter >= scales || receiver >= scales)
    throw std::out_of_range("pair_index: invalid scale pair");
  return emitter * (scales - 1) + (receiver < emitter ? receiver : receiver - 1);
}

int attention_channels(const AgcrfConfig& cfg, int receiver_channels) {
  return cfg.attention_mode == AttentionMode::Scalar ? 1 : receiver_channels;
}

// ---- value-level types -----------------------------------------------------

std::vector<int> ScaleSet::channels() const {
  std::vector<int> c;
  for (const Tensor& t : f) c.push_back(t.channels());
  return c;
}

ScaleSet ScaleSet::from_features(std::vector<Tensor> f) {
  ScaleSet s;
  for (const Tensor& t : f) {
    require_image(t, "ScaleSet");
    s.h.push_back(t);
    s.a.push_back(Tensor::full({1, t.height(), t.width()}, 1.0));
  }
  s.f = std::move(f);
  return s;
}

void ScaleSet::validate(const AgcrfConfig& cfg) const {
  if (f.empty()) throw ShapeError("ScaleSet: no scales");
  if (h.size() != f.size() || a.size() != f.size()) throw ShapeError("ScaleSet: f, h and a must have one entry per scale");
  const int hh = f[0].height(), ww = f[0].width();
  for (std::size_t s = 0; s < f.size(); ++s) {
    require_image(f[s], "ScaleSet");
    require_same_shape(f[s], h[s], "ScaleSet f/h");
    if (f[s].height() != hh || f[s].width() != ww) throw ShapeError("ScaleSet: scales must share spatial size");
    const int c = f[s].channels();
    if (cfg.unary_weight == UnaryWeight::Precision) {
      if (a[s].shape() != Shape{1, hh, ww}) throw ShapeError("ScaleSet: precision weights must be [1, H, W]");
      for (double v : a[s].raw())
        if (!(v > 0.0)) throw std::invalid_argument("ScaleSet: unary weight a must be strictly positive");
    } else if (a[s].shape() != Shape{c, c, 1, 1}) {
      throw ShapeError("ScaleSet: network-mode unary weight must be a [C, C, 1, 1] kernel");
    }
  }
}

KernelBank KernelBank::zeros(const std::vector<int>& channels, const AgcrfConfig& cfg) {
  const int S = static_cast<int>(channels.size());
  KernelBank b;
  b.scales = S;
  b.L.resize(pair_count(S));
  b.l_er.resize(pair_count(S));
  b.l_re.resize(pair_count(S));
  for (int e = 0; e < S; ++e)
    for (int r = 0; r < S; ++r) {
      if (e == r) continue;
      const int p = pair_index(S, e, r);
      const int ca = attention_channels(cfg, channels[r]);
      b.L[p] = Tensor::zeros({channels[r], channels[e], 3, 3});
      b.l_er[p] = Tensor::zeros({ca, channels[e], 3, 3});
      b.l_re[p] = Tensor::zeros({ca, channels[r], 3, 3});
    }
  return b;
}

CondKernelHeads CondKernelHeads::zeros(const std::vector<int>& channels, const AgcrfConfig& cfg) {
  const int S = static_cast<int>(channels.size());
  CondKernelHeads hd;
  hd.scales = S;
  for (auto* v : {&hd.W_L, &hd.b_L, &hd.W_le, &hd.b_le, &hd.W_lr, &hd.b_lr}) v->resize(pair_count(S));
  for (int e = 0; e < S; ++e)
    for (int r = 0; r < S; ++r) {
      if (e == r) continue;
      const int p = pair_index(S, e, r);
      const int ce = channels[e], cr = channels[r], ca = attention_channels(cfg, cr);
      hd.W_L[p] = Tensor::zeros({cr * ce * 9, ce + cr, 1, 1});
      hd.b_L[p] = Tensor::zeros({cr * ce * 9});
      hd.W_le[p] = Tensor::zeros({ca * ce * 9, ce, 1, 1});
      hd.b_le[p] = Tensor::zeros({ca * ce * 9});
      hd.W_lr[p] = Tensor::zeros({ca * cr * 9, cr, 1, 1});
      hd.b_lr[p] = Tensor::zeros({ca * cr * 9});
    }
  return hd;
}

CondKernelHeads CondKernelHeads::from_shared(const KernelBank& shared) {
  if (shared.mode != KernelMode::Shared) throw std::invalid_argument("from_shared: bank must hold shared kernels");
  CondKernelHeads hd;
  hd.scales = shared.scales;
  const int n = pair_count(shared.scales);
  for (auto* v : {&hd.W_L, &hd.b_L, &hd.W_le, &hd.b_le, &hd.W_lr, &hd.b_lr}) v->resize(n);
  for (int p = 0; p < n; ++p) {
    const Tensor& L = shared.L[p];
    const Tensor& le = shared.l_er[p];
    const Tensor& lr = shared.l_re[p];
    const int cr = L.dim(0), ce = L.dim(1);
    hd.W_L[p] = Tensor::zeros({static_cast<int>(L.size()), ce + cr, 1, 1});
    hd.b_L[p] = L.reshaped({static_cast<int>(L.size())});
    hd.W_le[p] = Tensor::zeros({static_cast<int>(le.size()), ce, 1, 1});
    hd.b_le[p] = le.reshaped({static_cast<int>(le.size())});
    hd.W_lr[p] = Tensor::zeros({static_cast<int>(lr.size()), cr, 1, 1});
    hd.b_lr[p] = lr.reshaped({static_cast<int>(lr.size())});
  }
  return hd;
}

// ---- tape-level implementation --------------------------------------------

namespace {

int scales_of(std::span<const Var> h) { return static_cast<int>(h.size()); }

Var apply_kernel(KernelMode mode, Var kernel, Var x, int out_channels) {
  if (mode == KernelMode::Shared) return conv2d(x, kernel, 1, 1);
  return local_conv3x3(x, kernel, out_channels);
}

void check_bank(const BankVars& bank, int S) {
  if (bank.scales != S || static_cast<int>(bank.L.size()) != pair_count(S) ||
      static_cast<int>(bank.l_er.size()) != pair_count(S) || static_cast<int>(bank.l_re.size()) != pair_count(S))
    throw ShapeError("agcrf: kernel bank does not match the number of scales");
}

Var ones_like(Tape& tape, int channels, int h, int w) { return tape.constant(Tensor::full({channels, h, w}, 1.0)); }

Var logits_from_message(int e, int r, Var msg, const BankVars& bank, const ScaleVars& sv, const AgcrfConfig& cfg) {
  const int S = static_cast<int>(sv.h.size());
  const int p = pair_index(S, e, r);
  const std::vector<Var>& x = cfg.variant == Variant::Flag ? sv.h : sv.f;
  const int cr = sv.h[r].value().channels();
  const int ca = attention_channels(cfg, cr);
  Var quad = sv.h[r] * msg;
  if (cfg.attention_mode == AttentionMode::Scalar) quad = sum_channels(quad);
  Var lin_e = apply_kernel(bank.mode, bank.l_er[p], x[e], ca);
  Var lin_r = apply_kernel(bank.mode, bank.l_re[p], x[r], ca);
  if (lin_e.value().channels() != ca || lin_r.value().channels() != ca)
    throw ShapeError("agcrf: linear-term kernels do not match the attention mode");
  return quad + lin_e + lin_r;
}

Var gate_from_logits(Var logits, const AgcrfConfig& cfg) {
  if (cfg.gates == GateOverride::Open) {
    const Tensor& v = logits.value();
    return ones_like(*logits.tape, v.channels(), v.height(), v.width());
  }
  return gate_sigmoid(cfg.attention_sign > 0 ? logits : scale(logits, -1.0));
}

std::vector<Var> step_with_messages(const ScaleVars& sv, const BankVars& bank, const GateVars& gates,
                                    const std::vector<Var>& msgs, const AgcrfConfig& cfg) {
  const int S = static_cast<int>(sv.h.size());
  std::vector<Var> next;
  next.reserve(S);
  for (int r = 0; r < S; ++r) {
    const int cr = sv.h[r].value().channels();
    Var agg{};
    for (int e = 0; e < S; ++e) {
      if (e == r) continue;
      const int p = pair_index(S, e, r);
      Var alpha = gates.alpha.at(p);
      Var a_b = alpha.value().channels() == cr ? alpha : broadcast_channels(alpha, cr);
      Var term = a_b * msgs[p];
      if (cfg.include_linear_message && cfg.variant == Variant::Flag)
        term = term + linear_message(e, r, bank, alpha);
      agg = agg.valid() ? agg + term : term;
    }
    if (!agg.valid()) {
      next.push_back(sv.f[r]);
      continue;
    }
    Var weighted = cfg.unary_weight == UnaryWeight::Precision
                       ? div(agg, sv.a[r].value().channels() == cr ? sv.a[r] : broadcast_channels(sv.a[r], cr))
                       : conv2d(agg, sv.a[r], 1, 0);
    Var updated = sv.f[r] + weighted;
    if (cfg.damping != 1.0) updated = scale(sv.h[r], 1.0 - cfg.damping) + scale(updated, cfg.damping);
    next.push_back(updated);
  }
  return next;
}

std::vector<Var> all_messages(const BankVars& bank, std::span<const Var> h) {
  const int S = scales_of(h);
  std::vector<Var> msgs(pair_count(S));
  for (int e = 0; e < S; ++e)
    for (int r = 0; r < S; ++r)
      if (e != r) msgs[pair_index(S, e, r)] = message(e, r, bank, h);
  return msgs;
}

}  // namespace

BankVars predict_kernels(const HeadVars& heads, std::span<const Var> h, const AgcrfConfig& cfg) {
  const int S = scales_of(h);
  if (heads.scales != S || static_cast<int>(heads.W_L.size()) != pair_count(S))
    throw ShapeError("predict_kernels: heads do not match the number of scales");
  BankVars bank;
  bank.mode = KernelMode::Conditional;
  bank.scales = S;
  bank.L.resize(pair_count(S));
  bank.l_er.resize(pair_count(S));
  bank.l_re.resize(pair_count(S));
  for (int e = 0; e < S; ++e)
    for (int r = 0; r < S; ++r) {
      if (e == r) continue;
      const int p = pair_index(S, e, r);
      const int ce = h[e].value().channels(), cr = h[r].value().channels();
      const int ca = attention_channels(cfg, cr);
      const Shape wl = heads.W_L[p].shape();
      if (wl != Shape{cr * ce * 9, ce + cr, 1, 1} || heads.W_le[p].shape() != Shape{ca * ce * 9, ce, 1, 1} ||
          heads.W_lr[p].shape() != Shape{ca * cr * 9, cr, 1, 1})
        throw ShapeError("predict_kernels: head shapes do not match scale channels for pair (" + std::to_string(e) +
                         "," + std::to_string(r) + ")");
      const Var cat_parts[] = {h[e], h[r]};
      bank.L[p] = add_bias(conv2d(concat(cat_parts), heads.W_L[p], 1, 0), heads.b_L[p]);
      bank.l_er[p] = add_bias(conv2d(h[e], heads.W_le[p], 1, 0), heads.b_le[p]);
      bank.l_re[p] = add_bias(conv2d(h[r], heads.W_lr[p], 1, 0), heads.b_lr[p]);
    }
  return bank;
}

Var message(int emitter, int receiver, const BankVars& bank, std::span<const Var> h) {
  const int S = scales_of(h);
  check_bank(bank, S);
  const int p = pair_index(S, emitter, receiver);
  return apply_kernel(bank.mode, bank.L[p], h[emitter], h[receiver].value().channels());
}

Var attention_logits(int emitter, int receiver, const BankVars& bank, const ScaleVars& scales,
                     const AgcrfConfig& cfg) {
  Var msg = message(emitter, receiver, bank, scales.h);
  return logits_from_message(emitter, receiver, msg, bank, scales, cfg);
}

Var attention(int emitter, int receiver, const BankVars& bank, const ScaleVars& scales, const AgcrfConfig& cfg) {
  return gate_from_logits(attention_logits(emitter, receiver, bank, scales, cfg), cfg);
}

Var linear_message(int emitter, int receiver, const BankVars& bank, Var alpha) {
  const int p = pair_index(bank.scales, emitter, receiver);
  Var k = bank.l_re[p];
  if (bank.mode == KernelMode::Shared) return deconv2d(alpha, k, 1, 1);
  // Adjoint of the per-pixel correlation: y[ci]^q = sum_{co,o} F[co,ci,o]^{q-o} alpha[co]^{q-o}.
  const int ca = alpha.value().channels();
  const int cr = k.value().channels() / (ca * 9);
  Tensor y = local_conv3x3_input_grad(k.value(), alpha.value(), cr);
  return alpha.tape->record("local_conv3x3_adjoint", std::move(y), {alpha.id, k.id},
                            [alpha, k, ca](Tape& tp, int self) {
                              const Tensor& g = tp.grad_of(self);
                              if (tp.requires_grad(alpha.id))
                                tp.accumulate(alpha.id, local_conv3x3(g, tp.value(k.id), ca));
                              if (tp.requires_grad(k.id))
                                tp.accumulate(k.id, local_conv3x3_field_grad(g, tp.value(alpha.id)));
                            });
}

std::vector<Var> mean_field_step(const ScaleVars& scales, const BankVars& bank, const GateVars& gates,
                                 const AgcrfConfig& cfg) {
  const int S = static_cast<int>(scales.h.size());
  check_bank(bank, S);
  if (static_cast<int>(gates.alpha.size()) != pair_count(S)) throw ShapeError("mean_field_step: gate count mismatch");
  return step_with_messages(scales, bank, gates, all_messages(bank, scales.h), cfg);
}

InferVars infer(const ScaleVars& scales, const ParamVars& params, const AgcrfConfig& cfg) {
  cfg.validate();
  const int S = static_cast<int>(scales.f.size());
  ScaleVars state = scales;
  state.h = scales.f;
  GateVars gates{S, std::vector<Var>(pair_count(S))};
  for (int t = 0; t < cfg.iterations; ++t) {
    const BankVars bank = cfg.conditional_kernels ? predict_kernels(params.heads, state.h, cfg) : params.shared;
    check_bank(bank, S);
    const std::vector<Var> msgs = all_messages(bank, state.h);
    for (int e = 0; e < S; ++e)
      for (int r = 0; r < S; ++r) {
        if (e == r) continue;
        const int p = pair_index(S, e, r);
        gates.alpha[p] = gate_from_logits(logits_from_message(e, r, msgs[p], bank, state, cfg), cfg);
      }
    state.h = step_with_messages(state, bank, gates, msgs, cfg);
    for (int s = 0; s < S; ++s) {
      const double m = state.h[s].value().max_abs();
      if (m > cfg.divergence_limit) {
        std::ostringstream os;
        os << "mean-field diverged at iteration " << t + 1 << " (max |h| = " << m << " at scale " << s
           << "); the fixed-gate update contracts only when the spectral radius of the gated coupling "
              "w(alpha . L) is below 1: shrink the pairwise kernels or use damping < 1";
        throw DivergenceError(os.str());
      }
    }
  }
  return {state.h, gates};
}

// ---- lifting ---------------------------------------------------------------

namespace {

Var lift_one(Tape& tape, const Tensor& t, bool trainable) {
  return trainable ? tape.parameter(t) : tape.constant(t);
}

std::vector<Var> lift_all(Tape& tape, const std::vector<Tensor>& ts, bool trainable) {
  std::vector<Var> out;
  out.reserve(ts.size());
  for (const Tensor& t : ts) out.push_back(lift_one(tape, t, trainable));
  return out;
}

std::vector<Tensor> lower_all(const std::vector<Var>& vs) {
  std::vector<Tensor> out;
  out.reserve(vs.size());
  for (const Var& v : vs) out.push_back(v.value());
  return out;
}

}  // namespace

ScaleVars lift(Tape& tape, const ScaleSet& s, bool trainable) {
  return {lift_all(tape, s.f, trainable), lift_all(tape, s.h, trainable), lift_all(tape, s.a, trainable)};
}

BankVars lift(Tape& tape, const KernelBank& b, bool trainable) {
  return {b.mode, b.scales, lift_all(tape, b.L, trainable), lift_all(tape, b.l_er, trainable),
          lift_all(tape, b.l_re, trainable)};
}

HeadVars lift(Tape& tape, const CondKernelHeads& h, bool trainable) {
  return {h.scales,
          lift_all(tape, h.W_L, trainable),
          lift_all(tape, h.b_L, trainable),
          lift_all(tape, h.W_le, trainable),
          lift_all(tape, h.b_le, trainable),
          lift_all(tape, h.W_lr, trainable),
          lift_all(tape, h.b_lr, trainable)};
}

GateVars lift(Tape& tape, const GateMap& g) { return {g.scales, lift_all(tape, g.alpha, false)}; }

KernelBank lower(const BankVars& b) {
  return {b.mode, b.scales, lower_all(b.L), lower_all(b.l_er), lower_all(b.l_re)};
}

GateMap lower(const GateVars& g, AttentionMode mode) { return {mode, lower_all(g.alpha), g.scales}; }

// ---- value-level wrappers --------------------------------------------------

KernelBank predict_kernels(const CondKernelHeads& heads, const ScaleSet& scales, const AgcrfConfig& cfg) {
  Tape tape;
  const ScaleVars sv = lift(tape, scales);
  return lower(predict_kernels(lift(tape, heads), sv.h, cfg));
}

Tensor message(int emitter, int receiver, const KernelBank& bank, const ScaleSet& scales) {
  Tape tape;
  const ScaleVars sv = lift(tape, scales);
  return message(emitter, receiver, lift(tape, bank), sv.h).value();
}

Tensor attention_logits(int emitter, int receiver, const KernelBank& bank, const ScaleSet& scales,
                        const AgcrfConfig& cfg) {
  Tape tape;
  return attention_logits(emitter, receiver, lift(tape, bank), lift(tape, scales), cfg).value();
}

Tensor attention(int emitter, int receiver, const KernelBank& bank, const ScaleSet& scales, const AgcrfConfig& cfg) {
  Tape tape;
  return attention(emitter, receiver, lift(tape, bank), lift(tape, scales), cfg).value();
}

ScaleSet mean_field_step(const ScaleSet& scales, const KernelBank& bank, const GateMap& gates,
                         const AgcrfConfig& cfg) {
  scales.validate(cfg);
  Tape tape;
  const std::vector<Var> h = mean_field_step(lift(tape, scales), lift(tape, bank), lift(tape, gates), cfg);
  ScaleSet out = scales;
  out.h = lower_all(h);
  return out;
}

InferResult infer(const ScaleSet& scales, const AgcrfParams& params, const AgcrfConfig& cfg) {
  scales.validate(cfg);
  Tape tape;
  ParamVars pv;
  if (cfg.conditional_kernels) pv.heads = lift(tape, params.heads);
  else pv.shared = lift(tape, params.shared);
  const InferVars r = infer(lift(tape, scales), pv, cfg);
  ScaleSet out = scales;
  out.h = lower_all(r.h);
  return {std::move(out), lower(r.gates, cfg.attention_mode)};
}

double energy(const ScaleSet& assignment, const GateMap& gates, const KernelBank& bank, Variant variant,
              double corner) {
  if (bank.mode != KernelMode::Shared) throw std::invalid_argument("energy: requires shared kernels");
  const int S = assignment.size();
  double unary = 0.0;
  for (int s = 0; s < S; ++s) {
    const Tensor& h = assignment.h[s];
    const Tensor& f = assignment.f[s];
    const Tensor& a = assignment.a[s];
    const int H = h.height(), W = h.width();
    for (int c = 0; c < h.channels(); ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double d = h.at(c, y, x) - f.at(c, y, x);
          unary += 0.5 * a.at(0, y, x) * d * d;
        }
  }
  double pairwise = 0.0;
  const std::vector<Tensor>& xs = variant == Variant::Flag ? assignment.h : assignment.f;
  for (int e = 0; e < S; ++e)
    for (int r = 0; r < S; ++r) {
      if (e == r) continue;
      const int p = pair_index(S, e, r);
      const Tensor& g = gates.at(e, r);
      const Tensor msg = conv2d(assignment.h[e], bank.L[p], 1, 1);
      const Tensor lin_e = conv2d(xs[e], bank.l_er[p], 1, 1);
      const Tensor lin_r = conv2d(xs[r], bank.l_re[p], 1, 1);
      if (g.channels() != 1 || lin_e.channels() != 1) throw ShapeError("energy: requires scalar gates");
      const Tensor& hr = assignment.h[r];
      const int H = hr.height(), W = hr.width();
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double gv = g.at(0, y, x);
          if (gv == 0.0) continue;
          double quad = 0.0;
          for (int c = 0; c < hr.channels(); ++c) quad += hr.at(c, y, x) * msg.at(c, y, x);
          const int ny = std::min(y + 1, H - 1) - std::max(y - 1, 0) + 1;
          const int nx = std::min(x + 1, W - 1) - std::max(x - 1, 0) + 1;
          pairwise += gv * (quad + lin_e.at(0, y, x) + lin_r.at(0, y, x) + corner * ny * nx);
        }
    }
  return -unary + pairwise;
}

}  // namespace agcrf::crf
