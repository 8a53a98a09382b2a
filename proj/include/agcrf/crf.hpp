#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "agcrf/tape.hpp"
#include "agcrf/tensor.hpp"

// Attention-gated CRF over S aligned feature scales.
//
// Indexing convention: a pair (e, r) is an ordered (emitter, receiver) pair with
// e != r. Kernels are stored receiver-first: L for the pair maps C_e channels to
// C_r channels, i.e. its shape is [C_r, C_e, 3, 3] and the message is the
// correlation L (*) h_e (stride 1, pad 1).
//
// One mean-field sweep, for every receiver r:
//   M_{e,r}  = h_r . (L_{e->r} (*) h_e) + l_{e->r} (*) x_e + l_{r->e} (*) x_r
//   alpha    = sigmoid(sign * M)
//   h_r     <- f_r + w_r( sum_{e != r} alpha_{e,r} . (L_{e->r} (*) h_e) )
// where x = h (FLAG) or x = f (PLAG), and w_r is either division by a positive
// per-pixel precision a_r (exact mode) or a learned 1x1 convolution (network
// mode). In scalar attention mode M is summed over channels and alpha is a
// single map broadcast over the receiver's channels. Updates are synchronous.

namespace agcrf::crf {

enum class Variant { Flag, Plag };
enum class AttentionMode { Scalar, PerChannel };
enum class UnaryWeight { Precision, Conv1x1 };
enum class GateOverride { None, Open };
enum class KernelMode { Shared, Conditional };

/// Raised when latent means blow up during inference.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AgcrfConfig {
  Variant variant = Variant::Flag;
  bool conditional_kernels = false;
  int iterations = 1;
  int attention_sign = +1;
  bool include_linear_message = false;
  AttentionMode attention_mode = AttentionMode::PerChannel;
  UnaryWeight unary_weight = UnaryWeight::Conv1x1;
  /// Open forces alpha = 1 everywhere (plain multi-scale CRF).
  GateOverride gates = GateOverride::None;
  /// h <- (1 - damping) h + damping * update; 1 is the undamped update.
  double damping = 1.0;
  double divergence_limit = 1e12;

  void validate() const;
  /// Scalar gates with positive per-pixel precisions, the form the math is written in.
  static AgcrfConfig exact(int iterations = 1);
};

int pair_count(int scales);
int pair_index(int scales, int emitter, int receiver);
/// Channel count of the attention map (and of the l-kernels' outputs) at receiver r.
int attention_channels(const AgcrfConfig& cfg, int receiver_channels);

// ---- value-level types -----------------------------------------------------

/// Observed features f_s, latent means h_s and unary weights a_s per scale.
/// a_s is [1, H, W] (strictly positive) in exact mode or a [C_s, C_s, 1, 1]
/// kernel in network mode.
struct ScaleSet {
  std::vector<Tensor> f;
  std::vector<Tensor> h;
  std::vector<Tensor> a;

  int size() const { return static_cast<int>(f.size()); }
  std::vector<int> channels() const;
  /// h := f, a := ones([1, H, W]).
  static ScaleSet from_features(std::vector<Tensor> f);
  void validate(const AgcrfConfig& cfg) const;
};

/// Expected gate values per ordered pair, indexed by pair_index.
struct GateMap {
  AttentionMode mode = AttentionMode::Scalar;
  std::vector<Tensor> alpha;
  int scales = 0;

  const Tensor& at(int emitter, int receiver) const { return alpha.at(pair_index(scales, emitter, receiver)); }
};

/// Pairwise kernels L and attention linear terms per ordered pair.
///
/// Shared mode: L [C_r, C_e, 3, 3], l_er [C_att, C_e, 3, 3], l_re [C_att, C_r, 3, 3].
/// Conditional mode: the same kernels flattened per pixel, shapes
/// [C_r*C_e*9, H, W], [C_att*C_e*9, H, W], [C_att*C_r*9, H, W].
struct KernelBank {
  KernelMode mode = KernelMode::Shared;
  int scales = 0;
  std::vector<Tensor> L;
  std::vector<Tensor> l_er;
  std::vector<Tensor> l_re;

  static KernelBank zeros(const std::vector<int>& channels, const AgcrfConfig& cfg);
};

/// Linear 1x1 heads predicting conditional kernels from latent features.
///   L    = W_L  (*) concat(h_e, h_r) + b_L
///   l_er = W_le (*) h_e + b_le,   l_re = W_lr (*) h_r + b_lr
struct CondKernelHeads {
  int scales = 0;
  std::vector<Tensor> W_L, b_L;
  std::vector<Tensor> W_le, b_le;
  std::vector<Tensor> W_lr, b_lr;

  static CondKernelHeads zeros(const std::vector<int>& channels, const AgcrfConfig& cfg);
  /// Zero weights with biases equal to the flattened shared kernels.
  static CondKernelHeads from_shared(const KernelBank& shared);
};

struct AgcrfParams {
  KernelBank shared;
  CondKernelHeads heads;
};

struct InferResult {
  ScaleSet scales;
  GateMap gates;
};

KernelBank predict_kernels(const CondKernelHeads& heads, const ScaleSet& scales, const AgcrfConfig& cfg);
Tensor message(int emitter, int receiver, const KernelBank& bank, const ScaleSet& scales);
/// Pre-sigmoid attention map M for the pair.
Tensor attention_logits(int emitter, int receiver, const KernelBank& bank, const ScaleSet& scales,
                        const AgcrfConfig& cfg);
Tensor attention(int emitter, int receiver, const KernelBank& bank, const ScaleSet& scales, const AgcrfConfig& cfg);
ScaleSet mean_field_step(const ScaleSet& scales, const KernelBank& bank, const GateMap& gates,
                         const AgcrfConfig& cfg);
InferResult infer(const ScaleSet& scales, const AgcrfParams& params, const AgcrfConfig& cfg);

/// Energy of an assignment (h, binary scalar gates) with shared kernels:
///   E = -sum_s sum_i a/2 |h - f|^2
///       + sum_{(e,r)} sum_i g^i sum_{j in N(i)} [ h_r^i L h_e^j + l_er . x_e^j + l_re . x_r^j + corner ]
/// with x as in the attention map, N(i) the in-bounds 3x3 neighbourhood, and
/// `corner` the constant lower-right entry of the block kernel.
double energy(const ScaleSet& assignment, const GateMap& gates, const KernelBank& bank, Variant variant,
              double corner = 1.0);

// ---- tape-level mirrors ----------------------------------------------------

struct ScaleVars {
  std::vector<Var> f;
  std::vector<Var> h;
  std::vector<Var> a;
};

struct BankVars {
  KernelMode mode = KernelMode::Shared;
  int scales = 0;
  std::vector<Var> L, l_er, l_re;
};

struct HeadVars {
  int scales = 0;
  std::vector<Var> W_L, b_L, W_le, b_le, W_lr, b_lr;
};

struct GateVars {
  int scales = 0;
  std::vector<Var> alpha;
};

struct ParamVars {
  BankVars shared;
  HeadVars heads;
};

struct InferVars {
  std::vector<Var> h;
  GateVars gates;
};

BankVars predict_kernels(const HeadVars& heads, std::span<const Var> h, const AgcrfConfig& cfg);
Var message(int emitter, int receiver, const BankVars& bank, std::span<const Var> h);
Var attention_logits(int emitter, int receiver, const BankVars& bank, const ScaleVars& scales,
                     const AgcrfConfig& cfg);
Var attention(int emitter, int receiver, const BankVars& bank, const ScaleVars& scales, const AgcrfConfig& cfg);
/// Linear-term message to the receiver: the adjoint of (l_{r->e} (*) .) applied to alpha.
Var linear_message(int emitter, int receiver, const BankVars& bank, Var alpha);
std::vector<Var> mean_field_step(const ScaleVars& scales, const BankVars& bank, const GateVars& gates,
                                 const AgcrfConfig& cfg);
InferVars infer(const ScaleVars& scales, const ParamVars& params, const AgcrfConfig& cfg);

// Lifting helpers between the two levels.
ScaleVars lift(Tape& tape, const ScaleSet& s, bool trainable = false);
BankVars lift(Tape& tape, const KernelBank& b, bool trainable = false);
HeadVars lift(Tape& tape, const CondKernelHeads& h, bool trainable = false);
GateVars lift(Tape& tape, const GateMap& g);
KernelBank lower(const BankVars& b);
GateMap lower(const GateVars& g, AttentionMode mode);

}  // namespace agcrf::crf
