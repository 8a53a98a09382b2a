#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "agcrf/crf.hpp"
#include "agcrf/io.hpp"
#include "agcrf/synth.hpp"
#include "agcrf/tape.hpp"

// Two-level hierarchical prediction network around the AG-CRF.
//
//   front-end: L blocks of conv3x3 + ReLU + maxpool2, tap f_l after each block
//   level 1:   per tap, D (deconv k4 s2), C (conv3 + align deconv), M (pool2 +
//              deconv k4 s4) all at twice the tap resolution; AG-CRF over the
//              three; 1x1 fuse; deconv to the input resolution; head
//   level 2:   AG-CRF over the L aligned layer outputs; 1x1 fuse; head
//
// The prediction is the mean of the L + 1 activated heads.

namespace agcrf::net {

enum class Preset {
  Baseline,     // no level 1: taps upsampled, concatenated, fused, one head
  NoAgcrf,      // hierarchy with plain concatenation instead of AG-CRFs
  Crf,          // AG-CRFs with attention forced open (alpha = 1)
  NoDeepSup,    // FLAG, loss and prediction from the final head only
  Plag,
  Flag,
  FlagCk,
};

Preset parse_preset(const std::string& name);
std::string preset_name(Preset p);
crf::Variant parse_variant(const std::string& v);
/// on/off, 1/0, true/false.
bool parse_switch(const std::string& v, const std::string& key);
/// Presets in the order used by ablation tables.
const std::vector<Preset>& ablation_presets();

struct NetSpec {
  Task task = Task::Contour;
  int in_channels = 3;
  int out_channels = 1;                       // K for segmentation
  std::vector<int> front_channels{16, 32, 64};
  int crf_channels = 4;
  Preset preset = Preset::Flag;
  /// Set by apply_preset; FLAG/PLAG and CK can also be combined freely.
  crf::Variant variant = crf::Variant::Flag;
  bool conditional_kernels = false;
  int iterations = 2;
  int attention_sign = +1;
  crf::AttentionMode attention_mode = crf::AttentionMode::PerChannel;

  int layers() const { return static_cast<int>(front_channels.size()); }
  bool hierarchical() const { return preset != Preset::Baseline; }
  bool uses_agcrf() const { return preset != Preset::Baseline && preset != Preset::NoAgcrf; }
  bool deep_supervision() const { return preset != Preset::NoDeepSup && preset != Preset::Baseline; }
  /// Number of prediction heads: L + 1 in the hierarchy, 1 for the baseline.
  int heads() const { return hierarchical() ? layers() + 1 : 1; }
  crf::AgcrfConfig crf_config() const;
  /// Smallest input side the geometry accepts (inputs must be multiples of it).
  int input_multiple() const;
  void validate() const;
  /// Sets the preset together with the variant and kernel mode it implies.
  void apply_preset(Preset p);
  /// key=value lines for spec.txt.
  std::string echo() const;
  /// Unknown keys throw; the result is not validated.
  static NetSpec from_pairs(const std::map<std::string, std::string>& kv);
};

/// Parameter names and shapes for a spec.
std::map<std::string, Shape> param_shapes(const NetSpec& spec);

/// Uniform(-r, r) with r = sqrt(6 / fan_in); each tensor draws from its own
/// stream keyed by (seed, name) so presets sharing a name share its values.
/// Conditional-kernel weights start at zero and their biases at the shared
/// kernels' initial values, so FLAG+CK starts out as FLAG. The AG-CRF unary
/// weights start at zero, so every CRF preset starts out as no-agcrf.
TensorMap init_params(const NetSpec& spec, std::uint64_t seed);

std::size_t param_count(const TensorMap& params);

struct ForwardVars {
  std::vector<Var> heads;   // raw head outputs (logits for contour and seg)
  std::vector<Var> preds;   // activated heads
  Var final_pred;           // mean of preds (or the last head without deep supervision)
};

using VarMap = std::map<std::string, Var>;

VarMap lift_params(Tape& tape, const TensorMap& params, bool trainable);

/// image: [C_in, H, W].
ForwardVars forward(const VarMap& params, Var image, const NetSpec& spec);

/// Value-level prediction: sigmoid map (contour), depth (depth), class
/// probabilities (seg).
Tensor predict(const TensorMap& params, const Tensor& image, const NetSpec& spec);

/// Task loss for one head. `head` is the raw output.
Var head_loss(Var head, const Tensor& target, Task task, bool hed_beta);

/// Sum of the head losses that are active for the spec.
struct LossVars {
  Var total;
  std::vector<std::pair<int, Var>> per_head;  // (head index, loss)
};
LossVars network_loss(const ForwardVars& fw, const Tensor& target, const NetSpec& spec, bool hed_beta);

// ---- training --------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  int epochs = 1;
  int batch = 1;
  std::uint64_t seed = 1;
  int threads = 1;
  bool hed_beta = true;
  /// Rescales the batch gradient to this global L2 norm when larger; 0 disables.
  double clip_norm = 0.0;
  /// Stop after this many steps (0 = run all epochs).
  int max_steps = 0;
  /// Called after each finished epoch with the mean total loss per sample.
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct LossRecord {
  int step;
  int head;
  double loss;
};

struct TrainResult {
  TensorMap params;
  std::vector<LossRecord> trace;
  int steps = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int step) : std::runtime_error(what), step(step) {}
  int step;
};

/// SGD with momentum and weight decay: v <- m v + (g + wd p); p <- p - lr v,
/// with g optionally clipped by global norm first.
/// Gradients are averaged over the batch; with threads > 1 samples run on
/// worker threads and are reduced in sample order, so results do not depend
/// on scheduling.
TrainResult train(const std::vector<Sample>& data, const NetSpec& spec, const TrainConfig& cfg, TensorMap init);

/// Per-sample gradient of the network loss; exposed for tests.
TensorMap loss_gradient(const TensorMap& params, const Sample& sample, const NetSpec& spec, bool hed_beta,
                        double* loss_out = nullptr, std::vector<std::pair<int, double>>* head_losses = nullptr);

/// Checkpoint directory: the parameter manifest plus spec.txt (key=value).
void save_model(const std::filesystem::path& dir, const TensorMap& params, const NetSpec& spec);
TensorMap load_model(const std::filesystem::path& dir, NetSpec& spec);

/// Moving average with the given window (shorter at the start).
std::vector<double> moving_average(const std::vector<double>& v, int window);

}  // namespace agcrf::net
