#include <stdexcept>

#include "agcrf/losses.hpp"
#include "agcrf/net.hpp"
#include "net_internal.hpp"

namespace agcrf::net {
namespace {

const Var& get(const VarMap& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::invalid_argument("network parameter '" + name + "' is missing");
  return it->second;
}

Var conv_layer(const VarMap& p, const std::string& name, Var x, int pad) {
  return add_bias(conv2d(x, get(p, name + ".w"), 1, pad), get(p, name + ".b"));
}

Var deconv_layer(const VarMap& p, const std::string& name, Var x, int factor) {
  const Upsample u = upsample_for(factor);
  return add_bias(deconv2d(x, get(p, name + ".w"), u.s, u.p), get(p, name + ".b"));
}

crf::ParamVars crf_vars(const VarMap& p, const std::string& prefix, int scales, const crf::AgcrfConfig& cfg) {
  crf::ParamVars pv;
  const int n = crf::pair_count(scales);
  if (cfg.conditional_kernels) {
    pv.heads.scales = scales;
    for (int i = 0; i < n; ++i) {
      const std::string ps = std::to_string(i);
      pv.heads.W_L.push_back(get(p, prefix + ".WL." + ps));
      pv.heads.b_L.push_back(get(p, prefix + ".bL." + ps));
      pv.heads.W_le.push_back(get(p, prefix + ".Wle." + ps));
      pv.heads.b_le.push_back(get(p, prefix + ".ble." + ps));
      pv.heads.W_lr.push_back(get(p, prefix + ".Wlr." + ps));
      pv.heads.b_lr.push_back(get(p, prefix + ".blr." + ps));
    }
  } else {
    pv.shared.mode = crf::KernelMode::Shared;
    pv.shared.scales = scales;
    for (int i = 0; i < n; ++i) {
      const std::string ps = std::to_string(i);
      pv.shared.L.push_back(get(p, prefix + ".L." + ps));
      pv.shared.l_er.push_back(get(p, prefix + ".ler." + ps));
      pv.shared.l_re.push_back(get(p, prefix + ".lre." + ps));
    }
  }
  return pv;
}

// AG-CRF fusion (or plain pass-through) followed by a 1x1 fuse over the concatenation.
Var fuse(const VarMap& p, const std::string& prefix, const std::vector<Var>& features, const NetSpec& spec) {
  std::vector<Var> h = features;
  if (spec.uses_agcrf()) {
    const crf::AgcrfConfig cfg = spec.crf_config();
    const int S = static_cast<int>(features.size());
    crf::ScaleVars sv;
    sv.f = features;
    sv.h = features;
    for (int s = 0; s < S; ++s) sv.a.push_back(get(p, prefix + ".crf.a." + std::to_string(s)));
    h = crf::infer(sv, crf_vars(p, prefix + ".crf", S, cfg), cfg).h;
  }
  return relu(conv_layer(p, prefix + ".fuse", concat(h), 0));
}

Var activate(Var head, Task task) {
  switch (task) {
    case Task::Contour: return sigmoid(head);
    case Task::Depth: return head;
    case Task::Seg: return softmax_channels(head);
  }
  throw std::invalid_argument("activate: unknown task");
}

}  // namespace

ForwardVars forward(const VarMap& p, Var image, const NetSpec& spec) {
  spec.validate();
  const Tensor& img = image.value();
  require_image(img, "forward");
  if (img.channels() != spec.in_channels)
    throw ShapeError("forward: image has " + std::to_string(img.channels()) + " channels, network expects " +
                     std::to_string(spec.in_channels));
  const int m = spec.input_multiple();
  if (img.height() % m || img.width() % m)
    throw ShapeError("forward: image sides must be multiples of " + std::to_string(m));
  const int L = spec.layers();

  std::vector<Var> taps;
  Var x = image;
  for (int b = 0; b < L; ++b) {
    x = maxpool2d(relu(conv_layer(p, "front." + std::to_string(b), x, 1)), 2, 2);
    taps.push_back(x);
  }

  ForwardVars fw;
  if (!spec.hierarchical()) {
    std::vector<Var> up;
    for (int l = 0; l < L; ++l) up.push_back(deconv_layer(p, "base." + std::to_string(l) + ".align", taps[l], 2 << l));
    Var fused = relu(conv_layer(p, "base.fuse", concat(up), 0));
    fw.heads.push_back(conv_layer(p, "base.head", fused, 0));
  } else {
    std::vector<Var> layer_out;
    for (int l = 0; l < L; ++l) {
      const std::string pre = "l1." + std::to_string(l);
      Var fD = relu(deconv_layer(p, pre + ".D", taps[l], 2));
      Var fC = deconv_layer(p, pre + ".Calign", relu(conv_layer(p, pre + ".C", taps[l], 1)), 2);
      Var fM = deconv_layer(p, pre + ".M", maxpool2d(taps[l], 2, 2), 4);
      Var g = fuse(p, pre, {fD, fC, fM}, spec);
      if (l > 0) g = deconv_layer(p, pre + ".align", g, 1 << l);
      layer_out.push_back(g);
      fw.heads.push_back(conv_layer(p, pre + ".head", g, 0));
    }
    Var top = fuse(p, "l2", layer_out, spec);
    fw.heads.push_back(conv_layer(p, "l2.head", top, 0));
  }

  for (Var h : fw.heads) fw.preds.push_back(activate(h, spec.task));
  if (!spec.deep_supervision()) {
    fw.final_pred = fw.preds.back();
  } else {
    Var acc = fw.preds[0];
    for (std::size_t i = 1; i < fw.preds.size(); ++i) acc = acc + fw.preds[i];
    fw.final_pred = scale(acc, 1.0 / static_cast<double>(fw.preds.size()));
  }
  return fw;
}

Tensor predict(const TensorMap& params, const Tensor& image, const NetSpec& spec) {
  Tape tape;
  const VarMap p = lift_params(tape, params, false);
  return forward(p, tape.constant(image), spec).final_pred.value();
}

Var head_loss(Var head, const Tensor& target, Task task, bool hed_beta) {
  switch (task) {
    case Task::Contour: return balanced_bce(sigmoid(head), target, hed_beta);
    case Task::Depth: {
      if (target.channels() != 2) throw ShapeError("depth target must be [2, H, W] (depth, mask)");
      return l2_loss(head, target.channel_slice(0, 1), target.channel_slice(1, 1));
    }
    case Task::Seg: return ce_loss(head, target);
  }
  throw std::invalid_argument("head_loss: unknown task");
}

LossVars network_loss(const ForwardVars& fw, const Tensor& target, const NetSpec& spec, bool hed_beta) {
  LossVars lv;
  const int n = static_cast<int>(fw.heads.size());
  for (int i = spec.deep_supervision() ? 0 : n - 1; i < n; ++i) {
    Var l = head_loss(fw.heads[i], target, spec.task, hed_beta);
    lv.per_head.emplace_back(i, l);
    lv.total = lv.total.valid() ? lv.total + l : l;
  }
  return lv;
}

}  // namespace agcrf::net
