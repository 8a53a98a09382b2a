#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "agcrf/net.hpp"
#include "agcrf/rng.hpp"
#include "net_internal.hpp"

namespace agcrf::net {

Preset parse_preset(const std::string& name) {
  for (Preset p : {Preset::Baseline, Preset::NoAgcrf, Preset::Crf, Preset::NoDeepSup, Preset::Plag, Preset::Flag,
                   Preset::FlagCk})
    if (preset_name(p) == name) return p;
  throw std::invalid_argument("unknown preset '" + name +
                              "' (expected baseline, no-agcrf, crf, no-deepsup, plag, flag or flag-ck)");
}

std::string preset_name(Preset p) {
  switch (p) {
    case Preset::Baseline: return "baseline";
    case Preset::NoAgcrf: return "no-agcrf";
    case Preset::Crf: return "crf";
    case Preset::NoDeepSup: return "no-deepsup";
    case Preset::Plag: return "plag";
    case Preset::Flag: return "flag";
    case Preset::FlagCk: return "flag-ck";
  }
  return "?";
}

const std::vector<Preset>& ablation_presets() {
  static const std::vector<Preset> order{Preset::Baseline, Preset::NoAgcrf, Preset::Crf, Preset::NoDeepSup,
                                         Preset::Plag,     Preset::Flag,    Preset::FlagCk};
  return order;
}

crf::AgcrfConfig NetSpec::crf_config() const {
  crf::AgcrfConfig c;
  c.variant = variant;
  c.conditional_kernels = conditional_kernels;
  c.iterations = iterations;
  c.attention_sign = attention_sign;
  c.attention_mode = attention_mode;
  c.unary_weight = crf::UnaryWeight::Conv1x1;
  c.gates = preset == Preset::Crf ? crf::GateOverride::Open : crf::GateOverride::None;
  return c;
}

void NetSpec::apply_preset(Preset p) {
  preset = p;
  variant = p == Preset::Plag ? crf::Variant::Plag : crf::Variant::Flag;
  conditional_kernels = p == Preset::FlagCk;
}

int NetSpec::input_multiple() const {
  // L pools of 2, then the M branch pools the last tap once more.
  return 1 << (layers() + 1);
}

void NetSpec::validate() const {
  if (front_channels.empty()) throw std::invalid_argument("net: need at least one front-end block");
  for (int c : front_channels)
    if (c < 1) throw std::invalid_argument("net: front-end channel counts must be positive");
  if (crf_channels < 1) throw std::invalid_argument("net: crf_channels must be positive");
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("net: channel counts must be positive");
  if (task == Task::Seg && out_channels < 2) throw std::invalid_argument("net: segmentation needs >= 2 classes");
  if (task != Task::Seg && out_channels != 1) throw std::invalid_argument("net: contour and depth heads have one channel");
  crf_config().validate();
}

std::string NetSpec::echo() const {
  std::ostringstream os;
  os << "attention=" << (attention_mode == crf::AttentionMode::Scalar ? "scalar" : "channel") << "\n";
  os << "ck=" << (conditional_kernels ? "on" : "off") << "\n";
  os << "crf_channels=" << crf_channels << "\n";
  os << "front=";
  for (std::size_t i = 0; i < front_channels.size(); ++i) os << (i ? "," : "") << front_channels[i];
  os << "\nin_channels=" << in_channels << "\niterations=" << iterations << "\nout_channels=" << out_channels
     << "\npreset=" << preset_name(preset) << "\nsign=" << attention_sign << "\ntask=" << task_name(task)
     << "\nvariant=" << (variant == crf::Variant::Plag ? "plag" : "flag") << "\n";
  return os.str();
}

NetSpec NetSpec::from_pairs(const std::map<std::string, std::string>& kv) {
  NetSpec s;
  // The preset goes first so explicit variant/ck keys can refine it.
  if (auto it = kv.find("preset"); it != kv.end()) s.apply_preset(parse_preset(it->second));
  for (const auto& [k, v] : kv) {
    try {
      if (k == "attention") {
        if (v == "scalar") s.attention_mode = crf::AttentionMode::Scalar;
        else if (v == "channel") s.attention_mode = crf::AttentionMode::PerChannel;
        else throw std::invalid_argument("attention must be scalar or channel");
      } else if (k == "crf_channels") s.crf_channels = std::stoi(v);
      else if (k == "front") {
        s.front_channels.clear();
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) s.front_channels.push_back(std::stoi(item));
      } else if (k == "in_channels") s.in_channels = std::stoi(v);
      else if (k == "iterations") s.iterations = std::stoi(v);
      else if (k == "out_channels") s.out_channels = std::stoi(v);
      else if (k == "preset") continue;
      else if (k == "variant") s.variant = parse_variant(v);
      else if (k == "ck") s.conditional_kernels = parse_switch(v, "ck");
      else if (k == "sign") s.attention_sign = std::stoi(v);
      else if (k == "task") s.task = parse_task(v);
      else throw std::invalid_argument("unknown spec key '" + k + "'");
    } catch (const std::out_of_range&) {
      throw std::invalid_argument("value out of range for key '" + k + "'");
    } catch (const std::invalid_argument& e) {
      // std::stoi reports only its own name.
      if (std::string(e.what()) == "stoi") throw std::invalid_argument("bad integer '" + v + "' for key '" + k + "'");
      throw;
    }
  }
  return s;
}

crf::Variant parse_variant(const std::string& v) {
  if (v == "flag") return crf::Variant::Flag;
  if (v == "plag") return crf::Variant::Plag;
  throw std::invalid_argument("variant must be flag or plag, got '" + v + "'");
}

bool parse_switch(const std::string& v, const std::string& key) {
  if (v == "on" || v == "1" || v == "true") return true;
  if (v == "off" || v == "0" || v == "false") return false;
  throw std::invalid_argument(key + " must be on or off, got '" + v + "'");
}

// ---- parameter layout -------------------------------------------------------

Upsample upsample_for(int factor) {
  if (factor == 2) return {4, 2, 1};
  return {factor, factor, 0};
}

namespace {

void add(std::vector<ParamInfo>& out, std::string name, Shape shape, double fan_in) {
  out.push_back({std::move(name), std::move(shape), fan_in, ParamInfo::Uniform, {}});
}

void conv(std::vector<ParamInfo>& out, const std::string& name, int co, int ci, int k) {
  add(out, name + ".w", {co, ci, k, k}, static_cast<double>(ci) * k * k);
  add(out, name + ".b", {co}, static_cast<double>(ci) * k * k);
}

void deconv(std::vector<ParamInfo>& out, const std::string& name, int ci, int co, Upsample u) {
  const double fan = static_cast<double>(ci) * u.k * u.k / (u.s * u.s);
  add(out, name + ".w", {ci, co, u.k, u.k}, fan);
  add(out, name + ".b", {co}, fan);
}

void crf_params(std::vector<ParamInfo>& out, const std::string& prefix, int scales, int c, const crf::AgcrfConfig& cfg) {
  const int ca = crf::attention_channels(cfg, c);
  for (int p = 0; p < crf::pair_count(scales); ++p) {
    const std::string ps = std::to_string(p);
    const std::string L = prefix + ".L." + ps, le = prefix + ".ler." + ps, lr = prefix + ".lre." + ps;
    if (!cfg.conditional_kernels) {
      add(out, L, {c, c, 3, 3}, 9.0 * c);
      add(out, le, {ca, c, 3, 3}, 9.0 * c);
      add(out, lr, {ca, c, 3, 3}, 9.0 * c);
    } else {
      out.push_back({prefix + ".WL." + ps, {c * c * 9, 2 * c, 1, 1}, 0, ParamInfo::Zero, {}});
      out.push_back({prefix + ".bL." + ps, {c * c * 9}, 9.0 * c, ParamInfo::CopyStream, L});
      out.push_back({prefix + ".Wle." + ps, {ca * c * 9, c, 1, 1}, 0, ParamInfo::Zero, {}});
      out.push_back({prefix + ".ble." + ps, {ca * c * 9}, 9.0 * c, ParamInfo::CopyStream, le});
      out.push_back({prefix + ".Wlr." + ps, {ca * c * 9, c, 1, 1}, 0, ParamInfo::Zero, {}});
      out.push_back({prefix + ".blr." + ps, {ca * c * 9}, 9.0 * c, ParamInfo::CopyStream, lr});
    }
  }
  for (int s = 0; s < scales; ++s) out.push_back({prefix + ".a." + std::to_string(s), {c, c, 1, 1}, 0, ParamInfo::Zero, {}});
}

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::vector<ParamInfo> param_layout(const NetSpec& spec) {
  spec.validate();
  std::vector<ParamInfo> out;
  const int L = spec.layers(), c = spec.crf_channels;
  int prev = spec.in_channels;
  for (int b = 0; b < L; ++b) {
    conv(out, "front." + std::to_string(b), spec.front_channels[b], prev, 3);
    prev = spec.front_channels[b];
  }
  const crf::AgcrfConfig cfg = spec.crf_config();
  if (!spec.hierarchical()) {
    for (int l = 0; l < L; ++l)
      deconv(out, "base." + std::to_string(l) + ".align", spec.front_channels[l], c, upsample_for(2 << l));
    conv(out, "base.fuse", c, L * c, 1);
    conv(out, "base.head", spec.out_channels, c, 1);
    return out;
  }
  for (int l = 0; l < L; ++l) {
    const std::string p = "l1." + std::to_string(l);
    const int cl = spec.front_channels[l];
    deconv(out, p + ".D", cl, c, upsample_for(2));
    conv(out, p + ".C", c, cl, 3);
    deconv(out, p + ".Calign", c, c, upsample_for(2));
    deconv(out, p + ".M", cl, c, upsample_for(4));
    if (spec.uses_agcrf()) crf_params(out, p + ".crf", 3, c, cfg);
    conv(out, p + ".fuse", c, 3 * c, 1);
    if (l > 0) deconv(out, p + ".align", c, c, upsample_for(1 << l));
    conv(out, p + ".head", spec.out_channels, c, 1);
  }
  if (spec.uses_agcrf()) crf_params(out, "l2.crf", L, c, cfg);
  conv(out, "l2.fuse", c, L * c, 1);
  conv(out, "l2.head", spec.out_channels, c, 1);
  return out;
}

std::map<std::string, Shape> param_shapes(const NetSpec& spec) {
  std::map<std::string, Shape> m;
  for (const ParamInfo& p : param_layout(spec)) m[p.name] = p.shape;
  return m;
}

Tensor uniform_tensor(const Shape& shape, double fan_in, std::uint64_t seed, const std::string& stream) {
  Tensor t(shape);
  const double r = std::sqrt(6.0 / fan_in);  // He-uniform: keeps ReLU activations from shrinking layer by layer
  SplitMix64 rng(seed, name_hash(stream));
  for (double& v : t.raw()) v = rng.uniform(-r, r);
  return t;
}

TensorMap init_params(const NetSpec& spec, std::uint64_t seed) {
  TensorMap m;
  for (const ParamInfo& p : param_layout(spec)) {
    switch (p.init) {
      case ParamInfo::Uniform: m[p.name] = uniform_tensor(p.shape, p.fan_in, seed, p.name); break;
      case ParamInfo::Zero: m[p.name] = Tensor(p.shape); break;
      case ParamInfo::CopyStream: m[p.name] = uniform_tensor(p.shape, p.fan_in, seed, p.source); break;
    }
  }
  return m;
}

std::size_t param_count(const TensorMap& params) {
  std::size_t n = 0;
  for (const auto& [k, v] : params) n += v.size();
  return n;
}

VarMap lift_params(Tape& tape, const TensorMap& params, bool trainable) {
  VarMap m;
  for (const auto& [k, v] : params) m[k] = trainable ? tape.parameter(v) : tape.constant(v);
  return m;
}

void save_model(const std::filesystem::path& dir, const TensorMap& params, const NetSpec& spec) {
  save_checkpoint(dir, params);
  std::ofstream out(dir / "spec.txt", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "spec.txt").string());
  out << spec.echo();
}

TensorMap load_model(const std::filesystem::path& dir, NetSpec& spec) {
  std::ifstream in(dir / "spec.txt");
  if (!in) throw IoError("checkpoint " + dir.string() + " has no spec.txt");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("bad spec.txt line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  spec = NetSpec::from_pairs(kv);
  spec.validate();
  TensorMap params = load_checkpoint(dir);
  const auto shapes = param_shapes(spec);
  if (shapes.size() != params.size()) throw IoError("checkpoint parameters do not match spec.txt");
  for (const auto& [name, shape] : shapes) {
    auto it = params.find(name);
    if (it == params.end() || it->second.shape() != shape)
      throw IoError("checkpoint parameter '" + name + "' missing or misshapen");
  }
  return params;
}

std::vector<double> moving_average(const std::vector<double>& v, int window) {
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= static_cast<std::size_t>(window)) acc -= v[i - window];
    out[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

}  // namespace agcrf::net
