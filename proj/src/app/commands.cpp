#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "agcrf/app.hpp"
#include "agcrf/io.hpp"
#include "agcrf/losses.hpp"
#include "agcrf/metrics.hpp"

namespace fs = std::filesystem;

namespace agcrf::app {
namespace {

std::string fmt(double x, const char* f) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::vector<unsigned char>(text.begin(), text.end()));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// "3.img.agt" -> "3", "cat.ppm" -> "cat".
std::string image_stem(const fs::path& p) {
  const std::string name = p.filename().string();
  if (ends_with(name, ".img.agt")) return name.substr(0, name.size() - 8);
  return p.stem().string();
}

Tensor load_image(const fs::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".agt") return read_agt(p);
  if (ext == ".ppm") return read_ppm(p);
  if (ext == ".pgm") return read_pgm(p);
  throw IoError("unsupported image format '" + p.string() + "' (expected .agt, .ppm or .pgm)");
}

// Names in directory order are not portable; sort numerically where possible.
bool stem_less(const std::string& a, const std::string& b) {
  const bool na = !a.empty() && std::all_of(a.begin(), a.end(), ::isdigit);
  const bool nb = !b.empty() && std::all_of(b.begin(), b.end(), ::isdigit);
  if (na && nb && a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

std::vector<fs::path> files_with_suffix(const fs::path& dir, const std::string& suffix) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: '" + dir.string() + "'");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && ends_with(e.path().filename().string(), suffix)) out.push_back(e.path());
  std::sort(out.begin(), out.end(), [&](const fs::path& a, const fs::path& b) {
    const std::string fa = a.filename().string(), fb = b.filename().string();
    return stem_less(fa.substr(0, fa.size() - suffix.size()), fb.substr(0, fb.size() - suffix.size()));
  });
  return out;
}

// Fills in the data-dependent parts of the network spec.
net::NetSpec spec_for_data(const RunConfig& cfg, const Dataset& data) {
  if (data.samples.empty()) throw ConfigError("dataset split is empty");
  if (cfg.task_explicit && cfg.net.task != data.task)
    throw ConfigError("task mismatch: config says " + task_name(cfg.net.task) + ", dataset holds " +
                      task_name(data.task));
  net::NetSpec spec = cfg.net;
  spec.task = data.task;
  spec.in_channels = data.samples.front().image.channels();
  spec.out_channels = data.task == Task::Seg ? data.classes : 1;
  spec.validate();
  return spec;
}

std::string loss_csv(const std::vector<net::LossRecord>& trace) {
  std::string out = "step,head_index,loss\n";
  for (const auto& r : trace) out += std::to_string(r.step) + "," + std::to_string(r.head) + "," + format_double(r.loss) + "\n";
  return out;
}

// Visualization map for a prediction: class index for segmentation, the
// prediction itself otherwise, then min-max normalized.
Tensor display_map(const Tensor& pred, Task task) {
  if (task == Task::Seg) return normalize_for_display(argmax_channels(pred));
  return normalize_for_display(pred.channel_slice(0, 1));
}

void check_target(const Tensor& t, Task task, const std::string& where) {
  if (t.rank() != 3) throw ConfigError(where + ": target must be [C, H, W]");
  switch (task) {
    case Task::Contour:
      if (t.channels() != 1) throw ConfigError(where + ": contour target must have one channel");
      for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i] != 0.0 && t[i] != 1.0) throw ConfigError(where + ": contour target is not binary");
      break;
    case Task::Depth:
      if (t.channels() != 2) throw ConfigError(where + ": depth target must be [2, H, W] (depth, mask)");
      break;
    case Task::Seg:
      if (t.channels() != 1) throw ConfigError(where + ": segmentation target must hold one label channel");
      break;
  }
}

}  // namespace

void cmd_gen(const KeyValues& kv, const fs::path& out) {
  SynthSpec spec;
  try {
    spec = SynthSpec::from_pairs(kv);
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  write_dataset(out, spec);
}

TrainOutcome cmd_train(const RunConfig& cfg, const fs::path& data, const fs::path& out, std::ostream& log) {
  const Dataset train = read_dataset(data, "train");
  TrainOutcome o;
  o.spec = spec_for_data(cfg, train);
  net::TrainConfig tc = cfg.train;
  tc.on_epoch = [&](int epoch, double loss) { log << "epoch " << epoch << " loss " << fmt(loss, "%.6g") << "\n"; };
  o.result = net::train(train.samples, o.spec, tc, net::init_params(o.spec, cfg.train.seed));
  net::save_model(out, o.result.params, o.spec);
  RunConfig effective = cfg;
  effective.net = o.spec;
  write_text(out / "config.txt", effective.echo());
  write_text(out / "loss.csv", loss_csv(o.result.trace));
  return o;
}

int cmd_infer(const fs::path& model, const fs::path& input, const fs::path& out) {
  net::NetSpec spec;
  const TensorMap params = net::load_model(model, spec);
  std::vector<fs::path> inputs;
  if (fs::is_directory(input)) {
    inputs = files_with_suffix(input, ".img.agt");
    if (inputs.empty()) throw IoError("no *.img.agt files in '" + input.string() + "'");
  } else {
    if (!fs::exists(input)) throw IoError("no such file '" + input.string() + "'");
    inputs.push_back(input);
  }
  fs::create_directories(out);
  for (const fs::path& p : inputs) {
    const Tensor image = load_image(p);
    const Tensor pred = net::predict(params, image, spec);
    const std::string stem = image_stem(p);
    write_agt(out / (stem + ".pred.agt"), pred);
    write_pgm(out / (stem + ".pred.pgm"), display_map(pred, spec.task));
  }
  return static_cast<int>(inputs.size());
}

std::string format_report(const Report& r) {
  std::string out;
  for (const auto& [k, v] : r) out += k + "\t" + fmt(v, v == std::floor(v) && std::abs(v) < 1e15 ? "%.0f" : "%.6f") + "\n";
  return out;
}

Report evaluate(Task task, const std::vector<Tensor>& preds, const std::vector<Tensor>& targets, int classes) {
  if (preds.size() != targets.size()) throw std::invalid_argument("evaluate: prediction and target counts differ");
  const double n = static_cast<double>(preds.size());
  switch (task) {
    case Task::Contour: {
      const FMeasure f = f_measure(preds, targets);
      return {{"ods", f.ods}, {"ois", f.ois}, {"ap", f.ap}, {"ods_threshold", f.ods_threshold}, {"images", n}};
    }
    case Task::Depth: {
      DepthAccumulator acc;
      for (std::size_t i = 0; i < preds.size(); ++i)
        acc.add(preds[i].channel_slice(0, 1), targets[i].channel_slice(0, 1), targets[i].channel_slice(1, 1));
      const DepthMetrics m = acc.result();
      return {{"rel", m.rel},         {"sq_rel", m.sq_rel}, {"rmse", m.rmse},     {"rmse_log", m.rmse_log},
              {"log10", m.log10},     {"sc_inv", m.sc_inv}, {"delta1", m.delta1}, {"delta2", m.delta2},
              {"delta3", m.delta3},   {"pixels", static_cast<double>(m.count)}, {"images", n}};
    }
    case Task::Seg: {
      ConfusionMatrix cm(classes);
      for (std::size_t i = 0; i < preds.size(); ++i)
        cm.add(preds[i].channels() > 1 ? argmax_channels(preds[i]) : preds[i], targets[i]);
      const SegMetrics m = cm.result();
      return {{"pix_acc", m.pix_acc}, {"miou", m.miou}, {"images", n}};
    }
  }
  throw std::invalid_argument("evaluate: unknown task");
}

Report cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, Task task) {
  const std::vector<fs::path> gts = files_with_suffix(gt_dir, ".gt.agt");
  if (gts.empty()) throw IoError("no *.gt.agt files in '" + gt_dir.string() + "'");
  std::vector<Tensor> preds, targets;
  int classes = 2;
  for (const fs::path& g : gts) {
    const std::string name = g.filename().string();
    const std::string stem = name.substr(0, name.size() - 7);
    const fs::path p = pred_dir / (stem + ".pred.agt");
    if (!fs::exists(p)) throw IoError("missing prediction '" + p.string() + "'");
    Tensor t = read_agt(g), y = read_agt(p);
    check_target(t, task, g.string());
    if (y.rank() != 3 || y.height() != t.height() || y.width() != t.width())
      throw ConfigError(p.string() + ": prediction size does not match the target");
    if (task != Task::Seg && y.channels() != 1) throw ConfigError(p.string() + ": prediction must have one channel");
    if (task == Task::Seg) {
      classes = std::max(classes, y.channels());
      for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i] != kIgnoreLabel) classes = std::max(classes, static_cast<int>(t[i]) + 1);
    }
    preds.push_back(std::move(y));
    targets.push_back(std::move(t));
  }
  return evaluate(task, preds, targets, classes);
}

std::vector<net::Preset> default_ablation_presets() {
  using net::Preset;
  return {Preset::Baseline, Preset::NoAgcrf, Preset::Crf, Preset::Plag, Preset::Flag, Preset::FlagCk};
}

std::vector<AblationRow> cmd_ablate(const RunConfig& base, const fs::path& data, std::vector<net::Preset> presets,
                                    std::ostream& log) {
  const auto& order = net::ablation_presets();
  auto rank = [&](net::Preset p) { return std::find(order.begin(), order.end(), p) - order.begin(); };
  std::sort(presets.begin(), presets.end(), [&](net::Preset a, net::Preset b) { return rank(a) < rank(b); });
  presets.erase(std::unique(presets.begin(), presets.end()), presets.end());

  const Dataset train = read_dataset(data, "train");
  const Dataset test = read_dataset(data, "test");
  std::vector<Tensor> targets;
  for (const Sample& s : test.samples) targets.push_back(s.target);

  std::vector<AblationRow> rows;
  for (net::Preset p : presets) {
    RunConfig cfg = base;
    cfg.net.apply_preset(p);
    const net::NetSpec spec = spec_for_data(cfg, train);
    const auto t0 = std::chrono::steady_clock::now();
    net::TrainConfig tc = cfg.train;
    double last = 0.0;
    tc.on_epoch = [&](int epoch, double loss) {
      last = loss;
      log << net::preset_name(p) << " epoch " << epoch << " loss " << fmt(loss, "%.6g") << "\n" << std::flush;
    };
    const net::TrainResult r = net::train(train.samples, spec, tc, net::init_params(spec, cfg.train.seed));
    std::vector<Tensor> preds;
    for (const Sample& s : test.samples) preds.push_back(net::predict(r.params, s.image, spec));
    AblationRow row{p, evaluate(spec.task, preds, targets, spec.out_channels), last, 0.0};
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << net::preset_name(p) << " done in " << fmt(row.seconds, "%.1f") << " s\n" << std::flush;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  if (rows.empty()) return "";
  std::string out = "preset";
  for (const auto& [k, v] : rows.front().metrics) out += "\t" + k;
  out += "\tfinal_loss\n";
  for (const auto& r : rows) {
    out += net::preset_name(r.preset);
    for (const auto& [k, v] : r.metrics) out += "\t" + fmt(v, "%.6f");
    out += "\t" + fmt(r.final_loss, "%.6g") + "\n";
  }
  return out;
}

}  // namespace agcrf::app
