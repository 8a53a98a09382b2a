#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "agcrf/net.hpp"
#include "agcrf/synth.hpp"

// Command implementations behind the agcrf binary. Each command is a plain
// function so tests can drive it without spawning a process.

namespace agcrf::app {

using KeyValues = std::map<std::string, std::string>;

/// Malformed configuration or arguments.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat `key = value` text. Blank lines and lines starting with '#' are
/// skipped; a repeated key is an error.
KeyValues parse_key_values(const std::string& text, const std::string& source);
KeyValues read_key_values(const std::filesystem::path& path);

/// Network and optimizer settings for train/ablate.
///
/// Keys: the network keys of NetSpec (attention, ck, crf_channels, front,
/// iterations, preset, sign, task, variant) plus batch, clip_norm, epochs, hed_beta, lr,
/// max_steps, momentum, seed, threads, weight_decay. in_channels and
/// out_channels are taken from the dataset.
struct RunConfig {
  net::NetSpec net;
  net::TrainConfig train;
  /// True when the task was given explicitly; it must then match the data.
  bool task_explicit = false;

  /// The effective configuration: optimizer keys, then network keys, one
  /// key=value per line.
  std::string echo() const;
  static RunConfig from_pairs(const KeyValues& kv);
};

/// Overlays `over` onto `base`.
KeyValues merge(KeyValues base, const KeyValues& over);

// ---- commands ---------------------------------------------------------------

/// Writes a synthetic dataset described by `kv` (SynthSpec keys).
void cmd_gen(const KeyValues& kv, const std::filesystem::path& out);

struct TrainOutcome {
  net::TrainResult result;
  net::NetSpec spec;
};

/// Trains on `<data>/train` and writes the checkpoint, spec.txt, config.txt
/// and loss.csv into `out`. Progress goes to `log`.
TrainOutcome cmd_train(const RunConfig& cfg, const std::filesystem::path& data, const std::filesystem::path& out,
                       std::ostream& log);

/// Runs the model on one image (.agt, .ppm, .pgm) or every `*.img.agt` in a
/// directory. Writes `<stem>.pred.agt` and a min-max normalized
/// `<stem>.pred.pgm` per input. Returns the number of images.
int cmd_infer(const std::filesystem::path& model, const std::filesystem::path& input,
              const std::filesystem::path& out);

/// Ordered (name, value) pairs.
using Report = std::vector<std::pair<std::string, double>>;

std::string format_report(const Report& r);

/// Task metrics over predictions and targets.
Report evaluate(Task task, const std::vector<Tensor>& preds, const std::vector<Tensor>& targets, int classes);

/// Pairs `<pred>/<i>.pred.agt` with `<gt>/<i>.gt.agt`.
Report cmd_eval(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir, Task task);

struct AblationRow {
  net::Preset preset;
  Report metrics;
  double final_loss = 0.0;
  double seconds = 0.0;
};

/// The default preset list: baseline, no-agcrf, crf, plag, flag, flag-ck.
std::vector<net::Preset> default_ablation_presets();

/// Trains each preset on `<data>/train` from the same seed and evaluates on
/// `<data>/test`. Rows come back in the canonical preset order whatever the
/// order of `presets`.
std::vector<AblationRow> cmd_ablate(const RunConfig& base, const std::filesystem::path& data,
                                    std::vector<net::Preset> presets, std::ostream& log);

std::string format_ablation(const std::vector<AblationRow>& rows);

// ---- oracle checks ----------------------------------------------------------

struct CheckRow {
  std::string name;
  bool pass = false;
  double value = 0.0;      // residual, error or gap
  double tolerance = 0.0;  // 0 when the value is informational
  std::string note;
};

std::vector<CheckRow> run_checks(std::uint64_t seed);
std::string format_checks(const std::vector<CheckRow>& rows);

}  // namespace agcrf::app
