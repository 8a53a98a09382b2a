// agcrf: data generation, training, inference, evaluation, ablations and
// oracle checks from one binary.
//
// Errors go to stderr as a single line "error: <kind>: <message>" with exit
// code 1 (2 for command-line usage errors).

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "agcrf/app.hpp"
#include "agcrf/io.hpp"
#include "agcrf/oracle.hpp"

namespace fs = std::filesystem;
using namespace agcrf;

namespace {

// Flags shared by train and ablate; unset flags leave the config file alone.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, iters, epochs;
  std::optional<double> lr;
  std::string preset, variant, ck, sign, task;

  app::KeyValues pairs() const {
    app::KeyValues kv;
    if (seed) kv["seed"] = std::to_string(*seed);
    if (threads) kv["threads"] = std::to_string(*threads);
    if (iters) kv["iterations"] = std::to_string(*iters);
    if (epochs) kv["epochs"] = std::to_string(*epochs);
    if (lr) kv["lr"] = format_double(*lr);
    if (!preset.empty()) kv["preset"] = preset;
    if (!variant.empty()) kv["variant"] = variant;
    if (!ck.empty()) kv["ck"] = ck;
    if (!sign.empty()) kv["sign"] = sign;
    if (!task.empty()) kv["task"] = task;
    return kv;
  }

  app::RunConfig resolve() const {
    const app::KeyValues file = config.empty() ? app::KeyValues{} : app::read_key_values(config);
    return app::RunConfig::from_pairs(app::merge(file, pairs()));
  }
};

void add_run_flags(CLI::App* cmd, Overrides& o, bool with_preset) {
  cmd->add_option("--config", o.config, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "seed for initialization and data order");
  cmd->add_option("--threads", o.threads, "worker threads (1 = deterministic CI mode)");
  if (with_preset) {
    cmd->add_option("--preset", o.preset, "baseline|no-agcrf|crf|no-deepsup|plag|flag|flag-ck");
    cmd->add_option("--variant", o.variant, "attention linear terms from latent (flag) or observed (plag) features")
        ->check(CLI::IsMember({"flag", "plag"}));
    cmd->add_option("--ck", o.ck, "conditional kernels")->check(CLI::IsMember({"on", "off"}));
  }
  cmd->add_option("--iters", o.iters, "mean-field iterations T");
  cmd->add_option("--sign", o.sign, "attention sign, e.g. --sign=-")->check(CLI::IsMember({"+", "-"}));
  cmd->add_option("--task", o.task, "contour|depth|seg")->check(CLI::IsMember({"contour", "depth", "seg"}));
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--lr", o.lr, "learning rate");
}

void write_text(const fs::path& p, const std::string& s) {
  write_file(p, std::vector<unsigned char>(s.begin(), s.end()));
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int fail(const char* kind, const std::string& what) {
  std::cerr << "error: " << kind << ": " << one_line(what) << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Attention-gated CRF toolkit"};
  cli.require_subcommand(1);

  // gen
  auto* gen = cli.add_subcommand("gen", "write a synthetic dataset");
  std::string gen_config, gen_task;
  fs::path gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "key=value dataset spec")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--task", gen_task, "contour|depth|seg")->check(CLI::IsMember({"contour", "depth", "seg"}));

  // train
  auto* train = cli.add_subcommand("train", "train a model on <data>/train");
  Overrides train_o;
  fs::path train_data, train_out;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint directory")->required();
  add_run_flags(train, train_o, true);

  // infer
  auto* infer = cli.add_subcommand("infer", "predict maps for an image or a directory of *.img.agt");
  fs::path infer_model, infer_input, infer_out;
  infer->add_option("--model", infer_model, "checkpoint directory")->required();
  infer->add_option("--input", infer_input, "image file or directory")->required();
  infer->add_option("--out", infer_out, "output directory")->required();

  // eval
  auto* eval = cli.add_subcommand("eval", "score predictions against ground truth");
  fs::path eval_pred, eval_gt, eval_out;
  std::string eval_task;
  eval->add_option("--pred", eval_pred, "directory of <i>.pred.agt")->required();
  eval->add_option("--gt", eval_gt, "directory of <i>.gt.agt")->required();
  eval->add_option("--task", eval_task, "contour|depth|seg")
      ->required()
      ->check(CLI::IsMember({"contour", "depth", "seg"}));
  eval->add_option("--out", eval_out, "also write the report to this file");

  // ablate
  auto* ablate = cli.add_subcommand("ablate", "train and score each preset on one dataset");
  Overrides ablate_o;
  fs::path ablate_data, ablate_out;
  std::string ablate_presets;
  ablate->add_option("--data", ablate_data, "dataset directory")->required();
  ablate->add_option("--presets", ablate_presets, "comma-separated subset (default: the six table presets)");
  ablate->add_option("--out", ablate_out, "also write the table to this file");
  add_run_flags(ablate, ablate_o, false);

  // check
  auto* check = cli.add_subcommand("check", "run the oracle checks");
  std::uint64_t check_seed = 1;
  check->add_option("--seed", check_seed, "seed for the random instances");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << std::endl;
    return 2;
  }

  try {
    if (*gen) {
      app::KeyValues kv = gen_config.empty() ? app::KeyValues{} : app::read_key_values(gen_config);
      if (gen_seed) kv["seed"] = std::to_string(*gen_seed);
      if (!gen_task.empty()) kv["task"] = gen_task;
      app::cmd_gen(kv, gen_out);
      std::cout << read_manifest(gen_out).echo();
    } else if (*train) {
      const app::RunConfig cfg = train_o.resolve();
      const auto o = app::cmd_train(cfg, train_data, train_out, std::cerr);
      std::cout << "steps\t" << o.result.steps << "\nparameters\t" << net::param_count(o.result.params)
                << "\ncheckpoint\t" << train_out.string() << "\n";
    } else if (*infer) {
      const int n = app::cmd_infer(infer_model, infer_input, infer_out);
      std::cout << "images\t" << n << "\n";
    } else if (*eval) {
      const std::string report = app::format_report(app::cmd_eval(eval_pred, eval_gt, parse_task(eval_task)));
      std::cout << report;
      if (!eval_out.empty()) write_text(eval_out, report);
    } else if (*ablate) {
      const app::RunConfig cfg = ablate_o.resolve();
      std::vector<net::Preset> presets;
      if (ablate_presets.empty()) {
        presets = app::default_ablation_presets();
      } else {
        std::stringstream ss(ablate_presets);
        std::string item;
        while (std::getline(ss, item, ',')) presets.push_back(net::parse_preset(item));
      }
      const std::string table = app::format_ablation(app::cmd_ablate(cfg, ablate_data, presets, std::cerr));
      std::cout << table;
      if (!ablate_out.empty()) write_text(ablate_out, table);
    } else if (*check) {
      const auto rows = app::run_checks(check_seed);
      std::cout << app::format_checks(rows);
      const bool ok = std::all_of(rows.begin(), rows.end(), [](const app::CheckRow& r) { return r.pass; });
      if (!ok) return fail("check", "one or more oracle checks failed");
    }
  } catch (const app::ConfigError& e) {
    return fail("config", e.what());
  } catch (const IoError& e) {
    return fail("io", e.what());
  } catch (const ShapeError& e) {
    return fail("shape", e.what());
  } catch (const net::TrainingError& e) {
    return fail("training", e.what());
  } catch (const oracle::NonNormalizableError& e) {
    return fail("oracle", e.what());
  } catch (const std::invalid_argument& e) {
    return fail("config", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}
