#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "agcrf/app.hpp"
#include "agcrf/io.hpp"
#include "support.hpp"

using namespace agcrf;
using namespace agcrf::app;
namespace fs = std::filesystem;

namespace {

fs::path tiny_dataset(const std::string& name, const std::string& task) {
  const fs::path dir = testsupport::scratch_dir(name);
  cmd_gen({{"task", task}, {"size", "16"}, {"train", "6"}, {"test", "3"}, {"seed", "3"}, {"radius_min", "3"},
           {"radius_max", "5"}},
          dir / "data");
  return dir;
}

RunConfig tiny_run(const std::string& extra_preset = "flag") {
  return RunConfig::from_pairs({{"front", "3,4"},
                                {"crf_channels", "2"},
                                {"iterations", "1"},
                                {"preset", extra_preset},
                                {"epochs", "2"},
                                {"lr", "0.001"},
                                {"clip_norm", "100"}});
}

double report_value(const Report& r, const std::string& key) {
  for (const auto& [k, v] : r)
    if (k == key) return v;
  FAIL("missing report key " << key);
  return 0.0;
}

}  // namespace

TEST_CASE("key=value parsing: comments, blanks, duplicates, junk") {
  const KeyValues kv = parse_key_values("# comment\n\n lr = 0.01 \nepochs=3\n", "t");
  CHECK(kv.at("lr") == "0.01");
  CHECK(kv.at("epochs") == "3");
  CHECK_THROWS_AS(parse_key_values("lr=1\nlr=2\n", "t"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("just words\n", "t"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("=3\n", "t"), ConfigError);
  CHECK(merge({{"a", "1"}, {"b", "2"}}, {{"b", "3"}}) == KeyValues{{"a", "1"}, {"b", "3"}});
}

TEST_CASE("run config validation") {
  CHECK_THROWS_AS(RunConfig::from_pairs({{"lr", "fast"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_pairs({{"lr", "-1"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_pairs({{"batch", "0"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_pairs({{"sign", "0"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_pairs({{"out_channels", "3"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_pairs({{"variant", "half"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_pairs({{"colour", "red"}}), ConfigError);
  CHECK(RunConfig::from_pairs({{"sign", "-"}}).net.attention_sign == -1);
  CHECK(RunConfig::from_pairs({{"sign", "+"}}).net.attention_sign == 1);
}

TEST_CASE("the config echo reads back to the same config") {
  const RunConfig rc = RunConfig::from_pairs({{"lr", "0.3"}, {"preset", "plag"}, {"ck", "on"}, {"epochs", "4"}});
  const std::string echo = rc.echo();
  CHECK(echo.find("lr=0.3\n") != std::string::npos);
  CHECK(echo.find("variant=plag\n") != std::string::npos);
  CHECK(echo.find("ck=on\n") != std::string::npos);
  KeyValues back = parse_key_values(echo, "echo");
  back.erase("in_channels");
  back.erase("out_channels");
  CHECK(RunConfig::from_pairs(back).echo() == echo);
}

TEST_CASE("gen writes the same bytes twice") {
  const fs::path a = tiny_dataset("gen1", "seg"), b = tiny_dataset("gen2", "seg");
  CHECK(testsupport::slurp(a / "data/manifest.txt") == testsupport::slurp(b / "data/manifest.txt"));
  CHECK(testsupport::slurp(a / "data/train/5.gt.agt") == testsupport::slurp(b / "data/train/5.gt.agt"));
  CHECK_THROWS_AS(cmd_gen({{"shape", "star"}}, a / "bad"), std::invalid_argument);
}

TEST_CASE("training twice gives byte-identical checkpoints and logs") {
  const fs::path dir = tiny_dataset("det", "contour");
  std::ostringstream log1, log2;
  cmd_train(tiny_run(), dir / "data", dir / "m1", log1);
  cmd_train(tiny_run(), dir / "data", dir / "m2", log2);
  CHECK(log1.str() == log2.str());
  for (const auto& e : fs::directory_iterator(dir / "m1"))
    CHECK(testsupport::slurp(e.path()) == testsupport::slurp(dir / "m2" / e.path().filename()));
  CHECK(fs::exists(dir / "m1/loss.csv"));
  CHECK(testsupport::slurp(dir / "m1/loss.csv").rfind("step,head_index,loss\n", 0) == 0);
}

TEST_CASE("train rejects a task that disagrees with the dataset") {
  const fs::path dir = tiny_dataset("mismatch", "depth");
  RunConfig rc = RunConfig::from_pairs({{"task", "seg"}, {"front", "3,4"}});
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_train(rc, dir / "data", dir / "m", log), ConfigError);
}

TEST_CASE("train, infer and eval run end to end and training lowers the loss") {
  const fs::path dir = tiny_dataset("ie", "contour");
  std::ostringstream log;
  RunConfig rc = tiny_run();
  rc.train.epochs = 40;
  rc.train.lr = 3e-3;
  cmd_train(rc, dir / "data", dir / "m", log);
  // Log lines are "epoch N loss X".
  std::vector<double> losses;
  std::istringstream in(log.str());
  std::string word, n;
  double v;
  while (in >> word >> n >> word >> v) losses.push_back(v);
  REQUIRE(losses.size() == 40u);
  CHECK(losses.back() < losses.front());

  CHECK(cmd_infer(dir / "m", dir / "data/train", dir / "p") == 6);
  CHECK(fs::exists(dir / "p/0.pred.pgm"));
  const Report r = cmd_eval(dir / "p", dir / "data/train", Task::Contour);
  CHECK(report_value(r, "images") == 6.0);
  for (const char* k : {"ods", "ois", "ap"}) {
    CHECK(report_value(r, k) >= 0.0);
    CHECK(report_value(r, k) <= 1.0);
  }
  CHECK(format_report(r).find("ods\t") == 0);
  CHECK_THROWS_AS(cmd_eval(dir / "p", dir / "data/train", Task::Depth), ConfigError);
  // Three test predictions cannot cover six training targets.
  CHECK(cmd_infer(dir / "m", dir / "data/test", dir / "q") == 3);
  CHECK_THROWS_AS(cmd_eval(dir / "q", dir / "data/train", Task::Contour), IoError);
}

TEST_CASE("infer accepts single image files in every supported format") {
  const fs::path dir = tiny_dataset("fmt", "seg");
  std::ostringstream log;
  RunConfig rc = tiny_run();
  rc.train.max_steps = 1;
  cmd_train(rc, dir / "data", dir / "m", log);
  const Tensor img = read_agt(dir / "data/test/0.img.agt");
  write_ppm(dir / "x.ppm", img);
  CHECK(cmd_infer(dir / "m", dir / "x.ppm", dir / "out") == 1);
  CHECK(read_agt(dir / "out/x.pred.agt").shape() == Shape{4, 16, 16});
  CHECK(cmd_infer(dir / "m", dir / "data/test/0.img.agt", dir / "out") == 1);
  CHECK_THROWS_AS(cmd_infer(dir / "m", dir / "nothing.png", dir / "out"), IoError);
}

TEST_CASE("ablate returns rows in table order") {
  const fs::path dir = tiny_dataset("abl", "seg");
  RunConfig rc = tiny_run();
  rc.train.max_steps = 2;
  std::ostringstream log;
  const auto rows = cmd_ablate(rc, dir / "data", {net::Preset::FlagCk, net::Preset::Baseline, net::Preset::Crf}, log);
  REQUIRE(rows.size() == 3u);
  CHECK(rows[0].preset == net::Preset::Baseline);
  CHECK(rows[1].preset == net::Preset::Crf);
  CHECK(rows[2].preset == net::Preset::FlagCk);
  CHECK(report_value(rows[0].metrics, "miou") >= 0.0);
  const std::string table = format_ablation(rows);
  CHECK(table.rfind("preset\t", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
}

TEST_CASE("the oracle check table passes") {
  const auto rows = run_checks(1);
  CHECK(rows.size() >= 10u);
  for (const CheckRow& r : rows) CHECK_MESSAGE(r.pass, r.name << " value " << r.value);
  CHECK(format_checks(rows).find("FAIL") == std::string::npos);
}
