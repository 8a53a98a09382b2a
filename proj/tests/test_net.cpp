#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "agcrf/net.hpp"
#include "agcrf/oracle.hpp"
#include "support.hpp"

using namespace agcrf;
using namespace agcrf::net;
using testsupport::random_tensor;

namespace {

NetSpec toy(Task task, Preset preset) {
  NetSpec s;
  s.task = task;
  s.out_channels = task == Task::Seg ? 3 : 1;
  s.front_channels = {3, 4};
  s.crf_channels = 2;
  s.iterations = 2;
  s.apply_preset(preset);
  return s;
}

Sample toy_sample(SplitMix64& rng, Task task, int size = 8) {
  Sample s{random_tensor(rng, {3, size, size}, 0.0, 1.0), {}};
  switch (task) {
    case Task::Contour:
      s.target = Tensor({1, size, size});
      for (double& v : s.target.values()) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
      s.target[0] = 1.0;
      break;
    case Task::Depth:
      s.target = Tensor({2, size, size});
      for (int i = 0; i < size * size; ++i) {
        s.target[i] = rng.uniform(1.0, 3.0);
        s.target[size * size + i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
      }
      break;
    case Task::Seg:
      s.target = Tensor({1, size, size});
      for (double& v : s.target.values()) v = static_cast<double>(rng.below(3));
      break;
  }
  return s;
}

double total_loss(const TensorMap& params, const Sample& s, const NetSpec& spec) {
  Tape tape;
  const VarMap p = lift_params(tape, params, false);
  return network_loss(forward(p, tape.constant(s.image), spec), s.target, spec, true).total.value()[0];
}

double sq_norm(const TensorMap& m) {
  double n = 0.0;
  for (const auto& [k, v] : m) n += dot(v, v);
  return n;
}

}  // namespace

TEST_CASE("every preset builds, and heads come out at input resolution") {
  for (Preset p : ablation_presets())
    for (Task t : {Task::Contour, Task::Depth, Task::Seg}) {
      const NetSpec spec = toy(t, p);
      const TensorMap params = init_params(spec, 3);
      SplitMix64 rng(70);
      const Sample s = toy_sample(rng, t, 16);
      Tape tape;
      const ForwardVars fw = forward(lift_params(tape, params, false), tape.constant(s.image), spec);
      CHECK(static_cast<int>(fw.heads.size()) == spec.heads());
      for (Var h : fw.heads) CHECK(h.shape() == Shape{spec.out_channels, 16, 16});
      CHECK(fw.final_pred.shape() == Shape{spec.out_channels, 16, 16});
      CHECK(predict(params, s.image, spec) == fw.final_pred.value());
    }
}

TEST_CASE("hierarchy presets have L + 1 heads and deep supervision on each") {
  const NetSpec flag = toy(Task::Contour, Preset::Flag);
  CHECK(flag.heads() == 3);
  SplitMix64 rng(71);
  const Sample s = toy_sample(rng, Task::Contour);
  const TensorMap params = init_params(flag, 1);
  Tape tape;
  const ForwardVars fw = forward(lift_params(tape, params, false), tape.constant(s.image), flag);
  CHECK(network_loss(fw, s.target, flag, true).per_head.size() == 3u);

  // Without deep supervision only the final head is scored and predicted.
  const NetSpec nds = toy(Task::Contour, Preset::NoDeepSup);
  Tape t2;
  const ForwardVars fw2 = forward(lift_params(t2, params, false), t2.constant(s.image), nds);
  const LossVars lv = network_loss(fw2, s.target, nds, true);
  REQUIRE(lv.per_head.size() == 1u);
  CHECK(lv.per_head[0].first == 2);
  CHECK(fw2.final_pred.value() == fw2.preds.back().value());
  CHECK(toy(Task::Contour, Preset::Baseline).heads() == 1);
}

TEST_CASE("a one-layer hierarchy averages its two heads") {
  NetSpec spec = toy(Task::Depth, Preset::Flag);
  spec.front_channels = {4};
  REQUIRE(spec.heads() == 2);
  SplitMix64 rng(75);
  const Sample s = toy_sample(rng, Task::Depth);
  Tape tape;
  const ForwardVars fw = forward(lift_params(tape, init_params(spec, 2), false), tape.constant(s.image), spec);
  const Tensor mean = (fw.preds[0].value() + fw.preds[1].value()) * 0.5;
  CHECK(max_abs_diff(fw.final_pred.value(), mean) < 1e-15);
}

TEST_CASE("all-zero parameters predict 0.5 for contours and uniform classes") {
  for (Task t : {Task::Contour, Task::Seg}) {
    const NetSpec spec = toy(t, Preset::Flag);
    TensorMap params = init_params(spec, 1);
    for (auto& [k, v] : params) v = Tensor::zeros(v.shape());
    SplitMix64 rng(72);
    const Tensor pred = predict(params, toy_sample(rng, t).image, spec);
    const double expect = t == Task::Contour ? 0.5 : 1.0 / 3.0;
    for (double v : pred.values()) CHECK(std::abs(v - expect) < 1e-15);
  }
}

TEST_CASE("presets share initial values for parameters they have in common") {
  const TensorMap flag = init_params(toy(Task::Contour, Preset::Flag), 9);
  const TensorMap plain = init_params(toy(Task::Contour, Preset::NoAgcrf), 9);
  for (const auto& [k, v] : plain) {
    REQUIRE(flag.count(k) == 1);
    CHECK(flag.at(k) == v);
  }
  CHECK(init_params(toy(Task::Contour, Preset::Flag), 10).at("front.0.w") != flag.at("front.0.w"));
}

TEST_CASE("FLAG+CK starts out identical to FLAG") {
  const NetSpec f = toy(Task::Contour, Preset::Flag), ck = toy(Task::Contour, Preset::FlagCk);
  TensorMap pf = init_params(f, 4);
  // Give the unary weights a value so the CRF actually contributes.
  for (auto& [k, v] : pf)
    if (k.find(".crf.a.") != std::string::npos) v = Tensor::full(v.shape(), 0.3);
  TensorMap pck = init_params(ck, 4);
  for (auto& [k, v] : pck)
    if (k.find(".crf.a.") != std::string::npos) v = Tensor::full(v.shape(), 0.3);
  SplitMix64 rng(73);
  const Tensor img = toy_sample(rng, Task::Contour).image;
  CHECK(max_abs_diff(predict(pf, img, f), predict(pck, img, ck)) < 1e-12);
}

TEST_CASE("forward output matches the stored golden tensor") {
  const NetSpec spec = toy(Task::Contour, Preset::Flag);
  TensorMap params = init_params(spec, 11);
  for (auto& [k, v] : params)
    if (k.find(".crf.a.") != std::string::npos) v = Tensor::full(v.shape(), 0.2);
  SplitMix64 rng(74);
  const Tensor pred = predict(params, toy_sample(rng, Task::Contour).image, spec);
  const std::filesystem::path golden = std::filesystem::path(AGCRF_TEST_DATA) / "golden_flag_forward.agt";
  if (std::getenv("AGCRF_REGEN_GOLDEN")) write_agt(golden, pred);
  REQUIRE(std::filesystem::exists(golden));
  CHECK(read_agt(golden) == pred);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const NetSpec spec = toy(Task::Seg, Preset::Flag);
  SplitMix64 rng(75);
  const std::vector<Sample> data{toy_sample(rng, Task::Seg), toy_sample(rng, Task::Seg)};
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 3;
  const TensorMap init = init_params(spec, 2);
  const TrainResult r = train(data, spec, cfg, init);
  CHECK(r.steps == 6);
  CHECK(r.params == init);
}

TEST_CASE("weight decay alone shrinks the norm by (1 - lr wd) per step") {
  const NetSpec spec = toy(Task::Depth, Preset::Flag);
  SplitMix64 rng(76);
  Sample s = toy_sample(rng, Task::Depth);
  for (int i = 64; i < 128; ++i) s.target[i] = 0.0;  // no valid pixel: zero data gradient
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.05;
  cfg.momentum = 0.0;
  cfg.epochs = 7;
  const TensorMap init = init_params(spec, 3);
  const TrainResult r = train({s}, spec, cfg, init);
  const double expect = std::pow(1.0 - cfg.lr * cfg.weight_decay, 7);
  CHECK(std::abs(std::sqrt(sq_norm(r.params) / sq_norm(init)) - expect) < 1e-12);
}

TEST_CASE("a few hundred steps overfit a single sample") {
  for (Task t : {Task::Contour, Task::Depth, Task::Seg}) {
    const NetSpec spec = toy(t, Preset::Flag);
    SplitMix64 rng(77);
    const Sample s = toy_sample(rng, t);
    TrainConfig cfg;
    cfg.lr = t == Task::Contour ? 3e-3 : 1e-2;
    cfg.epochs = 200;
    cfg.weight_decay = 0.0;
    cfg.clip_norm = 10.0;
    const TensorMap init = init_params(spec, 5);
    const double before = total_loss(init, s, spec);
    const TrainResult r = train({s}, spec, cfg, init);
    CHECK(total_loss(r.params, s, spec) < 0.5 * before);
    // Smoothed per-step loss ends below where it started.
    std::vector<double> trace;
    for (const LossRecord& rec : r.trace)
      if (rec.head == spec.heads() - 1) trace.push_back(rec.loss);
    const auto ma = moving_average(trace, 10);
    CHECK(ma.back() < ma[9]);
  }
}

TEST_CASE("threaded batches reproduce single-threaded training bit for bit") {
  const NetSpec spec = toy(Task::Contour, Preset::Flag);
  SplitMix64 rng(78);
  std::vector<Sample> data;
  for (int i = 0; i < 6; ++i) data.push_back(toy_sample(rng, Task::Contour));
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch = 3;
  cfg.epochs = 2;
  const TensorMap init = init_params(spec, 6);
  const TrainResult one = train(data, spec, cfg, init);
  cfg.threads = 3;
  const TrainResult three = train(data, spec, cfg, init);
  CHECK(one.params == three.params);
}

TEST_CASE("gradient clipping bounds the update") {
  const NetSpec spec = toy(Task::Contour, Preset::NoAgcrf);
  SplitMix64 rng(79);
  const Sample s = toy_sample(rng, Task::Contour);
  const TensorMap init = init_params(spec, 7);
  TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.clip_norm = 1e-3;
  cfg.epochs = 1;
  const TrainResult r = train({s}, spec, cfg, init);
  double step2 = 0.0;
  for (const auto& [k, v] : init) {
    const Tensor d = r.params.at(k) - v;
    step2 += dot(d, d);
  }
  CHECK(std::abs(std::sqrt(step2) - 1e-3) < 1e-12);
}

TEST_CASE("network gradients match finite differences") {
  for (Task t : {Task::Contour, Task::Depth, Task::Seg}) {
    const NetSpec spec = toy(t, Preset::FlagCk);
    SplitMix64 rng(80);
    const Sample s = toy_sample(rng, t);
    TensorMap params = init_params(spec, 8);
    for (auto& [k, v] : params)
      for (double& x : v.values()) x += rng.uniform(-0.05, 0.05);
    const TensorMap g = loss_gradient(params, s, spec, true);
    for (const char* name : {"front.0.w", "l1.0.crf.WL.0", "l1.1.crf.a.2", "l2.crf.blr.1", "l2.head.b"}) {
      const Tensor p0 = params.at(name);
      for (std::size_t i = 0; i < p0.size(); i += std::max<std::size_t>(1, p0.size() / 5)) {
        const oracle::ScalarFn f = [&](std::span<const double> v) {
          TensorMap q = params;
          q.at(name)[i] = v[0];
          return total_loss(q, s, spec);
        };
        std::vector<double> x{p0[i]};
        const double fd = oracle::fd_partial(f, x, 0);
        CHECK_MESSAGE(oracle::relative_error(g.at(name)[i], fd) < 1e-5, name << "[" << i << "]");
      }
    }
  }
}

TEST_CASE("models round trip and mismatched checkpoints are refused") {
  const NetSpec spec = toy(Task::Seg, Preset::Plag);
  const TensorMap params = init_params(spec, 12);
  const auto dir = testsupport::scratch_dir("model");
  save_model(dir, params, spec);
  NetSpec back;
  CHECK(load_model(dir, back) == params);
  CHECK(back.echo() == spec.echo());
  save_checkpoint(dir, init_params(toy(Task::Seg, Preset::FlagCk), 12));
  CHECK_THROWS_AS(load_model(dir, back), IoError);
}

TEST_CASE("spec keys: presets first, explicit variant and ck refine them") {
  NetSpec s = NetSpec::from_pairs({{"preset", "flag-ck"}, {"variant", "plag"}});
  CHECK(s.conditional_kernels);
  CHECK(s.variant == crf::Variant::Plag);
  s = NetSpec::from_pairs({{"preset", "plag"}, {"ck", "on"}});
  CHECK(s.variant == crf::Variant::Plag);
  CHECK(s.conditional_kernels);
  CHECK_THROWS_AS(NetSpec::from_pairs({{"depth", "3"}}), std::invalid_argument);
  CHECK_THROWS_WITH_AS(NetSpec::from_pairs({{"iterations", "two"}}), "bad integer 'two' for key 'iterations'",
                       std::invalid_argument);
  CHECK_THROWS(parse_preset("flag+ck"));
  for (Preset p : ablation_presets()) CHECK(parse_preset(preset_name(p)) == p);
}
