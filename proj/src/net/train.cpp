#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "agcrf/net.hpp"
#include "agcrf/rng.hpp"

namespace agcrf::net {
namespace {

struct SampleResult {
  TensorMap grad;
  std::vector<std::pair<int, double>> head_losses;
  double loss = 0.0;
  std::string error;
};

SampleResult run_sample(const TensorMap& params, const Sample& s, const NetSpec& spec, bool hed_beta) {
  SampleResult r;
  try {
    r.grad = loss_gradient(params, s, spec, hed_beta, &r.loss, &r.head_losses);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

std::vector<int> epoch_order(int n, std::uint64_t seed, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  SplitMix64 rng(seed, 0x7368756666ULL, static_cast<std::uint64_t>(epoch));
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[static_cast<int>(rng.below(i + 1))]);
  return order;
}

}  // namespace

TensorMap loss_gradient(const TensorMap& params, const Sample& sample, const NetSpec& spec, bool hed_beta,
                        double* loss_out, std::vector<std::pair<int, double>>* head_losses) {
  Tape tape;
  const VarMap p = lift_params(tape, params, true);
  const ForwardVars fw = forward(p, tape.constant(sample.image), spec);
  const LossVars lv = network_loss(fw, sample.target, spec, hed_beta);
  tape.backward(lv.total);
  TensorMap g;
  for (const auto& [name, v] : p) g[name] = tape.grad(v);
  if (loss_out) *loss_out = lv.total.value()[0];
  if (head_losses)
    for (const auto& [i, l] : lv.per_head) head_losses->emplace_back(i, l.value()[0]);
  return g;
}

TrainResult train(const std::vector<Sample>& data, const NetSpec& spec, const TrainConfig& cfg, TensorMap init) {
  spec.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch < 1 || cfg.epochs < 0 || cfg.threads < 1) throw std::invalid_argument("train: invalid batch/epochs/threads");
  if (!(cfg.lr >= 0) || !(cfg.momentum >= 0) || !(cfg.weight_decay >= 0) || !(cfg.clip_norm >= 0))
    throw std::invalid_argument("train: lr, momentum, weight_decay and clip_norm must be non-negative");
  TrainResult res;
  res.params = std::move(init);
  TensorMap velocity;
  for (const auto& [k, v] : res.params) velocity[k] = Tensor(v.shape());

  const int n = static_cast<int>(data.size());
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = epoch_order(n, cfg.seed, epoch);
    double epoch_loss = 0.0;
    int epoch_samples = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) return res;
      const int bs = std::min(cfg.batch, n - start);
      std::vector<SampleResult> results(bs);
      if (cfg.threads == 1 || bs == 1) {
        for (int i = 0; i < bs; ++i) results[i] = run_sample(res.params, data[order[start + i]], spec, cfg.hed_beta);
      } else {
        std::vector<std::thread> workers;
        const int nt = std::min(cfg.threads, bs);
        for (int t = 0; t < nt; ++t)
          workers.emplace_back([&, t] {
            for (int i = t; i < bs; i += nt) results[i] = run_sample(res.params, data[order[start + i]], spec, cfg.hed_beta);
          });
        for (auto& w : workers) w.join();
      }
      // Reduce in sample order.
      std::map<int, double> head_sum;
      for (int i = 0; i < bs; ++i) {
        const SampleResult& r = results[i];
        if (!r.error.empty()) throw TrainingError("step " + std::to_string(step) + ": " + r.error, step);
        if (!std::isfinite(r.loss)) throw TrainingError("non-finite loss at step " + std::to_string(step), step);
        for (const auto& [h, l] : r.head_losses) head_sum[h] += l;
        epoch_loss += r.loss;
        ++epoch_samples;
      }
      for (const auto& [h, l] : head_sum) res.trace.push_back({step, h, l / bs});
      TensorMap grads;
      double norm2 = 0.0;
      for (const auto& [name, p] : res.params) {
        Tensor g = results[0].grad.at(name);
        for (int i = 1; i < bs; ++i) g += results[i].grad.at(name);
        g *= 1.0 / bs;
        norm2 += dot(g, g);
        grads.emplace(name, std::move(g));
      }
      const double norm = std::sqrt(norm2);
      const double shrink = cfg.clip_norm > 0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
      for (auto& [name, p] : res.params) {
        const Tensor& g = grads.at(name);
        Tensor& v = velocity[name];
        for (std::size_t j = 0; j < p.size(); ++j) {
          v[j] = cfg.momentum * v[j] + (g[j] * shrink + cfg.weight_decay * p[j]);
          p[j] -= cfg.lr * v[j];
        }
        if (!p.all_finite()) throw TrainingError("non-finite parameter '" + name + "' after step " + std::to_string(step), step);
      }
      ++step;
      res.steps = step;
    }
    if (cfg.on_epoch && epoch_samples > 0) cfg.on_epoch(epoch, epoch_loss / epoch_samples);
  }
  return res;
}

}  // namespace agcrf::net
