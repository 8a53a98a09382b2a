#include "agcrf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace agcrf {
namespace {

void check_binary(const Tensor& target) {
  for (double v : target.raw())
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("balanced_bce: target must be binary, found " + std::to_string(v));
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

struct BceTerms {
  double loss = 0.0;
  Tensor grad;  // d loss / d p
};

BceTerms bce_terms(const Tensor& prob, const Tensor& target, bool hed_beta, bool want_grad) {
  require_same_shape(prob, target, "balanced_bce");
  check_binary(target);
  const double beta = bce_beta(target, hed_beta);
  BceTerms t;
  if (want_grad) t.grad = Tensor::zeros(prob.shape());
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const double p = clamp_prob(prob[i]);
    const bool inside = prob[i] > kProbClamp && prob[i] < 1.0 - kProbClamp;
    if (target[i] == 1.0) {
      pos += std::log(p);
      if (want_grad && inside) t.grad[i] = -beta / p;
    } else {
      neg += std::log(1.0 - p);
      if (want_grad && inside) t.grad[i] = (1.0 - beta) / (1.0 - p);
    }
  }
  t.loss = -(beta * pos + (1.0 - beta) * neg);
  return t;
}

void check_label(double v, int classes, int ignore) {
  const int l = static_cast<int>(v);
  if (static_cast<double>(l) != v || ((l < 0 || l >= classes) && l != ignore))
    throw std::invalid_argument("ce_loss: label " + std::to_string(v) + " outside [0, " + std::to_string(classes) +
                                ")");
}

// Mean CE and, optionally, its gradient with respect to the logits.
double ce_impl(const Tensor& logits, const Tensor& labels, int ignore, Tensor* grad) {
  require_image(logits, "ce_loss");
  require_image(labels, "ce_loss");
  const int k = logits.channels(), h = logits.height(), w = logits.width();
  if (labels.channels() != 1 || labels.height() != h || labels.width() != w)
    throw ShapeError("ce_loss: labels must be [1, H, W] matching the logits");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    check_label(labels[i], k, ignore);
    if (static_cast<int>(labels[i]) != ignore) ++valid;
  }
  if (grad) *grad = Tensor::zeros(logits.shape());
  if (valid == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const int l = static_cast<int>(labels[i]);
    if (l == ignore) continue;
    double m = logits[i];
    for (int c = 1; c < k; ++c) m = std::max(m, logits[c * plane + i]);
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(logits[c * plane + i] - m);
    total += std::log(z) + m - logits[l * plane + i];
    if (grad) {
      for (int c = 0; c < k; ++c) (*grad)[c * plane + i] = std::exp(logits[c * plane + i] - m) / z / valid;
      (*grad)[l * plane + i] -= 1.0 / valid;
    }
  }
  return total / valid;
}

}  // namespace

double bce_beta(const Tensor& target, bool hed_beta) {
  std::size_t positives = 0;
  for (double v : target.raw()) positives += v == 1.0;
  const double frac = target.size() ? static_cast<double>(positives) / target.size() : 0.0;
  return hed_beta ? 1.0 - frac : frac;
}

double balanced_bce(const Tensor& prob, const Tensor& target, bool hed_beta) {
  return bce_terms(prob, target, hed_beta, false).loss;
}

Var balanced_bce(Var prob, const Tensor& target, bool hed_beta) {
  BceTerms t = bce_terms(prob.value(), target, hed_beta, true);
  auto grad = std::make_shared<Tensor>(std::move(t.grad));
  return prob.tape->record("balanced_bce", Tensor::scalar(t.loss), {prob.id}, [prob, grad](Tape& tp, int self) {
    tp.accumulate(prob.id, *grad * tp.grad_of(self)[0]);
  });
}

double l2_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "l2_loss");
  require_same_shape(pred, mask, "l2_loss");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double d = pred[i] - target[i];
    acc += d * d;
    ++n;
  }
  return n ? acc / n : 0.0;
}

Var l2_loss(Var pred, const Tensor& target, const Tensor& mask) {
  const Tensor& p = pred.value();
  const double loss = l2_loss(p, target, mask);
  std::size_t n = 0;
  for (double m : mask.raw()) n += m != 0.0;
  auto grad = std::make_shared<Tensor>(Tensor::zeros(p.shape()));
  for (std::size_t i = 0; i < p.size(); ++i)
    if (mask[i] != 0.0) (*grad)[i] = 2.0 * (p[i] - target[i]) / n;
  return pred.tape->record("l2_loss", Tensor::scalar(loss), {pred.id}, [pred, grad](Tape& tp, int self) {
    tp.accumulate(pred.id, *grad * tp.grad_of(self)[0]);
  });
}

double ce_loss(const Tensor& logits, const Tensor& labels, int ignore) { return ce_impl(logits, labels, ignore, nullptr); }

Var ce_loss(Var logits, const Tensor& labels, int ignore) {
  auto grad = std::make_shared<Tensor>();
  const double loss = ce_impl(logits.value(), labels, ignore, grad.get());
  return logits.tape->record("ce_loss", Tensor::scalar(loss), {logits.id}, [logits, grad](Tape& tp, int self) {
    tp.accumulate(logits.id, *grad * tp.grad_of(self)[0]);
  });
}

}  // namespace agcrf
