#include "agcrf/tape.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <memory>

#include "agcrf/ops.hpp"

namespace agcrf {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false, "constant"});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Tensor value) {
  if (!value.all_finite()) throw NumericError("parameter: non-finite value");
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true, "parameter"});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(const char* op, Tensor value, std::vector<int> inputs, Backward backward) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  const int self = static_cast<int>(nodes_.size());
  bool rg = false;
  for (int in : inputs) {
    assert(in >= 0 && in < self);
    rg = rg || nodes_[in].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, std::move(inputs), rg ? std::move(backward) : Backward{}, rg, op});
  return {this, self};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.grad.empty()) {
    n.grad += g;
    return;
  }
  require_same_shape(n.value, g, "accumulate");
  n.grad = g;
}

void Tape::accumulate(int id, Tensor&& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.grad.empty()) {
    n.grad += g;
    return;
  }
  require_same_shape(n.value, g, "accumulate");
  n.grad = std::move(g);
}

void Tape::accumulate_at(int id, std::size_t index, double g) {
  if (!nodes_[id].requires_grad) return;
  grad_buffer(id)[index] += g;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: variable belongs to another tape");
  if (value(loss.id).size() != 1) throw ShapeError("backward: loss must be a single element");
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

namespace {

Tape* tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
  return a.tape;
}

}  // namespace

Var add(Var a, Var b) {
  Tape* t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  return t->record("add", a.value() + b.value(), {a.id, b.id}, [a, b](Tape& tp, int self) {
    tp.accumulate(a.id, tp.grad_of(self));
    tp.accumulate(b.id, tp.grad_of(self));
  });
}

Var sub(Var a, Var b) {
  Tape* t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  return t->record("sub", a.value() - b.value(), {a.id, b.id}, [a, b](Tape& tp, int self) {
    tp.accumulate(a.id, tp.grad_of(self));
    tp.accumulate(b.id, tp.grad_of(self) * -1.0);
  });
}

Var mul(Var a, Var b) {
  Tape* t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t->record("mul", std::move(out), {a.id, b.id}, [a, b](Tape& tp, int self) {
    const Tensor& g = tp.grad_of(self);
    if (tp.requires_grad(a.id)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= tp.value(b.id)[i];
      tp.accumulate(a.id, ga);
    }
    if (tp.requires_grad(b.id)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= tp.value(a.id)[i];
      tp.accumulate(b.id, gb);
    }
  });
}

Var div(Var a, Var b) {
  Tape* t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "div");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
  return t->record("div", std::move(out), {a.id, b.id}, [a, b](Tape& tp, int self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& bv = tp.value(b.id);
    if (tp.requires_grad(a.id)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] /= bv[i];
      tp.accumulate(a.id, ga);
    }
    if (tp.requires_grad(b.id)) {
      Tensor gb = g;
      const Tensor& av = tp.value(a.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= -av[i] / (bv[i] * bv[i]);
      tp.accumulate(b.id, gb);
    }
  });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }

Var scale(Var a, double s) {
  return a.tape->record("scale", a.value() * s, {a.id},
                        [a, s](Tape& tp, int self) { tp.accumulate(a.id, tp.grad_of(self) * s); });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.raw()) v += s;
  return a.tape->record("add_scalar", std::move(out), {a.id},
                        [a](Tape& tp, int self) { tp.accumulate(a.id, tp.grad_of(self)); });
}

namespace {

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var sigmoid_impl(Var a, const char* op, double (*fn)(double)) {
  Tensor out = a.value();
  for (double& v : out.raw()) v = fn(v);
  return a.tape->record(op, std::move(out), {a.id}, [a](Tape& tp, int self) {
    Tensor g = tp.grad_of(self);
    const Tensor& y = tp.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
    tp.accumulate(a.id, g);
  });
}

}  // namespace

double gate_sigmoid(double x) {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return std::clamp(logistic(x), lo, hi);
}

Var sigmoid(Var a) { return sigmoid_impl(a, "sigmoid", &logistic); }

Var gate_sigmoid(Var a) {
  return sigmoid_impl(a, "gate_sigmoid", static_cast<double (*)(double)>(&gate_sigmoid));
}

Var relu(Var a) {
  Tensor out = a.value();
  for (double& v : out.raw()) v = v > 0 ? v : 0.0;
  return a.tape->record("relu", std::move(out), {a.id}, [a](Tape& tp, int self) {
    Tensor g = tp.grad_of(self);
    const Tensor& x = tp.value(a.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(x[i] > 0)) g[i] = 0.0;
    tp.accumulate(a.id, g);
  });
}

Var sum(Var a) {
  return a.tape->record("sum", Tensor::scalar(a.value().sum()), {a.id}, [a](Tape& tp, int self) {
    tp.accumulate(a.id, Tensor::full(tp.value(a.id).shape(), tp.grad_of(self)[0]));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<Tensor> values;
  std::vector<int> ids;
  values.reserve(parts.size());
  for (const Var& p : parts) {
    if (p.tape != parts[0].tape) throw std::invalid_argument("concat: operands on different tapes");
    values.push_back(p.value());
    ids.push_back(p.id);
  }
  Tensor out = concat_channels(values);
  return parts[0].tape->record("concat", std::move(out), ids, [ids](Tape& tp, int self) {
    const Tensor& g = tp.grad_of(self);
    int offset = 0;
    for (int id : ids) {
      const int c = tp.value(id).channels();
      if (tp.requires_grad(id)) tp.accumulate(id, g.channel_slice(offset, c));
      offset += c;
    }
  });
}

Var slice_channels(Var a, int begin, int count) {
  return a.tape->record("slice_channels", a.value().channel_slice(begin, count), {a.id},
                        [a, begin](Tape& tp, int self) {
                          const Tensor& g = tp.grad_of(self);
                          Tensor full = Tensor::zeros(tp.value(a.id).shape());
                          std::copy(g.raw().begin(), g.raw().end(),
                                    full.raw().begin() + static_cast<std::ptrdiff_t>(begin) * g.height() * g.width());
                          tp.accumulate(a.id, full);
                        });
}

Var broadcast_channels(Var a, int channels) {
  const Tensor& v = a.value();
  require_image(v, "broadcast_channels");
  if (v.channels() != 1) throw ShapeError("broadcast_channels: input must have one channel");
  std::vector<Tensor> copies(channels, v);
  return a.tape->record("broadcast_channels", concat_channels(copies), {a.id}, [a](Tape& tp, int self) {
    const Tensor& g = tp.grad_of(self);
    const std::size_t plane = static_cast<std::size_t>(g.height()) * g.width();
    Tensor out({1, g.height(), g.width()});
    for (int c = 0; c < g.channels(); ++c)
      for (std::size_t i = 0; i < plane; ++i) out[i] += g[c * plane + i];
    tp.accumulate(a.id, out);
  });
}

Var sum_channels(Var a) {
  const Tensor& v = a.value();
  require_image(v, "sum_channels");
  const std::size_t plane = static_cast<std::size_t>(v.height()) * v.width();
  Tensor out({1, v.height(), v.width()});
  for (int c = 0; c < v.channels(); ++c)
    for (std::size_t i = 0; i < plane; ++i) out[i] += v[c * plane + i];
  return a.tape->record("sum_channels", std::move(out), {a.id}, [a](Tape& tp, int self) {
    const Tensor& g = tp.grad_of(self);
    const int c = tp.value(a.id).channels();
    std::vector<Tensor> copies(c, g);
    tp.accumulate(a.id, concat_channels(copies));
  });
}

Var add_bias(Var a, Var b) {
  Tape* t = tape_of(a, b);
  const Tensor& v = a.value();
  require_image(v, "add_bias");
  if (b.value().size() != static_cast<std::size_t>(v.channels()))
    throw ShapeError("add_bias: bias length must equal channel count");
  const std::size_t plane = static_cast<std::size_t>(v.height()) * v.width();
  Tensor out = v;
  for (int c = 0; c < v.channels(); ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += b.value()[c];
  return t->record("add_bias", std::move(out), {a.id, b.id}, [a, b, plane](Tape& tp, int self) {
    const Tensor& g = tp.grad_of(self);
    tp.accumulate(a.id, g);
    if (tp.requires_grad(b.id)) {
      Tensor gb = Tensor::zeros(tp.value(b.id).shape());
      for (std::size_t c = 0; c < gb.size(); ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += g[c * plane + i];
        gb[c] = s;
      }
      tp.accumulate(b.id, gb);
    }
  });
}

Var softmax_channels(Var a) {
  const Tensor& v = a.value();
  require_image(v, "softmax_channels");
  const int c = v.channels();
  const std::size_t plane = static_cast<std::size_t>(v.height()) * v.width();
  Tensor out = v;
  for (std::size_t i = 0; i < plane; ++i) {
    double m = v[i];
    for (int k = 1; k < c; ++k) m = std::max(m, v[k * plane + i]);
    double z = 0.0;
    for (int k = 0; k < c; ++k) z += (out[k * plane + i] = std::exp(v[k * plane + i] - m));
    for (int k = 0; k < c; ++k) out[k * plane + i] /= z;
  }
  return a.tape->record("softmax_channels", std::move(out), {a.id}, [a, c, plane](Tape& tp, int self) {
    const Tensor& g = tp.grad_of(self);
    const Tensor& y = tp.value(self);
    Tensor gx = Tensor::zeros(y.shape());
    for (std::size_t i = 0; i < plane; ++i) {
      double s = 0.0;
      for (int k = 0; k < c; ++k) s += g[k * plane + i] * y[k * plane + i];
      for (int k = 0; k < c; ++k) gx[k * plane + i] = y[k * plane + i] * (g[k * plane + i] - s);
    }
    tp.accumulate(a.id, gx);
  });
}

Var conv2d(Var input, Var kernel, int stride, int pad) {
  Tape* t = tape_of(input, kernel);
  Tensor out = conv2d(input.value(), kernel.value(), stride, pad);
  return t->record("conv2d", std::move(out), {input.id, kernel.id},
                   [input, kernel, stride, pad](Tape& tp, int self) {
                     const Tensor& g = tp.grad_of(self);
                     const Tensor& x = tp.value(input.id);
                     const Tensor& k = tp.value(kernel.id);
                     if (tp.requires_grad(input.id))
                       tp.accumulate(input.id, correlate_transpose(g, k, stride, pad, x.height(), x.width()));
                     if (tp.requires_grad(kernel.id))
                       tp.accumulate(kernel.id, conv2d_kernel_grad(x, g, k.dim(2), stride, pad));
                   });
}

Var deconv2d(Var input, Var kernel, int stride, int pad) {
  Tape* t = tape_of(input, kernel);
  Tensor out = deconv2d(input.value(), kernel.value(), stride, pad);
  return t->record("deconv2d", std::move(out), {input.id, kernel.id},
                   [input, kernel, stride, pad](Tape& tp, int self) {
                     const Tensor& g = tp.grad_of(self);
                     const Tensor& y = tp.value(input.id);
                     const Tensor& k = tp.value(kernel.id);
                     if (tp.requires_grad(input.id))
                       tp.accumulate(input.id, correlate(g, k, stride, pad, y.height(), y.width()));
                     if (tp.requires_grad(kernel.id))
                       tp.accumulate(kernel.id, deconv2d_kernel_grad(y, g, k.dim(2), stride, pad));
                   });
}

Var maxpool2d(Var input, int k, int stride) {
  PoolResult r = maxpool2d(input.value(), k, stride);
  auto argmax = std::make_shared<std::vector<std::size_t>>(std::move(r.argmax));
  return input.tape->record("maxpool2d", std::move(r.output), {input.id}, [input, argmax](Tape& tp, int self) {
    const Tensor& g = tp.grad_of(self);
    Tensor gx = Tensor::zeros(tp.value(input.id).shape());
    for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
    tp.accumulate(input.id, gx);
  });
}

Var local_conv3x3(Var input, Var field, int out_channels) {
  Tape* t = tape_of(input, field);
  Tensor out = local_conv3x3(input.value(), field.value(), out_channels);
  return t->record("local_conv3x3", std::move(out), {input.id, field.id}, [input, field](Tape& tp, int self) {
    const Tensor& g = tp.grad_of(self);
    if (tp.requires_grad(input.id))
      tp.accumulate(input.id, local_conv3x3_input_grad(tp.value(field.id), g, tp.value(input.id).channels()));
    if (tp.requires_grad(field.id)) tp.accumulate(field.id, local_conv3x3_field_grad(tp.value(input.id), g));
  });
}

}  // namespace agcrf
