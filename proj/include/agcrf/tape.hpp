#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "agcrf/tensor.hpp"

namespace agcrf {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode differentiation tape.
///
/// Nodes are appended in evaluation order and every node's inputs precede it,
/// so walking ids downward is a reverse topological order. Single-threaded.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  /// Appends an op result. `backward` reads grad_of(self) and calls accumulate()
  /// on its inputs. Throws NumericError if `value` is not finite.
  Var record(const char* op, Tensor value, std::vector<int> inputs, Backward backward);

  const Tensor& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulated at `v` by the last backward(); zeros if unreached.
  Tensor grad(Var v) const;
  const Tensor& grad_of(int id) const { return nodes_.at(id).grad; }
  /// The first gradient to reach a node is taken as is; later ones are added.
  void accumulate(int id, const Tensor& g);
  void accumulate(int id, Tensor&& g);
  void accumulate_at(int id, std::size_t index, double g);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node that requires grad.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulate
    std::vector<int> inputs;
    Backward backward;
    bool requires_grad = false;
    const char* op = "";
  };
  Tensor& grad_buffer(int id);

  std::vector<Node> nodes_;
};

// Elementwise (identical shapes).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);

Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var sigmoid(Var a);
Var relu(Var a);

/// Logistic function saturating at the nearest doubles inside (0, 1), so the
/// result never equals 0 or 1 for finite input.
Var gate_sigmoid(Var a);
double gate_sigmoid(double x);

/// Sum of all elements, shape [1].
Var sum(Var a);
Var mean(Var a);

// Image ops on C x H x W values.
Var concat(std::span<const Var> parts);
Var slice_channels(Var a, int begin, int count);
/// [1, H, W] -> [C, H, W] by repetition.
Var broadcast_channels(Var a, int channels);
/// [C, H, W] -> [1, H, W].
Var sum_channels(Var a);
/// Adds b[c] to every pixel of channel c; b has shape [C].
Var add_bias(Var a, Var b);
/// Softmax over channels at every pixel.
Var softmax_channels(Var a);

Var conv2d(Var input, Var kernel, int stride = 1, int pad = 0);
Var deconv2d(Var input, Var kernel, int stride = 1, int pad = 0);
Var maxpool2d(Var input, int k, int stride);
Var local_conv3x3(Var input, Var field, int out_channels);

}  // namespace agcrf
