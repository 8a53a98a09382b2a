#pragma once

#include <cstddef>
#include <vector>

#include "agcrf/tensor.hpp"

// Value-level image operators. All images are C x H x W.
//
// Convolution follows the cross-correlation convention (no kernel flip):
//   out[co, y, x] = sum_{ci, ky, kx} k[co, ci, ky, kx] * in[ci, y*s + ky - p, x*s + kx - p]
// with zero padding outside the input.

namespace agcrf {

int conv_output_size(int in, int k, int stride, int pad);
int deconv_output_size(int in, int k, int stride, int pad);

/// kernel: [C_out, C_in, k, k], k odd. The output size must divide exactly.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride = 1, int pad = 0);

/// Transposed convolution, the adjoint of conv2d with the same kernel.
/// kernel: [C_in, C_out, k, k] where C_in matches the input's channels;
/// output size (H - 1) * stride - 2 * pad + k.
Tensor deconv2d(const Tensor& input, const Tensor& kernel, int stride = 1, int pad = 0);

struct PoolResult {
  Tensor output;
  /// Linear input index of the selected element for every output element.
  std::vector<std::size_t> argmax;
};

/// Ties resolve to the smallest linear input index.
PoolResult maxpool2d(const Tensor& input, int k, int stride);

/// Gradient of conv2d with respect to its kernel.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, int k, int stride, int pad);
/// Gradient of deconv2d with respect to its kernel.
Tensor deconv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, int k, int stride, int pad);

/// Correlation without the odd-kernel and exactness checks, sized to `out_h` x `out_w`.
/// Used as the adjoint of deconv2d.
Tensor correlate(const Tensor& input, const Tensor& kernel, int stride, int pad, int out_h, int out_w);
/// Transposed correlation sized to `out_h` x `out_w`.
Tensor correlate_transpose(const Tensor& input, const Tensor& kernel, int stride, int pad, int out_h,
                           int out_w);

/// Per-pixel 3x3 convolution (stride 1, pad 1) with a spatially varying kernel.
/// field: [C_out * C_in * 9, H, W]; tap index is ((co * C_in + ci) * 3 + ky) * 3 + kx.
Tensor local_conv3x3(const Tensor& input, const Tensor& field, int out_channels);
Tensor local_conv3x3_input_grad(const Tensor& field, const Tensor& grad_out, int in_channels);
Tensor local_conv3x3_field_grad(const Tensor& input, const Tensor& grad_out);

/// Flattens a shared [C_out, C_in, 3, 3] kernel into a constant local_conv3x3 field.
Tensor broadcast_kernel_field(const Tensor& kernel, int height, int width);

}  // namespace agcrf
