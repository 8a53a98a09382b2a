#include "agcrf/ops.hpp"

#include <algorithm>
#include <string>

namespace agcrf {
namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
int ceil_div(int a, int b) { return -floor_div(-a, b); }

// Output rows o with 0 <= o*s + t - p < n, clipped to [0, out_n).
struct Range {
  int lo;
  int hi;  // exclusive
};

Range valid_range(int n, int out_n, int t, int s, int p) {
  int lo = std::max(0, ceil_div(p - t, s));
  int hi = std::min(out_n, floor_div(n - 1 + p - t, s) + 1);
  return {lo, std::max(lo, hi)};
}

void check_kernel(const Tensor& kernel, const char* what) {
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3))
    throw ShapeError(std::string(what) + ": kernel must be [C_out, C_in, k, k], got " +
                     shape_str(kernel.shape()));
}

// out[co] += sum_ci k[co, ci] (*) in[ci], correlation form.
void correlate_into(const Tensor& in, const Tensor& k, int s, int p, Tensor& out) {
  const int cin = in.channels(), h = in.height(), w = in.width();
  const int cout = out.channels(), ho = out.height(), wo = out.width();
  const int ks = k.dim(2);
  for (int co = 0; co < cout; ++co) {
    double* o = out.data() + static_cast<std::size_t>(co) * ho * wo;
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = in.data() + static_cast<std::size_t>(ci) * h * w;
      const double* kk = k.data() + (static_cast<std::size_t>(co) * cin + ci) * ks * ks;
      for (int ky = 0; ky < ks; ++ky) {
        const Range ry = valid_range(h, ho, ky, s, p);
        for (int kx = 0; kx < ks; ++kx) {
          const double wt = kk[ky * ks + kx];
          const Range rx = valid_range(w, wo, kx, s, p);
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            const double* row = src + static_cast<std::size_t>(oy * s + ky - p) * w;
            double* orow = o + static_cast<std::size_t>(oy) * wo;
            if (s == 1) {
              const double* r = row + kx - p;
              for (int ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wt * r[ox];
            } else {
              for (int ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wt * row[ox * s + kx - p];
            }
          }
        }
      }
    }
  }
}

// out[ci] += sum_co k[co, ci] scattered from in[co]; `in` has k.dim(0) channels.
void scatter_into(const Tensor& in, const Tensor& k, int s, int p, Tensor& out) {
  const int cin = in.channels(), ho = in.height(), wo = in.width();
  const int cout = out.channels(), h = out.height(), w = out.width();
  const int ks = k.dim(2);
  for (int co = 0; co < cin; ++co) {
    const double* src = in.data() + static_cast<std::size_t>(co) * ho * wo;
    for (int ci = 0; ci < cout; ++ci) {
      double* dst = out.data() + static_cast<std::size_t>(ci) * h * w;
      const double* kk = k.data() + (static_cast<std::size_t>(co) * cout + ci) * ks * ks;
      for (int ky = 0; ky < ks; ++ky) {
        const Range ry = valid_range(h, ho, ky, s, p);
        for (int kx = 0; kx < ks; ++kx) {
          const double wt = kk[ky * ks + kx];
          const Range rx = valid_range(w, wo, kx, s, p);
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            double* row = dst + static_cast<std::size_t>(oy * s + ky - p) * w;
            const double* irow = src + static_cast<std::size_t>(oy) * wo;
            if (s == 1) {
              double* r = row + kx - p;
              for (int ox = rx.lo; ox < rx.hi; ++ox) r[ox] += wt * irow[ox];
            } else {
              for (int ox = rx.lo; ox < rx.hi; ++ox) row[ox * s + kx - p] += wt * irow[ox];
            }
          }
        }
      }
    }
  }
}

// grad[a, b, ky, kx] = sum_o g[a, o] * x[b, o*s + k - p]
Tensor kernel_grad(const Tensor& x, const Tensor& g, int ks, int s, int p) {
  const int cx = x.channels(), h = x.height(), w = x.width();
  const int cg = g.channels(), ho = g.height(), wo = g.width();
  Tensor grad({cg, cx, ks, ks});
  for (int a = 0; a < cg; ++a) {
    const double* gp = g.data() + static_cast<std::size_t>(a) * ho * wo;
    for (int b = 0; b < cx; ++b) {
      const double* xp = x.data() + static_cast<std::size_t>(b) * h * w;
      double* kk = grad.data() + (static_cast<std::size_t>(a) * cx + b) * ks * ks;
      for (int ky = 0; ky < ks; ++ky) {
        const Range ry = valid_range(h, ho, ky, s, p);
        for (int kx = 0; kx < ks; ++kx) {
          const Range rx = valid_range(w, wo, kx, s, p);
          double acc = 0.0;
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            const double* row = xp + static_cast<std::size_t>(oy * s + ky - p) * w;
            const double* grow = gp + static_cast<std::size_t>(oy) * wo;
            for (int ox = rx.lo; ox < rx.hi; ++ox) acc += grow[ox] * row[ox * s + kx - p];
          }
          kk[ky * ks + kx] = acc;
        }
      }
    }
  }
  return grad;
}

}  // namespace

int conv_output_size(int in, int k, int stride, int pad) {
  if (stride < 1 || pad < 0 || k < 1) throw ShapeError("conv2d: invalid stride/pad/kernel size");
  const int span = in + 2 * pad - k;
  if (span < 0) throw ShapeError("conv2d: kernel larger than padded input");
  if (span % stride != 0)
    throw ShapeError("conv2d: output size not exact for in=" + std::to_string(in) +
                     " k=" + std::to_string(k) + " stride=" + std::to_string(stride) +
                     " pad=" + std::to_string(pad));
  return span / stride + 1;
}

int deconv_output_size(int in, int k, int stride, int pad) {
  if (stride < 1 || pad < 0 || k < 1) throw ShapeError("deconv2d: invalid stride/pad/kernel size");
  const int out = (in - 1) * stride - 2 * pad + k;
  if (out <= 0) throw ShapeError("deconv2d: non-positive output size");
  return out;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  require_image(input, "conv2d");
  check_kernel(kernel, "conv2d");
  if (kernel.dim(1) != input.channels())
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                     std::to_string(input.channels()));
  const int k = kernel.dim(2);
  if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd");
  const int ho = conv_output_size(input.height(), k, stride, pad);
  const int wo = conv_output_size(input.width(), k, stride, pad);
  Tensor out({kernel.dim(0), ho, wo});
  correlate_into(input, kernel, stride, pad, out);
  return out;
}

Tensor deconv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  require_image(input, "deconv2d");
  check_kernel(kernel, "deconv2d");
  if (kernel.dim(0) != input.channels())
    throw ShapeError("deconv2d: kernel expects " + std::to_string(kernel.dim(0)) + " input channels, got " +
                     std::to_string(input.channels()));
  const int k = kernel.dim(2);
  const int h = deconv_output_size(input.height(), k, stride, pad);
  const int w = deconv_output_size(input.width(), k, stride, pad);
  Tensor out({kernel.dim(1), h, w});
  scatter_into(input, kernel, stride, pad, out);
  return out;
}

Tensor correlate(const Tensor& input, const Tensor& kernel, int stride, int pad, int out_h, int out_w) {
  Tensor out({kernel.dim(0), out_h, out_w});
  correlate_into(input, kernel, stride, pad, out);
  return out;
}

Tensor correlate_transpose(const Tensor& input, const Tensor& kernel, int stride, int pad, int out_h,
                           int out_w) {
  Tensor out({kernel.dim(1), out_h, out_w});
  scatter_into(input, kernel, stride, pad, out);
  return out;
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, int k, int stride, int pad) {
  return kernel_grad(input, grad_out, k, stride, pad);
}

Tensor deconv2d_kernel_grad(const Tensor& input, const Tensor& grad_out, int k, int stride, int pad) {
  // deconv(y, K) scatters y[co] into out[ci]; dK[co, ci] correlates grad_out[ci] with y[co].
  return kernel_grad(grad_out, input, k, stride, pad);
}

PoolResult maxpool2d(const Tensor& input, int k, int stride) {
  require_image(input, "maxpool2d");
  if (k < 1 || stride < 1) throw ShapeError("maxpool2d: invalid window");
  const int c = input.channels(), h = input.height(), w = input.width();
  if (h < k || w < k || (h - k) % stride || (w - k) % stride)
    throw ShapeError("maxpool2d: window does not tile the input exactly");
  const int ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  PoolResult r{Tensor({c, ho, wo}), std::vector<std::size_t>(static_cast<std::size_t>(c) * ho * wo)};
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = (static_cast<std::size_t>(ch) * h + oy * stride) * w + ox * stride;
        double bv = input[best];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const std::size_t idx = (static_cast<std::size_t>(ch) * h + oy * stride + ky) * w + ox * stride + kx;
            if (input[idx] > bv) {
              bv = input[idx];
              best = idx;
            }
          }
        r.output[o] = bv;
        r.argmax[o] = best;
      }
  return r;
}

Tensor local_conv3x3(const Tensor& input, const Tensor& field, int out_channels) {
  require_image(input, "local_conv3x3");
  require_image(field, "local_conv3x3");
  const int cin = input.channels(), h = input.height(), w = input.width();
  if (field.channels() != out_channels * cin * 9 || field.height() != h || field.width() != w)
    throw ShapeError("local_conv3x3: field shape " + shape_str(field.shape()) + " incompatible with input " +
                     shape_str(input.shape()));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({out_channels, h, w});
  for (int co = 0; co < out_channels; ++co) {
    double* o = out.data() + co * plane;
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = input.data() + ci * plane;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double* f = field.data() + (((static_cast<std::size_t>(co) * cin + ci) * 3 + ky) * 3 + kx) * plane;
          const int dy = ky - 1, dx = kx - 1;
          for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
            const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
            const double* frow = f + static_cast<std::size_t>(y) * w;
            double* orow = o + static_cast<std::size_t>(y) * w;
            for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) orow[x] += frow[x] * srow[x];
          }
        }
    }
  }
  return out;
}

Tensor local_conv3x3_input_grad(const Tensor& field, const Tensor& grad_out, int in_channels) {
  const int cout = grad_out.channels(), h = grad_out.height(), w = grad_out.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor gin({in_channels, h, w});
  for (int co = 0; co < cout; ++co) {
    const double* g = grad_out.data() + co * plane;
    for (int ci = 0; ci < in_channels; ++ci) {
      double* dst = gin.data() + ci * plane;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double* f =
              field.data() + (((static_cast<std::size_t>(co) * in_channels + ci) * 3 + ky) * 3 + kx) * plane;
          const int dy = ky - 1, dx = kx - 1;
          for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
            double* drow = dst + static_cast<std::size_t>(y + dy) * w + dx;
            const double* frow = f + static_cast<std::size_t>(y) * w;
            const double* grow = g + static_cast<std::size_t>(y) * w;
            for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) drow[x] += frow[x] * grow[x];
          }
        }
    }
  }
  return gin;
}

Tensor local_conv3x3_field_grad(const Tensor& input, const Tensor& grad_out) {
  const int cin = input.channels(), cout = grad_out.channels(), h = input.height(), w = input.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor gf({cout * cin * 9, h, w});
  for (int co = 0; co < cout; ++co) {
    const double* g = grad_out.data() + co * plane;
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = input.data() + ci * plane;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          double* f = gf.data() + (((static_cast<std::size_t>(co) * cin + ci) * 3 + ky) * 3 + kx) * plane;
          const int dy = ky - 1, dx = kx - 1;
          for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
            const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
            const double* grow = g + static_cast<std::size_t>(y) * w;
            double* frow = f + static_cast<std::size_t>(y) * w;
            for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) frow[x] = grow[x] * srow[x];
          }
        }
    }
  }
  return gf;
}

Tensor broadcast_kernel_field(const Tensor& kernel, int height, int width) {
  if (kernel.rank() != 4 || kernel.dim(2) != 3 || kernel.dim(3) != 3)
    throw ShapeError("broadcast_kernel_field: expected a [C_out, C_in, 3, 3] kernel");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  Tensor field({static_cast<int>(kernel.size()), height, width});
  for (std::size_t t = 0; t < kernel.size(); ++t)
    std::fill_n(field.data() + t * plane, plane, kernel[t]);
  return field;
}

}  // namespace agcrf
