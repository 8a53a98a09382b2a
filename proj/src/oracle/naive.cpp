#include <algorithm>
#include <string>

#include "agcrf/oracle.hpp"

namespace agcrf::oracle {

using crf::KernelMode;

Tensor naive_conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  const int ci_n = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int co_n = kernel.dim(0), k = kernel.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
  Tensor out({co_n, ho, wo});
  for (int co = 0; co < co_n; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (int ci = 0; ci < ci_n; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += kernel[((static_cast<std::size_t>(co) * ci_n + ci) * k + ky) * k + kx] *
                     input[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
            }
        out[(static_cast<std::size_t>(co) * ho + oy) * wo + ox] = acc;
      }
  return out;
}

Tensor naive_deconv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  const int ci_n = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int co_n = kernel.dim(1), k = kernel.dim(2);
  const int ho = (h - 1) * stride - 2 * pad + k, wo = (w - 1) * stride - 2 * pad + k;
  Tensor out({co_n, ho, wo});
  for (int ci = 0; ci < ci_n; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int co = 0; co < co_n; ++co)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int oy = y * stride + ky - pad, ox = x * stride + kx - pad;
              if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
              out[(static_cast<std::size_t>(co) * ho + oy) * wo + ox] +=
                  kernel[((static_cast<std::size_t>(ci) * co_n + co) * k + ky) * k + kx] *
                  input[(static_cast<std::size_t>(ci) * h + y) * w + x];
            }
  return out;
}

Tensor naive_maxpool2d(const Tensor& input, int k, int stride) {
  const int c_n = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  Tensor out({c_n, ho, wo});
  for (int c = 0; c < c_n; ++c)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double best = input[(static_cast<std::size_t>(c) * h + oy * stride) * w + ox * stride];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            best = std::max(best, input[(static_cast<std::size_t>(c) * h + oy * stride + ky) * w + ox * stride + kx]);
        out[(static_cast<std::size_t>(c) * ho + oy) * wo + ox] = best;
      }
  return out;
}

double kernel_entry(const Tensor& kernel, KernelMode mode, int out_c, int in_c, int in_channels, int ky, int kx,
                    int y, int x) {
  const std::size_t tap = ((static_cast<std::size_t>(out_c) * in_channels + in_c) * 3 + ky) * 3 + kx;
  if (mode == KernelMode::Shared) return kernel[tap];
  const int h = kernel.dim(1), w = kernel.dim(2);
  return kernel[(tap * h + y) * w + x];
}

Tensor naive_message(int emitter, int receiver, const crf::KernelBank& bank, const crf::ScaleSet& scales) {
  const int S = scales.size();
  const int p = crf::pair_index(S, emitter, receiver);
  const Tensor& he = scales.h[emitter];
  const int ce = he.dim(0), h = he.dim(1), w = he.dim(2);
  const int cr = scales.h[receiver].dim(0);
  Tensor out({cr, h, w});
  for (int c = 0; c < cr; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int jy = y + ky - 1, jx = x + kx - 1;
            if (jy < 0 || jy >= h || jx < 0 || jx >= w) continue;
            for (int c2 = 0; c2 < ce; ++c2)
              acc += kernel_entry(bank.L[p], bank.mode, c, c2, ce, ky, kx, y, x) *
                     he[(static_cast<std::size_t>(c2) * h + jy) * w + jx];
          }
        out[(static_cast<std::size_t>(c) * h + y) * w + x] = acc;
      }
  return out;
}

Tensor naive_attention_logits(int emitter, int receiver, const crf::KernelBank& bank, const crf::ScaleSet& scales,
                              const crf::AgcrfConfig& cfg) {
  const int S = scales.size();
  const int p = crf::pair_index(S, emitter, receiver);
  const Tensor& he = scales.h[emitter];
  const Tensor& hr = scales.h[receiver];
  const std::vector<Tensor>& xs = cfg.variant == crf::Variant::Flag ? scales.h : scales.f;
  const Tensor& xe = xs[emitter];
  const Tensor& xr = xs[receiver];
  const int ce = he.dim(0), cr = hr.dim(0), h = he.dim(1), w = he.dim(2);
  const bool scalar = cfg.attention_mode == crf::AttentionMode::Scalar;
  const int ca = scalar ? 1 : cr;
  auto at = [h, w](const Tensor& t, int c, int y, int x) { return t[(static_cast<std::size_t>(c) * h + y) * w + x]; };

  Tensor out({ca, h, w});
  for (int a = 0; a < ca; ++a)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double quadratic = 0.0, emitter_linear = 0.0, receiver_linear = 0.0;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int jy = y + ky - 1, jx = x + kx - 1;
            if (jy < 0 || jy >= h || jx < 0 || jx >= w) continue;
            // h_r^i L^{i,j} h_e^j: all receiver channels in scalar mode, channel a otherwise.
            for (int c = scalar ? 0 : a; c < (scalar ? cr : a + 1); ++c)
              for (int c2 = 0; c2 < ce; ++c2)
                quadratic += at(hr, c, y, x) * kernel_entry(bank.L[p], bank.mode, c, c2, ce, ky, kx, y, x) *
                             at(he, c2, jy, jx);
            for (int c2 = 0; c2 < ce; ++c2)
              emitter_linear += kernel_entry(bank.l_er[p], bank.mode, a, c2, ce, ky, kx, y, x) * at(xe, c2, jy, jx);
            for (int c = 0; c < cr; ++c)
              receiver_linear += kernel_entry(bank.l_re[p], bank.mode, a, c, cr, ky, kx, y, x) * at(xr, c, jy, jx);
          }
        out[(static_cast<std::size_t>(a) * h + y) * w + x] = quadratic + emitter_linear + receiver_linear;
      }
  return out;
}

double naive_energy(const crf::ScaleSet& assignment, const crf::GateMap& gates, const crf::KernelBank& bank,
                    crf::Variant variant, double corner) {
  const int S = assignment.size();
  double e_total = 0.0;
  for (int s = 0; s < S; ++s) {
    const Tensor& h = assignment.h[s];
    const Tensor& f = assignment.f[s];
    const int c_n = h.dim(0), hh = h.dim(1), ww = h.dim(2);
    for (int c = 0; c < c_n; ++c)
      for (int y = 0; y < hh; ++y)
        for (int x = 0; x < ww; ++x) {
          const std::size_t i = (static_cast<std::size_t>(c) * hh + y) * ww + x;
          const double d = h[i] - f[i];
          e_total -= 0.5 * assignment.a[s][static_cast<std::size_t>(y) * ww + x] * d * d;
        }
  }
  const std::vector<Tensor>& xs = variant == crf::Variant::Flag ? assignment.h : assignment.f;
  for (int e = 0; e < S; ++e)
    for (int r = 0; r < S; ++r) {
      if (e == r) continue;
      const int p = crf::pair_index(S, e, r);
      const Tensor& g = gates.alpha[p];
      const Tensor& he = assignment.h[e];
      const Tensor& hr = assignment.h[r];
      const int ce = he.dim(0), cr = hr.dim(0), hh = he.dim(1), ww = he.dim(2);
      for (int y = 0; y < hh; ++y)
        for (int x = 0; x < ww; ++x) {
          const double gv = g[static_cast<std::size_t>(y) * ww + x];
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int jy = y + ky - 1, jx = x + kx - 1;
              if (jy < 0 || jy >= hh || jx < 0 || jx >= ww) continue;
              double term = corner;
              for (int c = 0; c < cr; ++c)
                for (int c2 = 0; c2 < ce; ++c2)
                  term += hr[(static_cast<std::size_t>(c) * hh + y) * ww + x] *
                          bank.L[p][((static_cast<std::size_t>(c) * ce + c2) * 3 + ky) * 3 + kx] *
                          he[(static_cast<std::size_t>(c2) * hh + jy) * ww + jx];
              for (int c2 = 0; c2 < ce; ++c2)
                term += bank.l_er[p][(static_cast<std::size_t>(c2) * 3 + ky) * 3 + kx] *
                        xs[e][(static_cast<std::size_t>(c2) * hh + jy) * ww + jx];
              for (int c = 0; c < cr; ++c)
                term += bank.l_re[p][(static_cast<std::size_t>(c) * 3 + ky) * 3 + kx] *
                        xs[r][(static_cast<std::size_t>(c) * hh + jy) * ww + jx];
              e_total += gv * term;
            }
        }
    }
  return e_total;
}

Tensor naive_kernel_field(const Tensor& weight, const Tensor& bias, const Tensor& input) {
  const int rows = weight.dim(0), cols = weight.dim(1);
  const int h = input.dim(1), w = input.dim(2);
  if (input.dim(0) != cols) throw ShapeError("naive_kernel_field: channel mismatch");
  Tensor out({rows, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::vector<double> v(cols);
      for (int c = 0; c < cols; ++c) v[c] = input[(static_cast<std::size_t>(c) * h + y) * w + x];
      for (int r = 0; r < rows; ++r) {
        double acc = bias[r];
        for (int c = 0; c < cols; ++c) acc += weight[static_cast<std::size_t>(r) * cols + c] * v[c];
        out[(static_cast<std::size_t>(r) * h + y) * w + x] = acc;
      }
    }
  return out;
}

}  // namespace agcrf::oracle
