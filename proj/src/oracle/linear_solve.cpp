#include <algorithm>
#include <cmath>
#include <string>

#include "agcrf/oracle.hpp"

namespace agcrf::oracle {

DenseSystem assemble_fixed_gate_system(const crf::ScaleSet& scales, const crf::KernelBank& bank,
                                       const crf::GateMap& gates) {
  const int S = scales.size();
  const int h = scales.f[0].dim(1), w = scales.f[0].dim(2);
  const int N = h * w;
  DenseSystem sys;
  sys.scale_offset.resize(S + 1, 0);
  for (int s = 0; s < S; ++s) sys.scale_offset[s + 1] = sys.scale_offset[s] + scales.f[s].dim(0) * N;
  sys.n = sys.scale_offset[S];
  if (sys.n > kMaxDenseUnknowns)
    throw std::invalid_argument("assemble_fixed_gate_system: " + std::to_string(sys.n) + " unknowns exceed the limit");
  const std::size_t n = sys.n;
  sys.A.assign(n * n, 0.0);
  sys.b.assign(n, 0.0);

  for (int r = 0; r < S; ++r) {
    const int cr = scales.f[r].dim(0);
    for (int c = 0; c < cr; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t row = sys.scale_offset[r] + static_cast<std::size_t>(c) * N + y * w + x;
          sys.A[row * n + row] = 1.0;
          sys.b[row] = scales.f[r][static_cast<std::size_t>(c) * N + y * w + x];
          const double inv_a = 1.0 / scales.a[r][static_cast<std::size_t>(y) * w + x];
          for (int e = 0; e < S; ++e) {
            if (e == r) continue;
            const int p = crf::pair_index(S, e, r);
            const Tensor& alpha = gates.alpha[p];
            const int ac = alpha.dim(0) == 1 ? 0 : c;
            const double g = alpha[static_cast<std::size_t>(ac) * N + y * w + x];
            const int ce = scales.f[e].dim(0);
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int jy = y + ky - 1, jx = x + kx - 1;
                if (jy < 0 || jy >= h || jx < 0 || jx >= w) continue;
                for (int c2 = 0; c2 < ce; ++c2) {
                  const std::size_t col = sys.scale_offset[e] + static_cast<std::size_t>(c2) * N + jy * w + jx;
                  sys.A[row * n + col] -= g * inv_a * kernel_entry(bank.L[p], bank.mode, c, c2, ce, ky, kx, y, x);
                }
              }
          }
        }
  }
  return sys;
}

std::vector<double> gauss_solve(std::vector<double> A, std::vector<double> b, int n) {
  const std::size_t N = n;
  double scale = 0.0;
  for (double v : A) scale = std::max(scale, std::abs(v));
  double max_pivot = 0.0, min_pivot = INFINITY;
  for (std::size_t k = 0; k < N; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < N; ++i)
      if (std::abs(A[i * N + k]) > std::abs(A[piv * N + k])) piv = i;
    const double pv = std::abs(A[piv * N + k]);
    max_pivot = std::max(max_pivot, pv);
    min_pivot = std::min(min_pivot, pv);
    if (pv <= 1e-14 * std::max(scale, 1e-300)) {
      const double cond = pv > 0 ? max_pivot / pv : INFINITY;
      throw SingularSystemError("gauss_solve: matrix is singular to working precision (pivot ratio " +
                                    std::to_string(cond) + ")",
                                cond);
    }
    if (piv != k) {
      for (std::size_t j = 0; j < N; ++j) std::swap(A[k * N + j], A[piv * N + j]);
      std::swap(b[k], b[piv]);
    }
    for (std::size_t i = k + 1; i < N; ++i) {
      const double m = A[i * N + k] / A[k * N + k];
      if (m == 0.0) continue;
      for (std::size_t j = k; j < N; ++j) A[i * N + j] -= m * A[k * N + j];
      b[i] -= m * b[k];
    }
  }
  std::vector<double> x(N);
  for (std::size_t k = N; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < N; ++j) s -= A[k * N + j] * x[j];
    x[k] = s / A[k * N + k];
  }
  return x;
}

FixedGateSolution solve_fixed_gate_mean(const crf::ScaleSet& scales, const crf::KernelBank& bank,
                                        const crf::GateMap& gates) {
  const DenseSystem sys = assemble_fixed_gate_system(scales, bank, gates);
  const std::vector<double> x = gauss_solve(sys.A, sys.b, sys.n);
  FixedGateSolution sol;
  const std::size_t n = sys.n;
  for (std::size_t i = 0; i < n; ++i) {
    double r = -sys.b[i];
    for (std::size_t j = 0; j < n; ++j) r += sys.A[i * n + j] * x[j];
    sol.residual = std::max(sol.residual, std::abs(r));
  }
  for (int s = 0; s < scales.size(); ++s) {
    Tensor t(scales.f[s].shape());
    std::copy(x.begin() + sys.scale_offset[s], x.begin() + sys.scale_offset[s + 1], t.raw().begin());
    sol.h.push_back(std::move(t));
  }
  return sol;
}

}  // namespace agcrf::oracle
