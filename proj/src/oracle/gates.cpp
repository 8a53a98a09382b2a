#include <algorithm>
#include <cmath>
#include <sstream>

#include "agcrf/oracle.hpp"

namespace agcrf::oracle {
namespace {

struct Kahan {
  double sum = 0.0;
  double comp = 0.0;
  void add(double v) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

// In-place Cholesky P = U^T U; returns false if P is not positive definite.
bool cholesky(std::vector<double>& P, int n) {
  const std::size_t N = n;
  for (std::size_t j = 0; j < N; ++j) {
    double d = P[j * N + j];
    for (std::size_t k = 0; k < j; ++k) d -= P[k * N + j] * P[k * N + j];
    if (!(d > 0.0)) return false;
    d = std::sqrt(d);
    P[j * N + j] = d;
    for (std::size_t i = j + 1; i < N; ++i) {
      double s = P[j * N + i];
      for (std::size_t k = 0; k < j; ++k) s -= P[k * N + j] * P[k * N + i];
      P[j * N + i] = s / d;
    }
  }
  return true;
}

// Solves U^T U x = b with the factor from cholesky().
std::vector<double> cholesky_solve(const std::vector<double>& U, std::vector<double> b, int n) {
  const std::size_t N = n;
  for (std::size_t i = 0; i < N; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= U[k * N + i] * b[k];
    b[i] = s / U[i * N + i];
  }
  for (std::size_t i = N; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < N; ++k) s -= U[i * N + k] * b[k];
    b[i] = s / U[i * N + i];
  }
  return b;
}

struct Gate {
  int emitter, receiver, y, x;
};

// min_i (A_ii - sum_{j != i} |A_ij|), a lower bound on every eigenvalue.
double gershgorin_bound(const std::vector<double>& A, std::size_t N) {
  double lo = INFINITY;
  for (std::size_t i = 0; i < N; ++i) {
    double radius = 0.0;
    for (std::size_t j = 0; j < N; ++j)
      if (j != i) radius += std::abs(A[i * N + j]);
    lo = std::min(lo, A[i * N + i] - radius);
  }
  return lo;
}

}  // namespace

bool gershgorin_positive(const std::vector<double>& A, int n) {
  const std::size_t N = n;
  for (std::size_t i = 0; i < N; ++i) {
    double radius = 0.0;
    for (std::size_t j = 0; j < N; ++j)
      if (j != i) radius += std::abs(A[i * N + j]);
    if (!(A[i * N + i] - radius > 0.0)) return false;
  }
  return true;
}

std::vector<double> symmetric_eigenvalues(std::vector<double> A, int n) {
  const std::size_t N = n;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = i + 1; j < N; ++j) off += A[i * N + j] * A[i * N + j];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t q = p + 1; q < N; ++q) {
        const double apq = A[p * N + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (A[q * N + q] - A[p * N + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < N; ++k) {
          const double akp = A[k * N + p], akq = A[k * N + q];
          A[k * N + p] = c * akp - s * akq;
          A[k * N + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < N; ++k) {
          const double apk = A[p * N + k], aqk = A[q * N + k];
          A[p * N + k] = c * apk - s * aqk;
          A[q * N + k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(N);
  for (std::size_t i = 0; i < N; ++i) ev[i] = A[i * N + i];
  std::sort(ev.begin(), ev.end());
  return ev;
}

GateEnumeration enumerate_gates(const TinyInstance& inst) {
  const crf::ScaleSet& sc = inst.scales;
  const crf::KernelBank& bank = inst.bank;
  const int S = sc.size();
  const int h = sc.f[0].dim(1), w = sc.f[0].dim(2), N = h * w;
  if (bank.mode != crf::KernelMode::Shared) throw std::invalid_argument("enumerate_gates: shared kernels required");

  std::vector<std::pair<int, int>> pairs = inst.active_pairs;
  if (pairs.empty())
    for (int e = 0; e < S; ++e)
      for (int r = 0; r < S; ++r)
        if (e != r) pairs.emplace_back(e, r);
  std::vector<Gate> gates;
  for (auto [e, r] : pairs)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) gates.push_back({e, r, y, x});
  const int G = static_cast<int>(gates.size());
  if (G > kMaxGates) throw std::invalid_argument("enumerate_gates: " + std::to_string(G) + " gates exceed the limit");

  std::vector<int> offset(S + 1, 0);
  for (int s = 0; s < S; ++s) offset[s + 1] = offset[s] + sc.f[s].dim(0) * N;
  const int n = offset[S];
  const std::size_t NN = n;
  auto idx = [&](int s, int c, int y, int x) { return static_cast<std::size_t>(offset[s] + c * N + y * w + x); };
  auto px = [w](int y, int x) { return static_cast<std::size_t>(y) * w + x; };
  const bool flag = inst.variant == crf::Variant::Flag;

  // Gate-independent parts: precision diag(a), linear a*f, constant -sum a/2 f^2.
  std::vector<double> base_P(NN * NN, 0.0), base_lin(NN, 0.0);
  double base_const = 0.0;
  for (int s = 0; s < S; ++s)
    for (int c = 0; c < sc.f[s].dim(0); ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t i = idx(s, c, y, x);
          const double a = sc.a[s][px(y, x)];
          const double f = sc.f[s][static_cast<std::size_t>(c) * N + px(y, x)];
          base_P[i * NN + i] = a;
          base_lin[i] = a * f;
          base_const -= 0.5 * a * f * f;
        }

  GateEnumeration out;
  out.gate_count = G;
  out.configurations = 1 << G;
  out.log_evidence.resize(out.configurations);
  out.min_precision_eigenvalue = INFINITY;
  std::vector<std::vector<double>> means(out.configurations);

  for (int cfg = 0; cfg < out.configurations; ++cfg) {
    std::vector<double> P = base_P, lin = base_lin;
    double cst = base_const;
    for (int k = 0; k < G; ++k) {
      if (!((cfg >> k) & 1)) continue;
      const Gate& g = gates[k];
      const int p = crf::pair_index(S, g.emitter, g.receiver);
      const int ce = sc.f[g.emitter].dim(0), cr = sc.f[g.receiver].dim(0);
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int jy = g.y + ky - 1, jx = g.x + kx - 1;
          if (jy < 0 || jy >= h || jx < 0 || jx >= w) continue;
          cst += inst.corner;
          // Bilinear h_r^i L h_e^j enters the precision as -(B + B^T).
          for (int c = 0; c < cr; ++c)
            for (int c2 = 0; c2 < ce; ++c2) {
              const double v = bank.L[p][((static_cast<std::size_t>(c) * ce + c2) * 3 + ky) * 3 + kx];
              const std::size_t ri = idx(g.receiver, c, g.y, g.x), ej = idx(g.emitter, c2, jy, jx);
              P[ri * NN + ej] -= v;
              P[ej * NN + ri] -= v;
            }
          for (int c2 = 0; c2 < ce; ++c2) {
            const double v = bank.l_er[p][(static_cast<std::size_t>(c2) * 3 + ky) * 3 + kx];
            if (flag) lin[idx(g.emitter, c2, jy, jx)] += v;
            else cst += v * sc.f[g.emitter][static_cast<std::size_t>(c2) * N + px(jy, jx)];
          }
          for (int c = 0; c < cr; ++c) {
            const double v = bank.l_re[p][(static_cast<std::size_t>(c) * 3 + ky) * 3 + kx];
            if (flag) lin[idx(g.receiver, c, jy, jx)] += v;
            else cst += v * sc.f[g.receiver][static_cast<std::size_t>(c) * N + px(jy, jx)];
          }
        }
    }
    if (gershgorin_positive(P, n)) {
      out.min_precision_eigenvalue = std::min(out.min_precision_eigenvalue, gershgorin_bound(P, n));
    } else {
      const double min_ev = symmetric_eigenvalues(P, n).front();
      out.min_precision_eigenvalue = std::min(out.min_precision_eigenvalue, min_ev);
      if (!(min_ev > 0.0)) {
        std::ostringstream os;
        os << "enumerate_gates: energy is not normalizable; gate configuration " << cfg
           << " has a precision eigenvalue " << min_ev << " <= 0";
        throw NonNormalizableError(os.str());
      }
    }
    std::vector<double> U = P;
    if (!cholesky(U, n)) throw NonNormalizableError("enumerate_gates: Cholesky failed on configuration " + std::to_string(cfg));
    std::vector<double> mu = cholesky_solve(U, lin, n);
    double quad = 0.0, logdet = 0.0;
    for (std::size_t i = 0; i < NN; ++i) {
      quad += lin[i] * mu[i];
      logdet += 2.0 * std::log(U[i * NN + i]);
    }
    out.log_evidence[cfg] = cst + 0.5 * quad - 0.5 * logdet;
    means[cfg] = std::move(mu);
  }

  const double m = *std::max_element(out.log_evidence.begin(), out.log_evidence.end());
  Kahan z;
  for (double le : out.log_evidence) z.add(std::exp(le - m));
  out.probability.resize(out.configurations);
  Kahan total;
  for (int cfg = 0; cfg < out.configurations; ++cfg) {
    out.probability[cfg] = std::exp(out.log_evidence[cfg] - m) / z.sum;
    total.add(out.probability[cfg]);
  }
  out.evidence_sum_residual = std::abs(total.sum - 1.0);

  out.marginals.mode = crf::AttentionMode::Scalar;
  out.marginals.scales = S;
  out.marginals.alpha.assign(crf::pair_count(S), Tensor({1, h, w}));
  for (int k = 0; k < G; ++k) {
    Kahan pk;
    for (int cfg = 0; cfg < out.configurations; ++cfg)
      if ((cfg >> k) & 1) pk.add(out.probability[cfg]);
    const Gate& g = gates[k];
    out.marginals.alpha[crf::pair_index(S, g.emitter, g.receiver)][px(g.y, g.x)] = pk.sum;
  }
  for (int s = 0; s < S; ++s) {
    Tensor t(sc.f[s].shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
      Kahan acc;
      for (int cfg = 0; cfg < out.configurations; ++cfg) acc.add(out.probability[cfg] * means[cfg][offset[s] + i]);
      t[i] = acc.sum;
    }
    out.mean_h.push_back(std::move(t));
  }
  return out;
}

}  // namespace agcrf::oracle
