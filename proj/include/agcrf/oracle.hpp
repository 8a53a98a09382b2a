#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "agcrf/crf.hpp"
#include "agcrf/tensor.hpp"

// Brute-force verifiers. Everything here is written with explicit index loops
// over the plain data types and never calls the convolution kernels or the tape,
// so it can check those independently.

namespace agcrf::oracle {

class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(const std::string& what, double condition_estimate)
      : std::runtime_error(what), condition_estimate(condition_estimate) {}
  double condition_estimate;
};

class NonNormalizableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- naive reference loops -------------------------------------------------

Tensor naive_conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);
Tensor naive_deconv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);
/// Returns pooled values; ties pick the first element in raster order.
Tensor naive_maxpool2d(const Tensor& input, int k, int stride);

/// Kernel entry L[c, c', tap] at pixel (y, x) for shared or per-pixel banks.
double kernel_entry(const Tensor& kernel, crf::KernelMode mode, int out_c, int in_c, int in_channels, int ky, int kx,
                    int y, int x);

/// sum_j L^{i,j} h_e^j over the 3x3 neighbourhood, for shared or conditional kernels.
Tensor naive_message(int emitter, int receiver, const crf::KernelBank& bank, const crf::ScaleSet& scales);

/// Pre-sigmoid attention, accumulated term by term over neighbours j:
///   h_r^i L^{i,j} h_e^j  +  l_er^{j} . x_e^j  +  l_re^{j} . x_r^j
Tensor naive_attention_logits(int emitter, int receiver, const crf::KernelBank& bank, const crf::ScaleSet& scales,
                              const crf::AgcrfConfig& cfg);

double naive_energy(const crf::ScaleSet& assignment, const crf::GateMap& gates, const crf::KernelBank& bank,
                    crf::Variant variant, double corner);

/// Per-pixel matrix-vector reconstruction of a conditional kernel head:
/// field^i = W * input^i + b, with W viewed as a [rows x C_in] matrix.
Tensor naive_kernel_field(const Tensor& weight, const Tensor& bias, const Tensor& input);

// ---- fixed-gate Gaussian mean ----------------------------------------------

/// A h = b for the fixed point of the mean-field update with frozen gates:
///   h_r[c]^i - (1/a_r^i) sum_{e != r} alpha_{e,r}^i sum_j L^{i,j} h_e^j = f_r[c]^i.
/// Unknowns are ordered (scale, channel, pixel).
struct DenseSystem {
  int n = 0;
  std::vector<double> A;  // row-major n x n
  std::vector<double> b;
  std::vector<int> scale_offset;
};

DenseSystem assemble_fixed_gate_system(const crf::ScaleSet& scales, const crf::KernelBank& bank,
                                       const crf::GateMap& gates);

/// Gaussian elimination with partial pivoting. Throws SingularSystemError.
std::vector<double> gauss_solve(std::vector<double> A, std::vector<double> b, int n);

struct FixedGateSolution {
  std::vector<Tensor> h;
  double residual = 0.0;  // max |A h - b|
};

constexpr int kMaxDenseUnknowns = 4096;

FixedGateSolution solve_fixed_gate_mean(const crf::ScaleSet& scales, const crf::KernelBank& bank,
                                        const crf::GateMap& gates);

// ---- exhaustive gate enumeration -------------------------------------------

/// A tiny AG-CRF instance with shared kernels and scalar (per-pixel) gates.
struct TinyInstance {
  crf::ScaleSet scales;  // f and a used; h ignored
  crf::KernelBank bank;  // shared, l-kernels with one output channel
  crf::Variant variant = crf::Variant::Flag;
  double corner = 1.0;
  /// Ordered (emitter, receiver) pairs that carry gates; empty means all pairs.
  std::vector<std::pair<int, int>> active_pairs;
};

struct GateEnumeration {
  int gate_count = 0;
  int configurations = 0;
  std::vector<double> log_evidence;   // per configuration, up to a shared constant
  std::vector<double> probability;    // normalized
  double evidence_sum_residual = 0.0; // |sum(probability) - 1|
  crf::GateMap marginals;             // P(g = 1); inactive pairs hold zeros
  std::vector<Tensor> mean_h;         // exact posterior E[h]
  /// Positive lower bound on the smallest precision eigenvalue over all
  /// configurations: the Gershgorin bound where that proves definiteness,
  /// the exact eigenvalue otherwise.
  double min_precision_eigenvalue = 0.0;
};

constexpr int kMaxGates = 12;

/// Exact posterior under P(H, G) proportional to exp(E(H, G)) with E the
/// gated energy. Rejects instances whose quadratic form in H is not
/// negative-definite for some gate configuration.
GateEnumeration enumerate_gates(const TinyInstance& instance);

/// Symmetric eigenvalues by cyclic Jacobi rotations, ascending.
std::vector<double> symmetric_eigenvalues(std::vector<double> A, int n);
/// True if every Gershgorin disc lies strictly in the right half-line.
bool gershgorin_positive(const std::vector<double>& A, int n);

// ---- finite differences ----------------------------------------------------

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central difference d loss / d x[index].
double fd_partial(const ScalarFn& loss, std::vector<double>& x, std::size_t index, double step = 1e-5);
std::vector<double> fd_gradient(const ScalarFn& loss, std::span<const double> x, double step = 1e-5);

/// |a - b| / max(1, |a|, |b|).
double relative_error(double a, double b);

}  // namespace agcrf::oracle
