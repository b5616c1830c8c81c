// Selective (input-dependent) state-space model over multi-channel token
// sequences, evaluated independently per channel:
//
//   B_i = s_B(x_i),  C_i = s_C(x_i),  delta_i = softplus(delta_base + s_delta(x_i))
//   h_i = exp(delta_i * A) (.) h_{i-1} + B_i (delta_i (.) x_i)
//   y_i = C_i h_i + D (.) x_i
//
// Tensors are (batch, length, channels); A is (channels, state) with
// negative entries, parameterized as A = -exp(A_log).
#pragma once

#include "mambadet/tensor.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace mambadet::selective {

using ad::Tensor;

struct SelectiveProjection {
  Tensor w_b;        // (C, N)
  Tensor w_c;        // (C, N)
  Tensor w_dt_down;  // (C, R)
  Tensor w_dt_up;    // (R, C)
  Tensor dt_bias;    // (C), the learned delta_base
  // Optional input-independent offsets for B and C, (N) each.
  std::optional<Tensor> b_bias;
  std::optional<Tensor> c_bias;

  std::size_t channels() const { return w_b.dim(0); }
  std::size_t state_dim() const { return w_b.dim(1); }
  std::size_t dt_rank() const { return w_dt_down.dim(1); }
};

// Zero-initialized projection; dt_rank of 0 is promoted to 1.
SelectiveProjection zero_projection(std::size_t channels, std::size_t state_dim,
                                    std::size_t dt_rank);

struct ProjectedParams {
  Tensor delta;  // (B, L, C), strictly positive
  Tensor b;      // (B, L, N)
  Tensor c;      // (B, L, N)
};

ProjectedParams project_params(const Tensor& x, const SelectiveProjection& proj);

// A = -exp(a_log)
Tensor decay_rates(const Tensor& a_log);

// --- single-step form --------------------------------------------------------

struct SelectiveState {
  std::size_t channels = 0;
  std::size_t state_dim = 0;
  std::vector<double> h;  // channels x state_dim, row-major

  SelectiveState(std::size_t c, std::size_t n) : channels(c), state_dim(n), h(c * n, 0.0) {}
};

struct SelectiveStepParams {
  std::vector<double> a_tilde;   // C x N, exp(delta_c * A_cn)
  std::vector<double> b_scaled;  // C x N, B_n * delta_c
  std::vector<double> c;         // N
  std::vector<double> d;         // C
};

SelectiveStepParams discretize_step(std::span<const double> delta, std::span<const double> a,
                                    std::span<const double> b, std::span<const double> c,
                                    std::span<const double> d);

// Advances the state by one token and returns y_i (length C).
std::vector<double> advance(SelectiveState& state, const SelectiveStepParams& step,
                            std::span<const double> x);

// --- affine maps h -> a*h + b ------------------------------------------------

struct AffineMap {
  double a = 1.0;
  double b = 0.0;
  double apply(double h) const { return a * h + b; }
};

// (second o first)(h) = second(first(h))
inline AffineMap compose(const AffineMap& second, const AffineMap& first) {
  return {second.a * first.a, second.a * first.b + second.b};
}

// h[t] = a[t] * h[t-1] + v[t] with h[-1] = 0, over `len` elements spaced by
// `stride` (which may be negative to run backwards in memory). With
// chunk < len the recurrence is evaluated as chunk-local prefix compositions,
// a carry pass over chunk boundaries and a fix-up pass.
void affine_scan(const double* a, const double* v, double* h, std::size_t len,
                 std::ptrdiff_t stride, std::size_t chunk);

// --- fused scans ---------------------------------------------------------------

// Differentiable scan over already-projected parameters. chunk >= L runs the
// plain sequential recurrence. Throws ad::NumericError naming the first
// non-finite step.
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a,
                      const Tensor& b, const Tensor& c, const Tensor& d,
                      std::size_t chunk);

Tensor selective_scan_sequential(const Tensor& x, const SelectiveProjection& proj,
                                 const Tensor& a, const Tensor& d);
Tensor selective_scan_parallel(const Tensor& x, const SelectiveProjection& proj,
                               const Tensor& a, const Tensor& d, std::size_t chunk);

// Non-causal variant with one hidden state shared by all tokens:
//   H = sum_t B_t (delta_t (.) x_t),   y_i = C_i H + D (.) x_i
// H is accumulated in an order that does not depend on token order, so
// permuting the tokens permutes the outputs bit-for-bit.
Tensor nc_ssd_core(const Tensor& x, const Tensor& delta, const Tensor& b,
                   const Tensor& c, const Tensor& d);
Tensor nc_ssd(const Tensor& x, const SelectiveProjection& proj, const Tensor& d);

}  // namespace mambadet::selective
