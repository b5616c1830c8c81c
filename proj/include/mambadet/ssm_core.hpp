// Linear time-invariant SISO state-space model: zero-order-hold
// discretization, recurrent evaluation and FFT convolution evaluation.
//
//   h'(t) = A h(t) + B x(t),   y(t) = C h(t) + D x(t)
//   a_bar = exp(delta * A),    b_bar = delta * B
//   h_t = a_bar h_{t-1} + b_bar x_t,   y_t = C h_t + D x_t
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace mambadet::ssm {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedModeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SsmParams {
  // d x d, or d x 1 holding the diagonal when `diagonal` is set.
  Eigen::MatrixXd a;
  bool diagonal = false;
  Eigen::VectorXd b;      // d
  Eigen::RowVectorXd c;   // d
  double d = 0.0;
  double delta = 1.0;

  std::size_t state_dim() const { return static_cast<std::size_t>(b.size()); }
  // Throws std::invalid_argument on shape errors or delta <= 0. With
  // `check_stability`, diagonal systems must have strictly negative entries.
  void validate(bool check_stability = false) const;
};

struct DiscreteSsm {
  Eigen::MatrixXd a_bar;  // d x d, or d x 1 when diagonal
  bool diagonal = false;
  Eigen::VectorXd b_bar;
  Eigen::RowVectorXd c;
  double d = 0.0;

  std::size_t state_dim() const { return static_cast<std::size_t>(b_bar.size()); }
};

struct SsmKernel {
  std::vector<double> k_bar;
  std::size_t length() const { return k_bar.size(); }
};

enum class InputMap {
  kApproximate,  // b_bar = delta * B
  kExact,        // b_bar = (exp(delta A) - 1) / A * B, diagonal A only
};

// Scaling-and-squaring with a degree-13 Pade approximant.
Eigen::MatrixXd matrix_exp(const Eigen::MatrixXd& m);

DiscreteSsm discretize_zoh(const SsmParams& params,
                           InputMap input_map = InputMap::kApproximate);

std::vector<double> run_recurrent(const DiscreteSsm& dssm, std::span<const double> x,
                                  const std::optional<Eigen::VectorXd>& h0 = std::nullopt);

// k_bar[t] = C a_bar^t b_bar for t in [0, length).
SsmKernel conv_kernel(const DiscreteSsm& dssm, std::size_t length);

// Causal convolution with the kernel plus the D feedthrough, evaluated with a
// zero-padded FFT. Only valid from a zero initial state: a nonzero h0 throws
// UnsupportedModeError.
std::vector<double> run_convolution(const DiscreteSsm& dssm, std::span<const double> x,
                                    const std::optional<Eigen::VectorXd>& h0 = std::nullopt);

}  // namespace mambadet::ssm
