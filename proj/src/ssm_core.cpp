#include "mambadet/ssm_core.hpp"

#include "mambadet/fft.hpp"

#include <cmath>
#include <string>

namespace mambadet::ssm {

namespace {

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

}  // namespace

void SsmParams::validate(bool check_stability) const {
  const Eigen::Index n = b.size();
  if (n < 1) throw std::invalid_argument("SsmParams: state dimension must be >= 1");
  if (c.size() != n) {
    throw std::invalid_argument("SsmParams: C has " + std::to_string(c.size()) +
                                " entries, expected " + std::to_string(n));
  }
  if (diagonal) {
    if (a.rows() != n || a.cols() != 1) {
      throw std::invalid_argument("SsmParams: diagonal A must be d x 1");
    }
  } else if (a.rows() != n || a.cols() != n) {
    throw std::invalid_argument("SsmParams: A must be d x d");
  }
  if (!(delta > 0.0)) throw std::invalid_argument("SsmParams: delta must be > 0");
  if (check_stability && diagonal && (a.array() >= 0.0).any()) {
    throw std::invalid_argument("SsmParams: diagonal A has a non-negative entry");
  }
}

Eigen::MatrixXd matrix_exp(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("matrix_exp: matrix not square");
  constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                          1187353796428800.0,  129060195264000.0,   10559470521600.0,
                          670442572800.0,      33522128640.0,       1323241920.0,
                          40840800.0,          960960.0,            16380.0,
                          182.0,               1.0};
  constexpr double theta13 = 5.371920351148152;
  const Eigen::Index n = m.rows();
  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > theta13) {
    squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
  }
  const Eigen::MatrixXd a = m / std::ldexp(1.0, squarings);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd a2 = a * a;
  const Eigen::MatrixXd a4 = a2 * a2;
  const Eigen::MatrixXd a6 = a4 * a2;
  const Eigen::MatrixXd u =
      a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
           b[3] * a2 + b[1] * id);
  const Eigen::MatrixXd v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 +
                            b[4] * a4 + b[2] * a2 + b[0] * id;
  Eigen::MatrixXd r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < squarings; ++i) r = r * r;
  return r;
}

DiscreteSsm discretize_zoh(const SsmParams& params, InputMap input_map) {
  params.validate();
  DiscreteSsm out;
  out.diagonal = params.diagonal;
  out.c = params.c;
  out.d = params.d;
  const double delta = params.delta;
  if (params.diagonal) {
    out.a_bar = (delta * params.a.array()).exp().matrix();
  } else {
    out.a_bar = matrix_exp(delta * params.a);
  }
  if (input_map == InputMap::kExact) {
    if (!params.diagonal) {
      throw UnsupportedModeError("exact ZOH input map is only provided for diagonal A");
    }
    out.b_bar.resize(params.b.size());
    for (Eigen::Index i = 0; i < params.b.size(); ++i) {
      const double ai = params.a(i, 0);
      // (exp(delta a) - 1) / a, with the delta limit at a == 0.
      const double factor = ai == 0.0 ? delta : std::expm1(delta * ai) / ai;
      out.b_bar(i) = factor * params.b(i);
    }
  } else {
    out.b_bar = delta * params.b;
  }
  if (!all_finite(out.a_bar) || !out.b_bar.allFinite()) {
    throw NumericError("discretize_zoh: non-finite discretized parameters (delta*A too large?)");
  }
  return out;
}

namespace {

Eigen::VectorXd apply_a(const DiscreteSsm& dssm, const Eigen::VectorXd& h) {
  if (dssm.diagonal) return dssm.a_bar.col(0).cwiseProduct(h);
  return dssm.a_bar * h;
}

}  // namespace

std::vector<double> run_recurrent(const DiscreteSsm& dssm, std::span<const double> x,
                                  const std::optional<Eigen::VectorXd>& h0) {
  const auto n = static_cast<Eigen::Index>(dssm.state_dim());
  Eigen::VectorXd h = Eigen::VectorXd::Zero(n);
  if (h0) {
    if (h0->size() != n) {
      throw std::invalid_argument("run_recurrent: h0 has dimension " +
                                  std::to_string(h0->size()) + ", expected " +
                                  std::to_string(n));
    }
    h = *h0;
  }
  std::vector<double> y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    h = apply_a(dssm, h) + dssm.b_bar * x[t];
    y[t] = dssm.c.dot(h) + dssm.d * x[t];
  }
  return y;
}

SsmKernel conv_kernel(const DiscreteSsm& dssm, std::size_t length) {
  if (length < 1) throw std::invalid_argument("conv_kernel: length must be >= 1");
  SsmKernel kernel;
  kernel.k_bar.resize(length);
  Eigen::VectorXd v = dssm.b_bar;
  for (std::size_t t = 0; t < length; ++t) {
    kernel.k_bar[t] = dssm.c.dot(v);
    v = apply_a(dssm, v);
  }
  return kernel;
}

std::vector<double> run_convolution(const DiscreteSsm& dssm, std::span<const double> x,
                                    const std::optional<Eigen::VectorXd>& h0) {
  if (h0 && !h0->isZero(0.0)) {
    throw UnsupportedModeError(
        "run_convolution: the convolution form requires a zero initial state");
  }
  const std::size_t len = x.size();
  if (len == 0) return {};
  const SsmKernel kernel = conv_kernel(dssm, len);
  const std::size_t n = fft::next_power_of_two(2 * len);
  auto fx = fft::fft_real(x, n);
  const auto fk = fft::fft_real(kernel.k_bar, n);
  for (std::size_t i = 0; i < n; ++i) fx[i] *= fk[i];
  fft::transform(fx, true);
  std::vector<double> y(len);
  for (std::size_t t = 0; t < len; ++t) y[t] = fx[t].real() + dssm.d * x[t];
  return y;
}

}  // namespace mambadet::ssm
