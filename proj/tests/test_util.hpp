// Helpers shared by the test binaries.
#pragma once

#include "mambadet/rng.hpp"
#include "mambadet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

using mambadet::Rng;
using mambadet::ad::Shape;
using mambadet::ad::Tensor;

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0,
                            bool requires_grad = false) {
  std::vector<double> v(mambadet::ad::shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from(shape, std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Relative error of one gradient entry, floored so that entries that are
// both essentially zero do not divide by zero.
inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// Worst relative error between the tape gradient of `loss` and central
// differences, over up to `samples` entries of each input.
inline double grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                         std::size_t samples = 24, double h = 1e-5, std::uint64_t seed = 99) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    mambadet::ad::Tape tape;
    mambadet::ad::TapeScope scope(tape);
    tape.backward(loss());
  }
  Rng rng(seed);
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > samples) {
      auto perm = mambadet::random_permutation(idx.size(), rng);
      idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(samples));
    }
    for (std::size_t i : idx) {
      auto v = t.mutable_data();
      const double orig = v[i];
      v[i] = orig + h;
      const double up = loss().item();
      v[i] = orig - h;
      const double down = loss().item();
      v[i] = orig;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h)));
    }
    t.zero_grad();
  }
  return worst;
}

// A fixed random projection to turn any tensor into a scalar loss.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 7) {
  Rng rng(seed);
  const Tensor w = random_tensor(y.shape(), rng);
  return mambadet::ad::sum(mambadet::ad::mul(y, w));
}

}  // namespace testutil
