#include "mambadet/selective_ssm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mambadet::selective {

using ad::ShapeError;
using ad::Shape;

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw ShapeError(std::string(what) + ": expected shape " + ad::shape_str(shape) +
                     ", got " + ad::shape_str(t.shape()));
  }
}

// Runs `fn` on a rank-3 view of x; (L, C) inputs are treated as batch 1.
template <typename Fn>
Tensor with_batch(const Tensor& x, Fn&& fn) {
  if (x.rank() == 3) return fn(x);
  if (x.rank() == 2) {
    const Tensor y = fn(ad::reshape(x, {1, x.dim(0), x.dim(1)}));
    return ad::reshape(y, {y.dim(1), y.dim(2)});
  }
  throw ShapeError("selective scan input must be (L, C) or (B, L, C), got " +
                   ad::shape_str(x.shape()));
}

}  // namespace

SelectiveProjection zero_projection(std::size_t channels, std::size_t state_dim,
                                    std::size_t dt_rank) {
  dt_rank = std::max<std::size_t>(dt_rank, 1);
  SelectiveProjection p;
  p.w_b = Tensor::zeros({channels, state_dim});
  p.w_c = Tensor::zeros({channels, state_dim});
  p.w_dt_down = Tensor::zeros({channels, dt_rank});
  p.w_dt_up = Tensor::zeros({dt_rank, channels});
  p.dt_bias = Tensor::zeros({channels});
  return p;
}

ProjectedParams project_params(const Tensor& x, const SelectiveProjection& proj) {
  if (x.rank() < 2 || x.shape().back() != proj.channels()) {
    throw ShapeError("project_params: token dimension of " + ad::shape_str(x.shape()) +
                     " does not match projection input " +
                     std::to_string(proj.channels()));
  }
  ProjectedParams out;
  out.b = ad::linear(x, proj.w_b, proj.b_bias ? &*proj.b_bias : nullptr);
  out.c = ad::linear(x, proj.w_c, proj.c_bias ? &*proj.c_bias : nullptr);
  const Tensor dt = ad::linear(ad::linear(x, proj.w_dt_down), proj.w_dt_up, &proj.dt_bias);
  out.delta = ad::softplus(dt);
  return out;
}

Tensor decay_rates(const Tensor& a_log) { return ad::neg(ad::exp(a_log)); }

SelectiveStepParams discretize_step(std::span<const double> delta, std::span<const double> a,
                                    std::span<const double> b, std::span<const double> c,
                                    std::span<const double> d) {
  const std::size_t ch = delta.size();
  const std::size_t n = b.size();
  if (a.size() != ch * n || c.size() != n || d.size() != ch) {
    throw ShapeError("discretize_step: inconsistent channel/state sizes");
  }
  SelectiveStepParams step;
  step.a_tilde.resize(ch * n);
  step.b_scaled.resize(ch * n);
  for (std::size_t k = 0; k < ch; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      step.a_tilde[k * n + j] = std::exp(delta[k] * a[k * n + j]);
      step.b_scaled[k * n + j] = b[j] * delta[k];
    }
  }
  step.c.assign(c.begin(), c.end());
  step.d.assign(d.begin(), d.end());
  return step;
}

std::vector<double> advance(SelectiveState& state, const SelectiveStepParams& step,
                            std::span<const double> x) {
  const std::size_t ch = state.channels, n = state.state_dim;
  if (x.size() != ch || step.a_tilde.size() != ch * n) {
    throw ShapeError("advance: token has " + std::to_string(x.size()) +
                     " channels, state expects " + std::to_string(ch));
  }
  std::vector<double> y(ch);
  for (std::size_t k = 0; k < ch; ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double& h = state.h[k * n + j];
      h = step.a_tilde[k * n + j] * h + step.b_scaled[k * n + j] * x[k];
      acc += step.c[j] * h;
    }
    y[k] = acc + step.d[k] * x[k];
  }
  return y;
}

void affine_scan(const double* a, const double* v, double* h, std::size_t len,
                 std::ptrdiff_t stride, std::size_t chunk) {
  if (len == 0) return;
  if (chunk == 0) throw std::invalid_argument("affine_scan: chunk must be >= 1");
  const auto at = [stride](const double* p, std::size_t t) {
    return p[static_cast<std::ptrdiff_t>(t) * stride];
  };
  if (chunk >= len) {
    double state = 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      state = at(a, t) * state + at(v, t);
      h[static_cast<std::ptrdiff_t>(t) * stride] = state;
    }
    return;
  }
  const std::size_t chunks = (len + chunk - 1) / chunk;
  // Chunk-local prefix maps; prefix[t] maps the chunk's entry state to h[t].
  std::vector<AffineMap> prefix(len);
  for (std::size_t j = 0; j < chunks; ++j) {
    AffineMap acc;
    acc.a = 1.0;
    acc.b = 0.0;
    const std::size_t end = std::min(len, (j + 1) * chunk);
    for (std::size_t t = j * chunk; t < end; ++t) {
      acc = compose(AffineMap{at(a, t), at(v, t)}, acc);
      prefix[t] = acc;
    }
  }
  std::vector<double> carry(chunks, 0.0);
  for (std::size_t j = 1; j < chunks; ++j) {
    carry[j] = prefix[j * chunk - 1].apply(carry[j - 1]);
  }
  for (std::size_t t = 0; t < len; ++t) {
    h[static_cast<std::ptrdiff_t>(t) * stride] = prefix[t].apply(carry[t / chunk]);
  }
}

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a,
                      const Tensor& b, const Tensor& c, const Tensor& d,
                      std::size_t chunk) {
  if (x.rank() != 3) {
    throw ShapeError("selective_scan: x must be (B, L, C), got " + ad::shape_str(x.shape()));
  }
  if (chunk == 0) throw std::invalid_argument("selective_scan: chunk must be >= 1");
  const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
  if (a.rank() != 2 || a.dim(0) != ch) {
    throw ShapeError("selective_scan: A must be (C, N), got " + ad::shape_str(a.shape()));
  }
  const std::size_t n = a.dim(1);
  expect_shape(delta, x.shape(), "selective_scan delta");
  expect_shape(b, {batch, len, n}, "selective_scan B");
  expect_shape(c, {batch, len, n}, "selective_scan C");
  expect_shape(d, {ch}, "selective_scan D");

  const std::size_t lane_count = ch * n;
  const auto xv = x.data();
  const auto dv = delta.data();
  const auto av = a.data();
  const auto bv = b.data();
  const auto cv = c.data();
  const auto dd = d.data();

  auto states = std::make_shared<std::vector<double>>(batch * len * lane_count);
  std::vector<double> decay(len * lane_count);
  std::vector<double> inject(len * lane_count);
  std::vector<double> y(batch * len * ch);
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t row = (s * len + t) * ch;
      for (std::size_t k = 0; k < ch; ++k) {
        const double dt = dv[row + k];
        const double u = dt * xv[row + k];
        for (std::size_t j = 0; j < n; ++j) {
          decay[t * lane_count + k * n + j] = std::exp(dt * av[k * n + j]);
          inject[t * lane_count + k * n + j] = bv[(s * len + t) * n + j] * u;
        }
      }
    }
    double* hs = states->data() + s * len * lane_count;
    for (std::size_t lane = 0; lane < lane_count; ++lane) {
      affine_scan(decay.data() + lane, inject.data() + lane, hs + lane, len,
                  static_cast<std::ptrdiff_t>(lane_count), chunk);
    }
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t row = (s * len + t) * ch;
      const double* ct = cv.data() + (s * len + t) * n;
      for (std::size_t k = 0; k < ch; ++k) {
        const double* hk = hs + t * lane_count + k * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += ct[j] * hk[j];
        const double out = acc + dd[k] * xv[row + k];
        if (!std::isfinite(out)) {
          throw ad::NumericError("selective_scan: non-finite output at step " +
                                 std::to_string(t) + " (batch " + std::to_string(s) +
                                 ", channel " + std::to_string(k) + ")");
        }
        y[row + k] = out;
      }
    }
  }

  return ad::make_result(
      "selective_scan", x.shape(), std::move(y), {&x, &delta, &a, &b, &c, &d},
      [=](const Tensor&) -> ad::BackwardFn {
        return [=](std::span<const double> gy) mutable {
          auto gx = x.grad_accumulator();
          auto gdelta = delta.grad_accumulator();
          auto ga = a.grad_accumulator();
          auto gb = b.grad_accumulator();
          auto gc = c.grad_accumulator();
          auto gd = d.grad_accumulator();
          const auto xv = x.data();
          const auto dv = delta.data();
          const auto av = a.data();
          const auto bv = b.data();
          const auto cv = c.data();
          const auto dd = d.data();
          // shifted[t] = decay[t + 1]: coefficient of g_{t+1} in g_t.
          std::vector<double> shifted(len * lane_count, 0.0);
          std::vector<double> source(len * lane_count);
          std::vector<double> gh(len * lane_count);
          for (std::size_t s = 0; s < batch; ++s) {
            const double* hs = states->data() + s * len * lane_count;
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t row = (s * len + t) * ch;
              const double* ct = cv.data() + (s * len + t) * n;
              for (std::size_t k = 0; k < ch; ++k) {
                const double g = gy[row + k];
                if (!gd.empty()) gd[k] += g * xv[row + k];
                if (!gx.empty()) gx[row + k] += g * dd[k];
                for (std::size_t j = 0; j < n; ++j) {
                  source[t * lane_count + k * n + j] = g * ct[j];
                  if (!gc.empty()) gc[(s * len + t) * n + j] += g * hs[t * lane_count + k * n + j];
                }
              }
              if (t + 1 < len) {
                const std::size_t next = (s * len + t + 1) * ch;
                for (std::size_t k = 0; k < ch; ++k) {
                  for (std::size_t j = 0; j < n; ++j) {
                    shifted[t * lane_count + k * n + j] = std::exp(dv[next + k] * av[k * n + j]);
                  }
                }
              } else {
                std::fill_n(shifted.begin() + static_cast<std::ptrdiff_t>(t * lane_count),
                            lane_count, 0.0);
              }
            }
            const auto back = static_cast<std::ptrdiff_t>((len - 1) * lane_count);
            for (std::size_t lane = 0; lane < lane_count; ++lane) {
              affine_scan(shifted.data() + back + static_cast<std::ptrdiff_t>(lane),
                          source.data() + back + static_cast<std::ptrdiff_t>(lane),
                          gh.data() + back + static_cast<std::ptrdiff_t>(lane), len,
                          -static_cast<std::ptrdiff_t>(lane_count), chunk);
            }
            for (std::size_t t = 0; t < len; ++t) {
              const std::size_t row = (s * len + t) * ch;
              for (std::size_t k = 0; k < ch; ++k) {
                const double dt = dv[row + k];
                const double xk = xv[row + k];
                const double u = dt * xk;
                double gu = 0.0;
                double gdt = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                  const std::size_t lane = k * n + j;
                  const double g = gh[t * lane_count + lane];
                  const double prev = t > 0 ? hs[(t - 1) * lane_count + lane] : 0.0;
                  const double decay_t = std::exp(dt * av[lane]);
                  const double gdecay = g * prev * decay_t;
                  gdt += gdecay * av[lane];
                  if (!ga.empty()) ga[lane] += gdecay * dt;
                  const double bj = bv[(s * len + t) * n + j];
                  gu += g * bj;
                  if (!gb.empty()) gb[(s * len + t) * n + j] += g * u;
                }
                gdt += gu * xk;
                if (!gdelta.empty()) gdelta[row + k] += gdt;
                if (!gx.empty()) gx[row + k] += gu * dt;
              }
            }
          }
        };
      });
}

Tensor selective_scan_sequential(const Tensor& x, const SelectiveProjection& proj,
                                 const Tensor& a, const Tensor& d) {
  return with_batch(x, [&](const Tensor& x3) {
    const ProjectedParams p = project_params(x3, proj);
    return selective_scan(x3, p.delta, a, p.b, p.c, d, std::max<std::size_t>(x3.dim(1), 1));
  });
}

Tensor selective_scan_parallel(const Tensor& x, const SelectiveProjection& proj,
                               const Tensor& a, const Tensor& d, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("selective_scan_parallel: chunk must be >= 1");
  return with_batch(x, [&](const Tensor& x3) {
    const ProjectedParams p = project_params(x3, proj);
    return selective_scan(x3, p.delta, a, p.b, p.c, d, chunk);
  });
}

Tensor nc_ssd_core(const Tensor& x, const Tensor& delta, const Tensor& b,
                   const Tensor& c, const Tensor& d) {
  if (x.rank() != 3) {
    throw ShapeError("nc_ssd: x must be (B, L, C), got " + ad::shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2);
  if (b.rank() != 3) throw ShapeError("nc_ssd: B must be (B, L, N)");
  const std::size_t n = b.dim(2);
  expect_shape(delta, x.shape(), "nc_ssd delta");
  expect_shape(b, {batch, len, n}, "nc_ssd B");
  expect_shape(c, {batch, len, n}, "nc_ssd C");
  expect_shape(d, {ch}, "nc_ssd D");

  const auto xv = x.data();
  const auto dv = delta.data();
  const auto bv = b.data();
  const auto cv = c.data();
  const auto dd = d.data();
  auto shared = std::make_shared<std::vector<double>>(batch * ch * n);
  std::vector<double> terms(len);
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t k = 0; k < ch; ++k) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = 0; t < len; ++t) {
          const std::size_t row = (s * len + t) * ch + k;
          terms[t] = bv[(s * len + t) * n + j] * (dv[row] * xv[row]);
        }
        // Sorting fixes the summation order independently of token order.
        std::sort(terms.begin(), terms.end());
        double acc = 0.0;
        for (double v : terms) acc += v;
        (*shared)[(s * ch + k) * n + j] = acc;
      }
    }
  }
  std::vector<double> y(x.numel());
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t t = 0; t < len; ++t) {
      const double* ct = cv.data() + (s * len + t) * n;
      for (std::size_t k = 0; k < ch; ++k) {
        const double* hk = shared->data() + (s * ch + k) * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += ct[j] * hk[j];
        const std::size_t row = (s * len + t) * ch + k;
        y[row] = acc + dd[k] * xv[row];
        if (!std::isfinite(y[row])) {
          throw ad::NumericError("nc_ssd: non-finite output at token " + std::to_string(t));
        }
      }
    }
  }
  return ad::make_result(
      "nc_ssd", x.shape(), std::move(y), {&x, &delta, &b, &c, &d},
      [=](const Tensor&) -> ad::BackwardFn {
        return [=](std::span<const double> gy) mutable {
          auto gx = x.grad_accumulator();
          auto gdelta = delta.grad_accumulator();
          auto gb = b.grad_accumulator();
          auto gc = c.grad_accumulator();
          auto gd = d.grad_accumulator();
          const auto xv = x.data();
          const auto dv = delta.data();
          const auto bv = b.data();
          const auto cv = c.data();
          const auto dd = d.data();
          std::vector<double> gh(ch * n);
          for (std::size_t s = 0; s < batch; ++s) {
            std::fill(gh.begin(), gh.end(), 0.0);
            const double* hs = shared->data() + s * ch * n;
            for (std::size_t t = 0; t < len; ++t) {
              const double* ct = cv.data() + (s * len + t) * n;
              for (std::size_t k = 0; k < ch; ++k) {
                const std::size_t row = (s * len + t) * ch + k;
                const double g = gy[row];
                if (!gd.empty()) gd[k] += g * xv[row];
                if (!gx.empty()) gx[row] += g * dd[k];
                for (std::size_t j = 0; j < n; ++j) {
                  gh[k * n + j] += g * ct[j];
                  if (!gc.empty()) gc[(s * len + t) * n + j] += g * hs[k * n + j];
                }
              }
            }
            for (std::size_t t = 0; t < len; ++t) {
              const double* bt = bv.data() + (s * len + t) * n;
              for (std::size_t k = 0; k < ch; ++k) {
                const std::size_t row = (s * len + t) * ch + k;
                const double u = dv[row] * xv[row];
                double gu = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                  gu += gh[k * n + j] * bt[j];
                  if (!gb.empty()) gb[(s * len + t) * n + j] += gh[k * n + j] * u;
                }
                if (!gdelta.empty()) gdelta[row] += gu * xv[row];
                if (!gx.empty()) gx[row] += gu * dv[row];
              }
            }
          }
        };
      });
}

Tensor nc_ssd(const Tensor& x, const SelectiveProjection& proj, const Tensor& d) {
  return with_batch(x, [&](const Tensor& x3) {
    const ProjectedParams p = project_params(x3, proj);
    return nc_ssd_core(x3, p.delta, p.b, p.c, d);
  });
}

}  // namespace mambadet::selective
