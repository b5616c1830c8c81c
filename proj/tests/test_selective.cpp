#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mambadet/selective_ssm.hpp"
#include "mambadet/ssm_core.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numbers>
#include <string>

using namespace mambadet;
using namespace mambadet::selective;
using mambadet::ad::Tensor;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

SelectiveProjection random_projection(std::size_t ch, std::size_t n, std::size_t r, Rng& rng,
                                      double scale = 0.3) {
  SelectiveProjection p;
  p.w_b = random_tensor({ch, n}, rng, scale);
  p.w_c = random_tensor({ch, n}, rng, scale);
  p.w_dt_down = random_tensor({ch, r}, rng, scale);
  p.w_dt_up = random_tensor({r, ch}, rng, scale);
  p.dt_bias = random_tensor({ch}, rng, 0.5);
  return p;
}

Tensor random_a(std::size_t ch, std::size_t n, Rng& rng) {
  std::vector<double> v(ch * n);
  for (double& a : v) a = -rng.uniform(0.1, 2.0);
  return Tensor::from({ch, n}, std::move(v));
}

struct Problem {
  Tensor x;
  SelectiveProjection proj;
  Tensor a;
  Tensor d;
};

Problem random_problem(std::size_t batch, std::size_t len, std::size_t ch, std::size_t n,
                       std::uint64_t seed) {
  Rng rng(seed);
  Problem p;
  p.x = random_tensor({batch, len, ch}, rng);
  p.proj = random_projection(ch, n, 2, rng);
  p.a = random_a(ch, n, rng);
  p.d = random_tensor({ch}, rng);
  return p;
}

}  // namespace

TEST_CASE("project_params worked examples") {
  const auto proj = zero_projection(3, 4, 1);
  const auto pp = project_params(Tensor::zeros({1, 2, 3}), proj);
  for (double v : pp.delta.data()) CHECK(v == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  for (double v : pp.b.data()) CHECK(v == 0.0);
  for (double v : pp.c.data()) CHECK(v == 0.0);

  SelectiveProjection eye = zero_projection(3, 3, 1);
  auto w = eye.w_b.mutable_data();
  for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  const auto e1 = project_params(Tensor::from({1, 1, 3}, {1.0, 0.0, 0.0}), eye);
  CHECK(e1.b.data()[0] == 1.0);
  CHECK(e1.b.data()[1] == 0.0);
  CHECK(e1.b.data()[2] == 0.0);

  CHECK_THROWS_AS(project_params(Tensor::zeros({1, 2, 5}), proj), ad::ShapeError);
}

TEST_CASE("delta is strictly positive") {
  Rng rng(3);
  const auto proj = random_projection(4, 3, 2, rng, 3.0);
  const auto pp = project_params(random_tensor({2, 50, 4}, rng, 5.0), proj);
  for (double v : pp.delta.data()) CHECK(v > 0.0);
}

TEST_CASE("zero projections with unit D are pure feedthrough") {
  Rng rng(4);
  const Tensor x = random_tensor({2, 9, 3}, rng);
  const auto proj = zero_projection(3, 5, 1);
  const Tensor a = random_a(3, 5, rng);
  const Tensor d = Tensor::full({3}, 1.0);
  CHECK(max_abs_diff(selective_scan_sequential(x, proj, a, d).data(), x.data()) == 0.0);
  CHECK(max_abs_diff(selective_scan_parallel(x, proj, a, d, 4).data(), x.data()) == 0.0);
  CHECK(max_abs_diff(nc_ssd(x, proj, d).data(), x.data()) == 0.0);

  // x = 0 with zero weights gives zero output whatever D is.
  const Tensor y = selective_scan_sequential(Tensor::zeros({1, 4, 3}), proj, a,
                                             random_tensor({3}, rng));
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("single token unrolls to one step") {
  const auto p = random_problem(1, 1, 3, 4, 11);
  const auto pp = project_params(p.x, p.proj);
  const Tensor y = selective_scan_sequential(p.x, p.proj, p.a, p.d);
  for (std::size_t k = 0; k < 3; ++k) {
    double expect = p.d.data()[k] * p.x.data()[k];
    for (std::size_t j = 0; j < 4; ++j) {
      expect += pp.c.data()[j] * pp.b.data()[j] * pp.delta.data()[k] * p.x.data()[k];
    }
    CHECK(y.data()[k] == doctest::Approx(expect).epsilon(1e-14));
  }
  const Tensor yn = nc_ssd(p.x, p.proj, p.d);
  CHECK(max_abs_diff(yn.data(), y.data()) < 1e-15);
}

TEST_CASE("input-independent parameters reduce to the diagonal LTI recurrence") {
  Rng rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ch = 1 + rng.below(4);
    const std::size_t n = 1 + rng.below(6);
    const std::size_t len = 1 + rng.below(40);
    SelectiveProjection proj = zero_projection(ch, n, 1);
    proj.b_bias = random_tensor({n}, rng);
    proj.c_bias = random_tensor({n}, rng);
    proj.dt_bias = random_tensor({ch}, rng);
    const Tensor a = random_a(ch, n, rng);
    const Tensor d = random_tensor({ch}, rng);
    const Tensor x = random_tensor({len, ch}, rng);
    const Tensor y = selective_scan_sequential(x, proj, a, d);

    for (std::size_t k = 0; k < ch; ++k) {
      ssm::SsmParams sp;
      sp.diagonal = true;
      sp.a.resize(static_cast<Eigen::Index>(n), 1);
      sp.b.resize(static_cast<Eigen::Index>(n));
      sp.c.resize(static_cast<Eigen::Index>(n));
      for (std::size_t j = 0; j < n; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        sp.a(jj, 0) = a.data()[k * n + j];
        sp.b(jj) = proj.b_bias->data()[j];
        sp.c(jj) = proj.c_bias->data()[j];
      }
      sp.d = d.data()[k];
      sp.delta = std::log1p(std::exp(proj.dt_bias.data()[k]));
      std::vector<double> xk(len);
      for (std::size_t t = 0; t < len; ++t) xk[t] = x.data()[t * ch + k];
      const auto ref = ssm::run_recurrent(ssm::discretize_zoh(sp), xk);
      for (std::size_t t = 0; t < len; ++t) {
        worst = std::max(worst, std::abs(ref[t] - y.data()[t * ch + k]));
      }
    }
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("chunked scan matches the sequential scan") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t len = 64 + seed * 3;
    const auto p = random_problem(2, len, 3, 4, 100 + seed);
    const Tensor ref = selective_scan_sequential(p.x, p.proj, p.a, p.d);
    for (std::size_t chunk : {std::size_t{1}, std::size_t{2}, std::size_t{7}, std::size_t{16}, len}) {
      const Tensor y = selective_scan_parallel(p.x, p.proj, p.a, p.d, chunk);
      CHECK(max_abs_diff(y.data(), ref.data()) < 1e-9);
    }
  }
  const auto p = random_problem(1, 8, 2, 2, 5);
  CHECK_THROWS_AS(selective_scan_parallel(p.x, p.proj, p.a, p.d, 0), std::invalid_argument);
}

TEST_CASE("affine scan and composition") {
  const AffineMap f{0.5, 2.0};
  const AffineMap g{-1.5, 0.25};
  for (double h : {-3.0, 0.0, 1.0, 7.5}) {
    CHECK(compose(g, f).apply(h) == doctest::Approx(g.apply(f.apply(h))).epsilon(1e-15));
  }
  const AffineMap id{};
  CHECK(compose(id, f).a == f.a);
  CHECK(compose(f, id).b == f.b);

  Rng rng(8);
  const std::size_t len = 37;
  std::vector<double> a(len), v(len), ref(len), h(len);
  for (std::size_t t = 0; t < len; ++t) {
    a[t] = rng.uniform(0.0, 1.0);
    v[t] = rng.normal();
  }
  double acc = 0.0;
  for (std::size_t t = 0; t < len; ++t) ref[t] = acc = a[t] * acc + v[t];
  for (std::size_t chunk : {1, 3, 5, 37, 100}) {
    affine_scan(a.data(), v.data(), h.data(), len, 1, chunk);
    CHECK(max_abs_diff(h, ref) < 1e-12);
  }
  // Negative stride runs the recurrence from the end of the buffer.
  std::vector<double> ar(a.rbegin(), a.rend()), vr(v.rbegin(), v.rend()), hr(len);
  affine_scan(ar.data() + len - 1, vr.data() + len - 1, hr.data() + len - 1, len, -1, 4);
  std::vector<double> back(hr.rbegin(), hr.rend());
  CHECK(max_abs_diff(back, ref) < 1e-12);
}

TEST_CASE("single-step form agrees with the fused scan") {
  const auto p = random_problem(1, 12, 3, 4, 31);
  const auto pp = project_params(p.x, p.proj);
  const Tensor y = selective_scan_sequential(p.x, p.proj, p.a, p.d);
  SelectiveState st(3, 4);
  for (double h : st.h) CHECK(h == 0.0);
  for (std::size_t t = 0; t < 12; ++t) {
    const auto step = discretize_step(pp.delta.data().subspan(t * 3, 3), p.a.data(),
                                      pp.b.data().subspan(t * 4, 4),
                                      pp.c.data().subspan(t * 4, 4), p.d.data());
    for (double at : step.a_tilde) {
      CHECK(at > 0.0);
      CHECK(at < 1.0);
    }
    const auto yt = advance(st, step, p.x.data().subspan(t * 3, 3));
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(yt[k] == doctest::Approx(y.data()[t * 3 + k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("channels evolve independently") {
  const auto p = random_problem(1, 20, 4, 3, 41);
  // Make the timescale depend on each channel alone so that only B and C
  // couple channels; those are zeroed out for this property.
  SelectiveProjection proj = zero_projection(4, 3, 1);
  proj.b_bias = Tensor::full({3}, 0.7);
  proj.c_bias = Tensor::full({3}, -0.4);
  proj.dt_bias = p.proj.dt_bias;
  const Tensor y = selective_scan_sequential(p.x, proj, p.a, p.d);
  for (std::size_t j = 0; j < 4; ++j) {
    Tensor xz = p.x.detach();
    for (std::size_t t = 0; t < 20; ++t) xz.mutable_data()[t * 4 + j] = 0.0;
    const Tensor yz = selective_scan_sequential(xz, proj, p.a, p.d);
    for (std::size_t t = 0; t < 20; ++t) {
      for (std::size_t k = 0; k < 4; ++k) {
        if (k != j) CHECK(yz.data()[t * 4 + k] == y.data()[t * 4 + k]);
      }
    }
  }
}

TEST_CASE("the sequential scan is causal") {
  const auto p = random_problem(1, 24, 3, 4, 51);
  const Tensor y = selective_scan_sequential(p.x, p.proj, p.a, p.d);
  for (std::size_t s : {0u, 5u, 13u, 23u}) {
    Tensor xm = p.x.detach();
    for (std::size_t k = 0; k < 3; ++k) xm.mutable_data()[s * 3 + k] += 10.0;
    const Tensor ym = selective_scan_sequential(xm, p.proj, p.a, p.d);
    for (std::size_t t = 0; t < s; ++t) {
      for (std::size_t k = 0; k < 3; ++k) CHECK(ym.data()[t * 3 + k] == y.data()[t * 3 + k]);
    }
    bool changed = false;
    for (std::size_t k = 0; k < 3; ++k) changed |= ym.data()[s * 3 + k] != y.data()[s * 3 + k];
    CHECK(changed);
  }
}

TEST_CASE("nc_ssd is exactly permutation equivariant") {
  const std::size_t len = 30, ch = 3;
  const auto p = random_problem(1, len, ch, 5, 61);
  const Tensor y = nc_ssd(p.x, p.proj, p.d);
  Rng rng(62);
  for (int trial = 0; trial < 100; ++trial) {
    const auto perm = random_permutation(len, rng);
    std::vector<double> xp(len * ch);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t k = 0; k < ch; ++k) xp[t * ch + k] = p.x.data()[perm[t] * ch + k];
    }
    const Tensor yp = nc_ssd(Tensor::from({1, len, ch}, std::move(xp)), p.proj, p.d);
    bool exact = true;
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t k = 0; k < ch; ++k) {
        exact &= yp.data()[t * ch + k] == y.data()[perm[t] * ch + k];
      }
    }
    CHECK(exact);
  }
}

TEST_CASE("gradients of the scans match finite differences") {
  const auto p = random_problem(2, 10, 3, 4, 71);
  Rng rng(72);
  Tensor x = p.x;
  Tensor a_log = random_tensor({3, 4}, rng, 0.3);
  Tensor d = p.d;
  SelectiveProjection proj = p.proj;
  proj.b_bias = Tensor::full({4}, 0.1);
  proj.c_bias = Tensor::full({4}, -0.2);
  std::vector<Tensor> inputs{x, a_log, d, proj.w_b, proj.w_c, proj.w_dt_down, proj.w_dt_up,
                             proj.dt_bias, *proj.b_bias, *proj.c_bias};

  const auto seq = [&] {
    return testutil::weighted_sum(selective_scan_sequential(x, proj, decay_rates(a_log), d));
  };
  const auto par = [&] {
    return testutil::weighted_sum(selective_scan_parallel(x, proj, decay_rates(a_log), d, 3));
  };
  const auto nc = [&] { return testutil::weighted_sum(nc_ssd(x, proj, d)); };
  CHECK(testutil::grad_check(seq, inputs) < 1e-4);
  CHECK(testutil::grad_check(par, inputs) < 1e-4);
  CHECK(testutil::grad_check(nc, inputs) < 1e-4);
}

TEST_CASE("non-finite values report the offending step") {
  auto p = random_problem(1, 6, 2, 3, 81);
  p.x.mutable_data()[4 * 2 + 1] = INFINITY;
  try {
    selective_scan_sequential(p.x, p.proj, p.a, p.d);
    FAIL("expected NumericError");
  } catch (const ad::NumericError& e) {
    CHECK(std::string(e.what()).find("step 4") != std::string::npos);
  }
  CHECK_THROWS_AS(selective_scan_parallel(p.x, p.proj, p.a, p.d, 2), ad::NumericError);
  CHECK_THROWS_AS(nc_ssd(p.x, p.proj, p.d), ad::NumericError);
}
