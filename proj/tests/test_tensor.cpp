#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mambadet/tensor.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numeric>

using namespace mambadet;
using ad::Tensor;
using testutil::grad_check;
using testutil::random_tensor;
using testutil::weighted_sum;

TEST_CASE("construction and shape errors") {
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ad::ShapeError);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK_THROWS(t.item());
}

TEST_CASE("broadcast add/mul match explicit loops") {
  Rng rng(1);
  const Tensor a = random_tensor({2, 3, 4}, rng);
  const Tensor b = random_tensor({3, 1}, rng);
  const Tensor s = ad::add(a, b);
  const Tensor p = ad::mul(a, b);
  REQUIRE(s.shape() == ad::Shape{2, 3, 4});
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t f = (i * 3 + j) * 4 + k;
        CHECK(s.data()[f] == a.data()[f] + b.data()[j]);
        CHECK(p.data()[f] == a.data()[f] * b.data()[j]);
      }
    }
  }
  CHECK_THROWS_AS(ad::add(a, Tensor::zeros({5})), ad::ShapeError);
}

TEST_CASE("matmul and linear against naive products") {
  Rng rng(2);
  const Tensor a = random_tensor({2, 3, 4}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  const Tensor bias = random_tensor({5}, rng);
  const Tensor y = ad::linear(a, w, &bias);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      double acc = bias.data()[c];
      for (std::size_t k = 0; k < 4; ++k) acc += a.data()[r * 4 + k] * w.data()[k * 5 + c];
      CHECK(y.data()[r * 5 + c] == doctest::Approx(acc).epsilon(1e-14));
    }
  }
  const Tensor bm = random_tensor({2, 4, 3}, rng);
  const Tensor z = ad::matmul(a, bm);
  REQUIRE(z.shape() == ad::Shape{2, 3, 3});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
          acc += a.data()[(b * 3 + i) * 4 + k] * bm.data()[(b * 4 + k) * 3 + j];
        }
        CHECK(z.data()[(b * 3 + i) * 3 + j] == doctest::Approx(acc).epsilon(1e-14));
      }
    }
  }
  CHECK_THROWS_AS(ad::matmul(a, random_tensor({3, 5}, rng)), ad::ShapeError);
}

TEST_CASE("activation values and stability") {
  const Tensor x = Tensor::from({4}, {-800.0, -1.0, 0.5, 800.0});
  const Tensor spt = ad::softplus(x);
  const auto sp = spt.data();
  CHECK(sp[0] == doctest::Approx(0.0));
  CHECK(sp[1] == doctest::Approx(std::log1p(std::exp(-1.0))));
  CHECK(sp[3] == doctest::Approx(800.0));
  const Tensor sgt = ad::sigmoid(x);
  const auto sg = sgt.data();
  CHECK(sg[0] == doctest::Approx(0.0));
  CHECK(sg[3] == doctest::Approx(1.0));
  const Tensor sit = ad::silu(x);
  const auto si = sit.data();
  CHECK(si[2] == doctest::Approx(0.5 / (1.0 + std::exp(-0.5))));
  for (double v : sp) CHECK(std::isfinite(v));
}

TEST_CASE("rms_norm matches its definition") {
  Rng rng(3);
  const Tensor x = random_tensor({2, 5}, rng);
  const Tensor g = random_tensor({5}, rng);
  const Tensor yt = ad::rms_norm(x, g);
  const auto y = yt.data();
  for (std::size_t r = 0; r < 2; ++r) {
    double ms = 0.0;
    for (std::size_t c = 0; c < 5; ++c) ms += x.data()[r * 5 + c] * x.data()[r * 5 + c];
    const double inv = 1.0 / std::sqrt(ms / 5.0 + 1e-6);
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(y[r * 5 + c] == doctest::Approx(x.data()[r * 5 + c] * inv * g.data()[c]).epsilon(1e-13));
    }
  }
}

TEST_CASE("depthwise convolutions follow the zero-padded definition") {
  Rng rng(4);
  const std::size_t L = 7, C = 3, K = 4;
  const Tensor x = random_tensor({2, L, C}, rng);
  const Tensor w = random_tensor({C, K}, rng);
  const Tensor b = random_tensor({C}, rng);
  for (std::size_t left : {std::size_t{0}, std::size_t{1}, std::size_t{3}}) {
    const Tensor yt = ad::depthwise_conv1d(x, w, b, left);
    const auto y = yt.data();
    for (std::size_t bb = 0; bb < 2; ++bb) {
      for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t c = 0; c < C; ++c) {
          double acc = b.data()[c];
          for (std::size_t k = 0; k < K; ++k) {
            const auto src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(left);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
            acc += w.data()[c * K + k] * x.data()[(bb * L + static_cast<std::size_t>(src)) * C + c];
          }
          CHECK(y[(bb * L + t) * C + c] == doctest::Approx(acc).epsilon(1e-13));
        }
      }
    }
  }
  // 3x4 grid, 3x3 kernel with only the centre tap: identity plus bias.
  const Tensor g = random_tensor({1, 12, 2}, rng);
  std::vector<double> wc(18, 0.0);
  wc[4] = wc[13] = 1.0;
  const Tensor zb = Tensor::zeros({2});
  CHECK(testutil::max_abs_diff(ad::depthwise_conv2d_grid(g, Tensor::from({2, 9}, wc), zb, 3, 4).data(),
                               g.data()) == 0.0);
  // Right-neighbour tap shifts the grid left, zero at the right edge.
  std::vector<double> wr(18, 0.0);
  wr[5] = wr[14] = 1.0;
  const Tensor sht = ad::depthwise_conv2d_grid(g, Tensor::from({2, 9}, wr), zb, 3, 4);
  const auto sh = sht.data();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t ch = 0; ch < 2; ++ch) {
        const double expect = c + 1 < 4 ? g.data()[(r * 4 + c + 1) * 2 + ch] : 0.0;
        CHECK(sh[(r * 4 + c) * 2 + ch] == expect);
      }
    }
  }
  CHECK_THROWS_AS(ad::depthwise_conv2d_grid(g, Tensor::from({2, 9}, wc), zb, 5, 4), ad::ShapeError);
}

TEST_CASE("token gather/scatter are inverse and reject duplicates") {
  Rng rng(5);
  const Tensor x = random_tensor({2, 6, 3}, rng);
  const std::vector<std::size_t> perm = {4, 0, 5, 2, 1, 3};
  const Tensor back = ad::scatter_tokens(ad::gather_tokens(x, perm), perm, 6);
  CHECK(testutil::max_abs_diff(back.data(), x.data()) == 0.0);
  const std::vector<std::size_t> dup = {1, 1};
  CHECK_THROWS_AS(ad::scatter_tokens(ad::slice_tokens(x, 0, 2), dup, 6), ad::ShapeError);
  const std::vector<std::size_t> partial = {5, 2};
  const Tensor sct = ad::scatter_tokens(ad::slice_tokens(x, 0, 2), partial, 6);
  const auto sc = sct.data();
  CHECK(sc[0] == 0.0);
  CHECK(sc[5 * 3] == x.data()[0]);
}

TEST_CASE("softmax cross-entropy and softmax rows") {
  const Tensor logits = Tensor::from({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1000.0});
  const std::vector<int> labels = {2, 0};
  const double l0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double l1 = 1001.0;  // -log softmax at -1 vs 1000
  CHECK(ad::softmax_cross_entropy(logits, labels).item() == doctest::Approx((l0 + l1) / 2.0));
  const std::vector<double> row = {1.0, -3.0, 700.0};
  const auto sm = ad::softmax_row(row);
  CHECK(std::accumulate(sm.begin(), sm.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<int> bad = {5, 0};
  CHECK_THROWS(ad::softmax_cross_entropy(logits, bad));
}

TEST_CASE("tape records only with an active tape and grad-requiring inputs") {
  Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
  const Tensor c = Tensor::from({2}, {3.0, 4.0});
  {
    const Tensor y = ad::mul(w, c);
    CHECK_FALSE(y.requires_grad());
  }
  ad::Tape tape;
  ad::TapeScope scope(tape);
  const Tensor y = ad::sum(ad::mul(c, c));
  CHECK(tape.size() == 0);
  CHECK_THROWS(tape.backward(y));
  const Tensor z = ad::sum(ad::add(ad::mul(w, c), ad::mul(w, w)));
  CHECK(tape.size() == 4);
  CHECK_THROWS_AS(tape.backward(ad::mul(w, c)), ad::ShapeError);
  tape.backward(z);
  // dz/dw = c + 2w, accumulated across both uses of w.
  CHECK(w.grad()[0] == 5.0);
  CHECK(w.grad()[1] == 8.0);
}

TEST_CASE("finite checks name the producing op") {
  ad::set_finite_checks(true);
  const Tensor x = Tensor::from({1}, {1000.0});
  CHECK_THROWS_AS(ad::exp(x), ad::NumericError);
  ad::set_finite_checks(false);
  CHECK(std::isinf(ad::exp(x).item()));
}

TEST_CASE("finite-difference gradients of every op") {
  Rng rng(11);
  constexpr double kTol = 1e-4;
  const Tensor a = random_tensor({2, 3, 4}, rng);
  const Tensor b = random_tensor({3, 1}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  const Tensor bias = random_tensor({5}, rng);

  CHECK(grad_check([&] { return weighted_sum(ad::add(a, b)); }, {a, b}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::sub(a, b)); }, {a, b}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::mul(a, b)); }, {a, b}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::exp(ad::scale(a, 0.3))); }, {a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::softplus(a)); }, {a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::silu(a)); }, {a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::sigmoid(a)); }, {a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::neg(a)); }, {a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::linear(a, w, &bias)); }, {a, w, bias}) < kTol);
  const Tensor bm = random_tensor({2, 4, 3}, rng);
  CHECK(grad_check([&] { return weighted_sum(ad::matmul(a, bm)); }, {a, bm}) < kTol);
  CHECK(grad_check([&] { return ad::mean(ad::mul(a, a)); }, {a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::reshape(a, {6, 4})); }, {a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::slice_last(a, 1, 3)); }, {a}) < kTol);
  const Tensor a2 = random_tensor({2, 3, 2}, rng);
  CHECK(grad_check([&] { return weighted_sum(ad::concat_last(a, a2)); }, {a, a2}) < kTol);
  const std::vector<std::size_t> perm = {2, 0, 1};
  CHECK(grad_check([&] { return weighted_sum(ad::gather_tokens(a, perm)); }, {a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::scatter_tokens(a, perm, 5)); }, {a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::slice_tokens(a, 1, 3)); }, {a}) < kTol);
  const Tensor a3 = random_tensor({2, 1, 4}, rng);
  CHECK(grad_check([&] { return weighted_sum(ad::concat_tokens(a3, a)); }, {a3, a}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::mean_tokens(a)); }, {a}) < kTol);
  const Tensor cls = random_tensor({1, 4}, rng);
  CHECK(grad_check([&] { return weighted_sum(ad::expand_batch(cls, 3)); }, {cls}) < kTol);
  const Tensor g = random_tensor({4}, rng);
  CHECK(grad_check([&] { return weighted_sum(ad::rms_norm(a, g)); }, {a, g}) < kTol);
  const Tensor cw = random_tensor({4, 4}, rng);
  const Tensor cb = random_tensor({4}, rng);
  CHECK(grad_check([&] { return weighted_sum(ad::depthwise_conv1d(a, cw, cb, 3)); }, {a, cw, cb}) < kTol);
  CHECK(grad_check([&] { return weighted_sum(ad::depthwise_conv1d(a, cw, cb, 1)); }, {a, cw, cb}) < kTol);
  const Tensor grid = random_tensor({2, 6, 4}, rng);
  const Tensor gw = random_tensor({4, 9}, rng);
  CHECK(grad_check([&] { return weighted_sum(ad::depthwise_conv2d_grid(grid, gw, cb, 2, 3)); },
                   {grid, gw, cb}) < kTol);
  const Tensor logits = random_tensor({4, 3}, rng);
  const std::vector<int> labels = {0, 2, 1, 2};
  CHECK(grad_check([&] { return ad::softmax_cross_entropy(logits, labels); }, {logits}) < kTol);
}
