#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mambadet/rng.hpp"
#include "mambadet/scan2d.hpp"
#include "mambadet/ssm_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mambadet;
using namespace mambadet::scan;

namespace {

using Idx = std::vector<std::size_t>;

std::vector<std::size_t> divisors(std::size_t h, std::size_t w) {
  std::vector<std::size_t> out;
  for (std::size_t d = 1; d <= std::min(h, w); ++d) {
    if (h % d == 0 && w % d == 0) out.push_back(d);
  }
  return out;
}

}  // namespace

TEST_CASE("raster scan") {
  CHECK(raster_scan(2, 2).order() == Idx{0, 1, 2, 3});
  const auto r = raster_scan(1, 5);
  CHECK(r.order() == Idx{0, 1, 2, 3, 4});
  CHECK(r.inverse() == r.order());
  CHECK_THROWS_AS(raster_scan(0, 3), ScanError);
  CHECK_THROWS_AS(raster_scan(3, 0), ScanError);
}

TEST_CASE("bidirectional scan") {
  const auto m = bidirectional(raster_scan(2, 2));
  REQUIRE(m.directions.size() == 2);
  CHECK(m.directions[0].order() == Idx{0, 1, 2, 3});
  CHECK(m.directions[1].order() == Idx{3, 2, 1, 0});
  CHECK(m.directions[1].reversed() == m.directions[0]);
  for (const auto& d : m.directions) CHECK(d.is_bijection());
}

TEST_CASE("cross scan") {
  const auto m = cross_scan(2, 2);
  REQUIRE(m.directions.size() == 4);
  CHECK(m.directions[0].order() == Idx{0, 1, 2, 3});
  CHECK(m.directions[1].order() == Idx{3, 2, 1, 0});
  CHECK(m.directions[2].order() == Idx{0, 2, 1, 3});
  CHECK(m.directions[3].order() == Idx{3, 1, 2, 0});
  const auto row = cross_scan(1, 4);
  CHECK(row.directions[2].order() == row.directions[0].order());
}

TEST_CASE("zigzag scan") {
  CHECK(zigzag_scan(2, 3).order() == Idx{0, 1, 2, 5, 4, 3});
  CHECK(zigzag_scan(1, 6).order() == raster_scan(1, 6).order());
}

TEST_CASE("zigzag visits 4-neighbors consecutively") {
  for (std::size_t h = 1; h <= 12; ++h) {
    for (std::size_t w = 1; w <= 12; ++w) {
      const auto z = zigzag_scan(h, w);
      for (std::size_t k = 1; k < z.size(); ++k) {
        const auto a = z.order()[k - 1], b = z.order()[k];
        const auto dr = std::abs(static_cast<long>(a / w) - static_cast<long>(b / w));
        const auto dc = std::abs(static_cast<long>(a % w) - static_cast<long>(b % w));
        CHECK(dr + dc == 1);
      }
    }
  }
}

TEST_CASE("local scan") {
  CHECK(local_scan(4, 4, 2).order() ==
        Idx{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15});
  CHECK(local_scan(4, 4, 4).order() == raster_scan(4, 4).order());
  CHECK(local_scan(3, 5, 1).order() == raster_scan(3, 5).order());
  CHECK_THROWS_AS(local_scan(4, 6, 4), ScanError);
  CHECK_THROWS_AS(local_scan(4, 4, 0), ScanError);
}

TEST_CASE("efficient scan") {
  const auto m = efficient_scan(4, 4, 2);
  REQUIRE(m.directions.size() == 4);
  CHECK(m.directions[0].order() == Idx{0, 2, 8, 10});
  CHECK(m.directions[3].order() == Idx{5, 7, 13, 15});
  for (const auto& d : m.directions) CHECK_FALSE(d.covers_grid());
  auto all = m.concatenated();
  std::sort(all.begin(), all.end());
  Idx expect(16);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);
  for (std::size_t c : m.coverage()) CHECK(c == 1);

  const auto one = efficient_scan(3, 5, 1);
  REQUIRE(one.directions.size() == 1);
  CHECK(one.directions[0].order() == raster_scan(3, 5).order());
  CHECK_THROWS_AS(efficient_scan(4, 6, 4), ScanError);
}

TEST_CASE("invalid orders are rejected") {
  CHECK_THROWS_AS(ScanOrder(2, 2, {0, 1, 1, 3}), ScanError);
  CHECK_THROWS_AS(ScanOrder(2, 2, {0, 1, 4}), ScanError);
  CHECK_THROWS_AS(make_scan("spiral", 4, 4), ScanError);
}

TEST_CASE("every strategy yields bijections that round-trip") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng.below(16);
    const std::size_t w = 1 + rng.below(16);
    std::vector<double> tokens(h * w);
    for (double& t : tokens) t = rng.normal();
    const auto divs = divisors(h, w);
    const std::size_t param = divs[rng.below(divs.size())];
    for (const auto& name : strategy_names()) {
      CAPTURE(name);
      CAPTURE(h);
      CAPTURE(w);
      const auto m = make_scan(name, h, w, param);
      REQUIRE_NOTHROW(m.validate());
      if (name == "efficient") {
        auto all = m.concatenated();
        std::sort(all.begin(), all.end());
        Idx expect(h * w);
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(all == expect);
        std::vector<double> rebuilt(h * w, NAN);
        for (const auto& d : m.directions) {
          const auto part = gather<double>(tokens, d);
          const auto back = scatter<double>(part, d, NAN);
          for (std::size_t i = 0; i < h * w; ++i) {
            if (!std::isnan(back[i])) rebuilt[i] = back[i];
          }
        }
        CHECK(rebuilt == tokens);
        continue;
      }
      for (const auto& d : m.directions) {
        CHECK(d.is_bijection());
        for (std::size_t k = 0; k < d.size(); ++k) CHECK(d.inverse()[d.order()[k]] == k);
        CHECK(scatter<double>(gather<double>(tokens, d), d) == tokens);
      }
    }
  }
}

TEST_CASE("gather semantics") {
  const std::vector<int> x{4, 8, 15, 16, 23, 42};
  const auto r = raster_scan(2, 3);
  CHECK(gather<int>(x, r) == x);
  const auto rev = gather<int>(x, r.reversed());
  CHECK(std::equal(rev.begin(), rev.end(), x.rbegin()));
  CHECK_THROWS_AS(gather<int>(std::span<const int>(x.data(), 5), r), ScanError);
  CHECK_THROWS_AS(scatter<int>(std::span<const int>(x.data(), 5), r), ScanError);
}

TEST_CASE("LTI SSM over any scan stays finite and shape preserving") {
  ssm::SsmParams p;
  p.diagonal = true;
  p.a = Eigen::MatrixXd::Constant(4, 1, -0.5);
  p.a(1, 0) = -1.0;
  p.b = Eigen::VectorXd::Ones(4);
  p.c = Eigen::RowVectorXd::Constant(4, 0.5);
  p.d = 1.0;
  p.delta = 0.1;
  const auto dssm = ssm::discretize_zoh(p);
  Rng rng(5);
  std::vector<double> grid(8 * 8);
  for (double& g : grid) g = rng.normal();
  for (const auto& name : strategy_names()) {
    const auto m = make_scan(name, 8, 8, 2);
    for (const auto& d : m.directions) {
      const auto seq = gather<double>(grid, d);
      const auto y = ssm::run_recurrent(dssm, seq);
      const auto back = scatter<double>(y, d);
      CHECK(back.size() == grid.size());
      for (double v : back) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("rank rendering") {
  CHECK(render_ranks(zigzag_scan(2, 3)) == "0 1 2\n5 4 3\n");
  const auto m = efficient_scan(2, 2, 2);
  CHECK(render_ranks(m.directions[0]).find('.') != std::string::npos);
}
