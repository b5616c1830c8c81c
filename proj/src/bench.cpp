#include "mambadet/bench.hpp"

#include "mambadet/rng.hpp"
#include "mambadet/selective_ssm.hpp"
#include "mambadet/ssm_core.hpp"
#include "mambadet/text.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace mambadet::bench {

using nlohmann::json;

void BenchConfig::validate() const {
  if (lengths.empty()) throw std::invalid_argument("bench: no lengths");
  for (std::size_t l : lengths) {
    if (l == 0) throw std::invalid_argument("bench: lengths must be >= 1");
  }
  if (state_dim == 0 || channels == 0 || chunk == 0 || repeats == 0) {
    throw std::invalid_argument("bench: state_dim, channels, chunk and repeats must be >= 1");
  }
}

json BenchReport::to_json() const {
  json c = json::array();
  for (const auto& k : checks) {
    c.push_back({{"pair", k.pair}, {"length", k.length}, {"max_abs_err", k.max_abs_err}, {"pass", k.pass}});
  }
  json r = json::array();
  for (const auto& row : rows) {
    r.push_back({{"method", row.method}, {"length", row.length}, {"seconds", row.seconds}});
  }
  return json{{"schema", "mambadet.bench.v1"}, {"correct", correct}, {"checks", c}, {"timings", r}};
}

std::string BenchReport::to_csv() const {
  std::string out = "schema,method,length,seconds\n";
  for (const auto& row : rows) {
    out += "mambadet.bench.v1," + row.method + "," + std::to_string(row.length) + "," +
           format_double(row.seconds) + "\n";
  }
  return out;
}

namespace {

ssm::DiscreteSsm random_lti(std::size_t d, Rng& rng) {
  ssm::SsmParams p;
  Eigen::MatrixXd w(d, d);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal() / std::sqrt(double(d));
  // Shifting by the Frobenius norm puts every eigenvalue in the left half-plane.
  p.a = w - (w.norm() + 0.5) * Eigen::MatrixXd::Identity(d, d);
  p.b = Eigen::VectorXd(d);
  p.c = Eigen::RowVectorXd(d);
  for (std::size_t i = 0; i < d; ++i) {
    p.b[i] = rng.normal();
    p.c[i] = rng.normal();
  }
  p.d = rng.normal();
  p.delta = 0.1;
  return ssm::discretize_zoh(p);
}

selective::SelectiveProjection random_projection(std::size_t c, std::size_t n, Rng& rng) {
  auto p = selective::zero_projection(c, n, 2);
  for (ad::Tensor* t : {&p.w_b, &p.w_c, &p.w_dt_down, &p.w_dt_up, &p.dt_bias}) {
    for (double& v : t->mutable_data()) v = 0.5 * rng.normal();
  }
  return p;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = std::abs(a[i] - b[i]);
    if (!(e <= m)) m = std::isnan(e) ? std::numeric_limits<double>::infinity() : e;
  }
  return m;
}

double best_time(std::size_t repeats, const std::function<void()>& fn) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

struct Case {
  std::size_t length;
  ssm::DiscreteSsm lti;
  std::vector<double> x;
  ad::Tensor sx;
  selective::SelectiveProjection proj;
  ad::Tensor a;
  ad::Tensor d;
};

}  // namespace

BenchReport run_bench(const BenchConfig& cfg) {
  cfg.validate();
  BenchReport report;
  std::vector<Case> cases;
  for (std::size_t li = 0; li < cfg.lengths.size(); ++li) {
    const std::size_t len = cfg.lengths[li];
    Rng rng(cfg.seed, li);
    Case c{len, random_lti(cfg.state_dim, rng), std::vector<double>(len), {}, {}, {}, {}};
    for (double& v : c.x) v = rng.normal();
    std::vector<double> sx(len * cfg.channels);
    for (double& v : sx) v = rng.normal();
    c.sx = ad::Tensor::from({1, len, cfg.channels}, std::move(sx));
    c.proj = random_projection(cfg.channels, cfg.state_dim, rng);
    std::vector<double> a_log(cfg.channels * cfg.state_dim);
    for (double& v : a_log) v = rng.uniform(-1.0, 1.0);
    c.a = selective::decay_rates(ad::Tensor::from({cfg.channels, cfg.state_dim}, a_log));
    c.d = ad::Tensor::full({cfg.channels}, 1.0);

    const auto rec = ssm::run_recurrent(c.lti, c.x);
    const auto conv = ssm::run_convolution(c.lti, c.x);
    const double e1 = max_abs_diff(rec, conv);
    report.checks.push_back({"lti_recurrent~lti_fft_conv", len, e1, e1 < cfg.tolerance});
    const auto seq = selective::selective_scan_sequential(c.sx, c.proj, c.a, c.d);
    const auto par = selective::selective_scan_parallel(c.sx, c.proj, c.a, c.d, cfg.chunk);
    const double e2 = max_abs_diff(seq.data(), par.data());
    report.checks.push_back({"selective_sequential~selective_chunked", len, e2, e2 < cfg.tolerance});
    cases.push_back(std::move(c));
  }
  report.correct = std::all_of(report.checks.begin(), report.checks.end(),
                               [](const Check& k) { return k.pass; });
  if (!report.correct) return report;

  for (const auto& c : cases) {
    report.rows.push_back({"lti_recurrent", c.length,
                           best_time(cfg.repeats, [&] { (void)ssm::run_recurrent(c.lti, c.x); })});
    report.rows.push_back({"lti_fft_conv", c.length,
                           best_time(cfg.repeats, [&] { (void)ssm::run_convolution(c.lti, c.x); })});
    report.rows.push_back(
        {"selective_sequential", c.length, best_time(cfg.repeats, [&] {
           (void)selective::selective_scan_sequential(c.sx, c.proj, c.a, c.d);
         })});
    report.rows.push_back(
        {"selective_chunked", c.length, best_time(cfg.repeats, [&] {
           (void)selective::selective_scan_parallel(c.sx, c.proj, c.a, c.d, cfg.chunk);
         })});
  }
  return report;
}

}  // namespace mambadet::bench
