// Wall-clock comparison of the recurrent, FFT-convolution and chunked scan
// evaluations. Timings are only taken once every form agrees with its
// reference at every length.
#pragma once

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mambadet::bench {

struct BenchConfig {
  std::vector<std::size_t> lengths = {64, 128, 256, 512, 1024, 2048, 4096, 8192};
  std::size_t state_dim = 8;
  std::size_t channels = 4;  // selective scan channels
  std::size_t chunk = 64;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  double tolerance = 1e-9;

  void validate() const;
};

struct Check {
  std::string pair;  // e.g. "lti_recurrent~lti_fft_conv"
  std::size_t length = 0;
  double max_abs_err = 0.0;
  bool pass = false;
};

struct Row {
  std::string method;
  std::size_t length = 0;
  double seconds = 0.0;  // best of the repeats
};

struct BenchReport {
  std::vector<Check> checks;
  std::vector<Row> rows;  // empty when a check failed
  bool correct = false;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

inline const std::vector<std::string>& methods() {
  static const std::vector<std::string> m = {"lti_recurrent", "lti_fft_conv",
                                             "selective_sequential", "selective_chunked"};
  return m;
}

BenchReport run_bench(const BenchConfig& cfg);

}  // namespace mambadet::bench
