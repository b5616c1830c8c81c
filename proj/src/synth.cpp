#include "mambadet/synth.hpp"

#include "mambadet/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mambadet::data {

namespace {

constexpr std::uint64_t kBaseStream = 0x62617365;      // base field
constexpr std::uint64_t kArtifactStream = 0x61727466;  // generator signature

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

void require_extent(std::size_t h, std::size_t w) {
  if (h < 8 || w < 8) {
    throw std::invalid_argument("synth: image extents must be >= 8, got " + std::to_string(h) +
                                "x" + std::to_string(w));
  }
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= m) i = 2 * (m - 1) - i;
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, m - 1));
}

// Separable over-shoot kernel: unit DC gain, peak gain 2 at a period of 4 pixels.
std::vector<double> sharpen(const Image& img) {
  static constexpr std::array<double, 5> k = {-0.25, 0.0, 1.5, 0.0, -0.25};
  const std::size_t h = img.h;
  const std::size_t w = img.w;
  std::vector<double> rows(h * w, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k.size(); ++t) {
        acc += k[t] * img.px[r * w + reflect(static_cast<std::ptrdiff_t>(c + t) - 2, w)];
      }
      rows[r * w + c] = acc;
    }
  }
  std::vector<double> out(h * w, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k.size(); ++t) {
        acc += k[t] * rows[reflect(static_cast<std::ptrdiff_t>(r + t) - 2, h) * w + c];
      }
      out[r * w + c] = acc;
    }
  }
  return out;
}

}  // namespace

std::string generator_tag(Generator g) {
  switch (g) {
    case Generator::kCheckerboard: return "G1";
    case Generator::kRinging: return "G2";
    case Generator::kGridNoise: return "G3";
  }
  return "?";
}

Generator parse_generator(const std::string& name) {
  if (name == "G1" || name == "G1_checkerboard") return Generator::kCheckerboard;
  if (name == "G2" || name == "G2_ringing") return Generator::kRinging;
  if (name == "G3" || name == "G3_gridnoise") return Generator::kGridNoise;
  throw std::invalid_argument("unknown generator '" + name + "' (expected G1, G2 or G3)");
}

void SynthGenSpec::validate() const {
  if (!(strength > 0.0 && strength <= 1.0)) {
    throw std::invalid_argument("artifact strength must lie in (0, 1], got " +
                                std::to_string(strength));
  }
}

Image synth_real(std::uint64_t seed, std::size_t h, std::size_t w) {
  require_extent(h, w);
  Rng rng(seed, kBaseStream);
  const std::size_t count = 1 + rng.below(kMaxSinusoids);
  struct Wave {
    double fy, fx, amp, phase;
  };
  std::vector<Wave> waves;
  for (std::size_t i = 0; i < count; ++i) {
    // Whole cycles per image, at most an eighth of the sampling rate.
    auto fy = static_cast<double>(rng.below(h / 8 + 1));
    auto fx = static_cast<double>(rng.below(w / 8 + 1));
    if (fy == 0.0 && fx == 0.0) fx = 1.0;
    const double amp = kFieldAmplitude / static_cast<double>(count) * rng.uniform(0.5, 1.0);
    waves.push_back({fy / static_cast<double>(h), fx / static_cast<double>(w), amp,
                     rng.uniform(0.0, 2.0 * std::numbers::pi)});
  }
  Image img{h, w, 1, std::vector<double>(h * w)};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double v = 0.5;
      for (const auto& wv : waves) {
        v += wv.amp * std::sin(2.0 * std::numbers::pi * (wv.fy * static_cast<double>(r) +
                                                        wv.fx * static_cast<double>(c)) +
                               wv.phase);
      }
      img.px[r * w + c] = clip01(v + kNoiseSigma * rng.normal());
    }
  }
  return img;
}

Image synth_fake(std::uint64_t seed, std::size_t h, std::size_t w, const SynthGenSpec& spec) {
  spec.validate();
  Image img = synth_real(seed, h, w);
  const double s = spec.strength;
  switch (spec.id) {
    case Generator::kCheckerboard:
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const double sign = (r + c) % 2 == 0 ? 1.0 : -1.0;
          img.px[r * w + c] = clip01(img.px[r * w + c] + s * 0.1 * sign);
        }
      }
      break;
    case Generator::kRinging: {
      const auto sharp = sharpen(img);
      for (std::size_t i = 0; i < img.px.size(); ++i) {
        img.px[i] = clip01(img.px[i] + s * 3.0 * (sharp[i] - img.px[i]));
      }
      break;
    }
    case Generator::kGridNoise: {
      Rng rng(seed, kArtifactStream);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          if (r % 4 != 0 && c % 4 != 0) continue;
          const double sign = rng.below(2) == 0 ? 1.0 : -1.0;
          img.px[r * w + c] = clip01(img.px[r * w + c] + s * 0.1 * sign);
        }
      }
      break;
    }
  }
  return img;
}

std::string to_pnm(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("to_pnm: only 1 or 3 channels can be written");
  }
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.w) + " " +
                    std::to_string(img.h) + "\n255\n";
  for (double v : img.px) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clip01(v) * 255.0))));
  }
  return out;
}

}  // namespace mambadet::data
