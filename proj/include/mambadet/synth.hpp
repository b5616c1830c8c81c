// Procedural "real" images and three families of synthetic generator artifacts.
//
// A real image is a smooth field (a few low-frequency sinusoids around 0.5)
// plus faint pixel noise. A fake image is the real image for the same seed
// with one generator's signature composited on top:
//   G1  period-2 checkerboard, amplitude strength * 0.1
//   G2  ringing from an over-shooting sharpen kernel, gain strength * 3
//   G3  random +-(strength * 0.1) noise on the 4x4 block-boundary pixels
#pragma once

#include "mambadet/vision_blocks.hpp"

#include <cstdint>
#include <string>

namespace mambadet::data {

using vision::Image;

enum class Generator { kCheckerboard, kRinging, kGridNoise };

// "G1", "G2", "G3"
std::string generator_tag(Generator g);
// Accepts the short tag or the long form (G1_checkerboard, G2_ringing, G3_gridnoise).
Generator parse_generator(const std::string& name);

struct SynthGenSpec {
  Generator id = Generator::kCheckerboard;
  double strength = 0.5;
  void validate() const;
};

inline constexpr double kNoiseSigma = 0.02;
inline constexpr double kFieldAmplitude = 0.3;
inline constexpr std::size_t kMaxSinusoids = 6;

Image synth_real(std::uint64_t seed, std::size_t h, std::size_t w);
Image synth_fake(std::uint64_t seed, std::size_t h, std::size_t w, const SynthGenSpec& spec);

// Binary PGM (P5) for one channel, PPM (P6) for three; 8-bit.
std::string to_pnm(const Image& img);

}  // namespace mambadet::data
