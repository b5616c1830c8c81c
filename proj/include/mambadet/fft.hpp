// Radix-2 FFT and FFT-based linear convolution.
#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace mambadet::fft {

using Complex = std::complex<double>;

bool is_power_of_two(std::size_t n);
std::size_t next_power_of_two(std::size_t n);

// In-place iterative Cooley-Tukey transform. Throws std::invalid_argument
// unless the length is a power of two. The inverse includes the 1/n factor.
void transform(std::span<Complex> data, bool inverse);

// Forward transform of a real signal zero-padded to `length`.
std::vector<Complex> fft_real(std::span<const double> signal, std::size_t length);
std::vector<Complex> inverse_fft(std::span<const Complex> spectrum);

// Full linear convolution (length a.size() + b.size() - 1).
std::vector<double> convolve(std::span<const double> a, std::span<const double> b);

}  // namespace mambadet::fft
