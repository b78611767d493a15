#pragma once

#include <complex>
#include <span>
#include <vector>
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

// Real-input FFT of fixed power-of-two-or-otherwise size backed by FFTW plans
// that are shared process-wide. Safe to use from several threads: planning is
// serialized and execution runs on thread-local aligned scratch.
class RealFft {
 public:
  explicit RealFft(int n);

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  // in.size() == size(); out.size() == bins()
  void forward(std::span<const Real> in, std::span<std::complex<Real>> out) const;
  // Unnormalized half-complex to real transform: out[t] = sum_k Y_k e^{+i 2 pi k t / n}
  // over the Hermitian extension of Y.
  void inverse(std::span<const std::complex<Real>> in, std::span<Real> out) const;

 private:
  int n_;
  void* fwd_;
  void* inv_;
};

// Full linear convolution a * b in double precision via FFT.
std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b);

}  // namespace actel::inline ACTEL_ABI_NS
