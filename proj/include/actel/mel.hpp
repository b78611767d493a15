#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "actel/fft.hpp"
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

using MelMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// HTK-scale triangular filters spanning 0 Hz to Nyquist; [n_mels x (n_fft/2+1)].
MelMatrix mel_filterbank(int n_mels, int n_fft, int sample_rate);

// Log-mel spectrogram over Hann-windowed frames, the window scaled to unit sum (no centre padding: frame f
// covers samples [f*hop, f*hop + window)). Frames shorter than n_fft are
// zero-padded. Supports reverse-mode differentiation.
class LogMel {
 public:
  static constexpr double kDefaultFloor = 1e-5;

  LogMel(int window, int hop, int n_fft, int n_mels, int sample_rate = 16000, double floor = kDefaultFloor);

  int window() const { return window_; }
  int hop() const { return hop_; }
  int n_mels() const { return static_cast<int>(filters_.rows()); }
  int frames(std::size_t n_samples) const;
  Real floor() const { return floor_; }

  // [n_mels x frames], natural log of (mel magnitude + floor).
  MelMatrix forward(std::span<const Real> x) const;

  // Accumulates d(loss)/dx into grad_x given d(loss)/d(log-mel).
  void backward(std::span<const Real> x, const MelMatrix& grad_logmel, std::span<Real> grad_x) const;

 private:
  int window_, hop_, n_fft_;
  RealFft fft_;
  std::vector<Real> hann_;
  MelMatrix filters_;
  Real floor_;
};

}  // namespace actel::inline ACTEL_ABI_NS
