#include "actel/mel.hpp"

#include <cmath>
#include <complex>

#include "actel/error.hpp"

namespace actel::inline ACTEL_ABI_NS {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

MelMatrix mel_filterbank(int n_mels, int n_fft, int sample_rate) {
  require(n_mels >= 1 && n_fft >= 2, ErrorKind::InvalidInput, "bad filterbank geometry");
  const int bins = n_fft / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  MelMatrix fb = MelMatrix::Zero(n_mels, bins);
  const double bin_hz = static_cast<double>(sample_rate) / n_fft;
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb(m, k) = static_cast<Real>(w);
    }
    // Narrow low bands can fall between bins; give them the nearest bin.
    if (fb.row(m).sum() == 0.0) {
      const int k = std::min(bins - 1, static_cast<int>(std::lround(mid / bin_hz)));
      fb(m, k) = 1.0;
    }
  }
  return fb;
}

LogMel::LogMel(int window, int hop, int n_fft, int n_mels, int sample_rate, double floor)
    : window_(window), hop_(hop), n_fft_(n_fft), fft_(n_fft), hann_(static_cast<std::size_t>(window)),
      filters_(mel_filterbank(n_mels, n_fft, sample_rate)), floor_(static_cast<Real>(floor)) {
  require(window >= 2 && window <= n_fft && hop >= 1, ErrorKind::InvalidInput, "bad STFT geometry");
  require(floor > 0.0, ErrorKind::InvalidInput, "log floor must be > 0");
  // Scaled to unit sum so magnitudes do not grow with the window length.
  double sum = 0.0;
  for (int i = 0; i < window; ++i) sum += 0.5 - 0.5 * std::cos(2.0 * M_PI * i / window);
  for (int i = 0; i < window; ++i) {
    hann_[static_cast<std::size_t>(i)] = static_cast<Real>((0.5 - 0.5 * std::cos(2.0 * M_PI * i / window)) / sum);
  }
}

int LogMel::frames(std::size_t n_samples) const {
  if (n_samples < static_cast<std::size_t>(window_)) return 0;
  return static_cast<int>((n_samples - static_cast<std::size_t>(window_)) / static_cast<std::size_t>(hop_)) + 1;
}

MelMatrix LogMel::forward(std::span<const Real> x) const {
  const int n_frames = frames(x.size());
  const int bins = fft_.bins();
  MelMatrix mag(bins, n_frames);
  std::vector<Real> frame(static_cast<std::size_t>(n_fft_), 0.0);
  std::vector<std::complex<Real>> spec(static_cast<std::size_t>(bins));
  for (int f = 0; f < n_frames; ++f) {
    const std::size_t start = static_cast<std::size_t>(f) * static_cast<std::size_t>(hop_);
    for (int i = 0; i < window_; ++i) frame[i] = x[start + i] * hann_[i];
    fft_.forward(frame, spec);
    for (int k = 0; k < bins; ++k) mag(k, f) = std::sqrt(std::norm(spec[k]) + Real(1e-20));
  }
  MelMatrix mel = filters_ * mag;
  return (mel.array() + floor_).log().matrix();
}

void LogMel::backward(std::span<const Real> x, const MelMatrix& grad_logmel, std::span<Real> grad_x) const {
  const int n_frames = frames(x.size());
  const int bins = fft_.bins();
  std::vector<Real> frame(static_cast<std::size_t>(n_fft_), 0.0), back(static_cast<std::size_t>(n_fft_));
  std::vector<std::complex<Real>> spec(static_cast<std::size_t>(bins)), g(static_cast<std::size_t>(bins));
  Eigen::Matrix<Real, Eigen::Dynamic, 1> mag(bins);
  for (int f = 0; f < n_frames; ++f) {
    const std::size_t start = static_cast<std::size_t>(f) * static_cast<std::size_t>(hop_);
    for (int i = 0; i < window_; ++i) frame[i] = x[start + i] * hann_[i];
    fft_.forward(frame, spec);
    for (int k = 0; k < bins; ++k) mag(k) = std::sqrt(std::norm(spec[k]) + Real(1e-20));
    const Eigen::Matrix<Real, Eigen::Dynamic, 1> mel = filters_ * mag;
    const Eigen::Matrix<Real, Eigen::Dynamic, 1> grad_mel = grad_logmel.col(f).array() / (mel.array() + floor_);
    const Eigen::Matrix<Real, Eigen::Dynamic, 1> grad_mag = filters_.transpose() * grad_mel;
    // d|X|/dRe = Re/|X|, d|X|/dIm = Im/|X|; the adjoint of the real DFT is
    // Re(sum_k G_k e^{+i theta}), evaluated with a half-complex inverse where
    // interior bins are halved to undo the Hermitian doubling.
    for (int k = 0; k < bins; ++k) {
      const Real s = grad_mag(k) / mag(k);
      std::complex<Real> gk = spec[k] * s;
      if (k != 0 && !(n_fft_ % 2 == 0 && k == bins - 1)) gk *= 0.5;
      g[k] = gk;
    }
    fft_.inverse(g, back);
    for (int i = 0; i < window_; ++i) grad_x[start + i] += back[i] * hann_[i];
  }
}

}  // namespace actel::inline ACTEL_ABI_NS
