#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "actel/error.hpp"
#include "actel/fft.hpp"
#include "actel/rng.hpp"
#include "actel/signal.hpp"

namespace actel::inline ACTEL_ABI_NS {

AudioBuffer convolve_rir(const AudioBuffer& speech, const ImpulseResponse& rir) {
  require(!speech.empty(), ErrorKind::InvalidInput, "empty speech");
  require(!rir.samples.empty(), ErrorKind::InvalidInput, "empty rir");
  require(speech.sample_rate == rir.sample_rate, ErrorKind::RateMismatch,
          "speech at " + std::to_string(speech.sample_rate) + " Hz, rir at " +
              std::to_string(rir.sample_rate) + " Hz");

  const std::vector<double> s(speech.samples.begin(), speech.samples.end());
  const std::vector<double> h(rir.samples.begin(), rir.samples.end());
  std::vector<float> out(speech.size());
  // Short filters are cheaper (and exact) in the time domain.
  if (h.size() <= 64) {
    for (std::size_t n = 0; n < s.size(); ++n) {
      double acc = 0.0;
      const std::size_t kmax = std::min(h.size(), n + 1);
      for (std::size_t k = 0; k < kmax; ++k) acc += h[k] * s[n - k];
      out[n] = static_cast<float>(acc);
    }
  } else {
    const std::vector<double> full = fft_convolve(s, h);
    for (std::size_t n = 0; n < out.size(); ++n) out[n] = static_cast<float>(full[n]);
  }
  return AudioBuffer(std::move(out), speech.sample_rate);
}

ImpulseResponse preprocess_rir(const ImpulseResponse& raw) {
  std::size_t peak_index = 0;
  float peak = 0.0f;
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    const float m = std::abs(raw.samples[i]);
    if (m > peak) {
      peak = m;
      peak_index = i;
    }
  }
  require(peak > 0.0f, ErrorKind::DegenerateRir, "impulse response is all zeros");

  ImpulseResponse out;
  out.sample_rate = raw.sample_rate;
  out.nominal_rt60 = raw.nominal_rt60;
  out.samples.assign(raw.samples.begin() + static_cast<std::ptrdiff_t>(peak_index), raw.samples.end());
  // Divide first: the peak then maps to exactly 0.25, which keeps the
  // operation idempotent in floating point.
  for (float& v : out.samples) v = (v / peak) * kRirPeak;
  return out;
}

AudioBuffer peak_normalize(const AudioBuffer& x) {
  const float peak = peak_abs(x.samples);
  if (peak == 0.0f) return x;
  AudioBuffer out = x;
  for (float& v : out.samples) v /= peak;
  return out;
}

ImpulseResponse synth_rir(double rt60, double duration, uint64_t seed) {
  require(rt60 > 0.0 && rt60 <= kMaxRt60, ErrorKind::InvalidRt60,
          "rt60 must lie in (0, 2] s, got " + std::to_string(rt60));
  require(duration >= 2.0 * rt60, ErrorKind::InvalidInput, "duration must be at least 2 * rt60");

  const auto n = static_cast<std::size_t>(std::llround(duration * kSampleRate));
  ImpulseResponse h;
  h.nominal_rt60 = rt60;
  h.samples.resize(std::max<std::size_t>(n, 1));
  h.samples[0] = 1.0f;
  Rng rng(derive_seed({0x52495231ULL, seed}));
  for (std::size_t i = 1; i < h.samples.size(); ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    const double noise = rng.uniform(-0.5, 0.5);
    h.samples[i] = static_cast<float>(noise * std::exp(-kDecay60 * t / rt60));
  }
  return h;
}

namespace {

// Least-squares slope of y against x.
double fit_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

}  // namespace

double estimate_rt60(const ImpulseResponse& h) {
  require(!h.samples.empty(), ErrorKind::InvalidInput, "empty impulse response");
  const std::size_t n = h.samples.size();
  std::vector<double> edc(n);
  double acc = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    acc += static_cast<double>(h.samples[i]) * h.samples[i];
    edc[i] = acc;
  }
  require(acc > 0.0, ErrorKind::InsufficientDecay, "impulse response has no energy");

  std::vector<double> t, level;
  bool reached_end = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double db = edc[i] > 0.0 ? 10.0 * std::log10(edc[i] / acc) : -std::numeric_limits<double>::infinity();
    if (db <= -25.0) {
      reached_end = true;
      break;
    }
    if (db <= -5.0) {
      t.push_back(static_cast<double>(i) / h.sample_rate);
      level.push_back(db);
    }
  }
  // A few samples are not a decay; a unit impulse jumps straight to -inf.
  if (!reached_end || t.size() < 8) {
    fail(ErrorKind::InsufficientDecay, "energy-decay curve has no -5..-25 dB region");
  }
  const double slope = fit_slope(t, level);
  require(slope < 0.0, ErrorKind::InsufficientDecay, "non-negative decay slope");
  return -60.0 / slope;
}

double blind_rt60(const AudioBuffer& x) {
  constexpr std::size_t frame = 320;  // 20 ms
  constexpr std::size_t hop = 160;    // 10 ms
  constexpr std::size_t min_steps = 12;
  constexpr std::size_t smooth = 2;  // frames either side
  constexpr double rise_tolerance_db = 1.0;
  constexpr double dynamic_range_db = 60.0;
  // slopes shallower than this are wobble, not decay
  constexpr double max_rt60 = 2.0 * kMaxRt60;
  require(x.size() >= static_cast<std::size_t>(x.sample_rate), ErrorKind::InvalidInput,
          "blind RT60 needs at least 1 s of audio");

  const std::size_t n_frames = (x.size() - frame) / hop + 1;
  std::vector<double> energy(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    double e = 0.0;
    for (std::size_t i = 0; i < frame; ++i) {
      const double v = x.samples[f * hop + i];
      e += v * v;
    }
    energy[f] = e / frame;
  }
  std::vector<double> level(n_frames);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t lo = f >= smooth ? f - smooth : 0;
    const std::size_t hi = std::min(n_frames - 1, f + smooth);
    double e = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) e += energy[k];
    level[f] = 10.0 * std::log10(e / static_cast<double>(hi - lo + 1) + 1e-12);
  }
  const double top = *std::max_element(level.begin(), level.end());
  require(top > -100.0, ErrorKind::InsufficientDecay, "signal is silent");
  const double floor_db = top - dynamic_range_db;

  std::vector<double> slopes;
  std::size_t f = 1;
  while (f + 1 < n_frames) {
    const bool is_peak = level[f] >= level[f - 1] && level[f] > level[f + 1] && level[f] > floor_db;
    if (!is_peak) {
      ++f;
      continue;
    }
    // small bumps in a noisy tail don't end the segment; trailing bumps are trimmed
    std::size_t end = f;
    double run_min = level[f];
    while (end + 1 < n_frames && level[end + 1] < run_min + rise_tolerance_db && level[end + 1] > floor_db) {
      ++end;
      run_min = std::min(run_min, level[end]);
    }
    while (end > f && level[end] > run_min) --end;
    if (end - f >= min_steps) {
      std::vector<double> t, y;
      for (std::size_t k = f; k <= end; ++k) {
        t.push_back(static_cast<double>(k * hop) / x.sample_rate);
        y.push_back(level[k]);
      }
      const double slope = fit_slope(t, y);
      if (slope < -60.0 / max_rt60) slopes.push_back(slope);
    }
    f = end + 1;
  }
  require(!slopes.empty(), ErrorKind::InsufficientDecay, "no free-decay segment found");
  std::sort(slopes.begin(), slopes.end());
  const double pos = 0.1 * static_cast<double>(slopes.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, slopes.size() - 1);
  const double slope = slopes[lo] + (pos - static_cast<double>(lo)) * (slopes[hi] - slopes[lo]);
  return -60.0 / slope;
}

}  // namespace actel::inline ACTEL_ABI_NS
