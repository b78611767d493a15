#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "actel/rng.hpp"
#include "actel/signal.hpp"

namespace actel::inline ACTEL_ABI_NS {

namespace {

struct Voice {
  double f0;
  std::array<double, 3> formant;
  std::array<double, 3> bandwidth;
  double tilt;
  double breath;
};

Voice voice_for(int64_t speaker_id) {
  Rng rng(derive_seed({0x53504b52ULL, static_cast<uint64_t>(speaker_id)}));
  Voice v;
  v.f0 = rng.uniform(90.0, 250.0);
  v.formant = {rng.uniform(350.0, 800.0), rng.uniform(1000.0, 2200.0), rng.uniform(2400.0, 3400.0)};
  v.bandwidth = {rng.uniform(60.0, 100.0), rng.uniform(80.0, 140.0), rng.uniform(110.0, 200.0)};
  v.tilt = rng.uniform(0.90, 0.97);
  v.breath = rng.uniform(0.02, 0.08);
  return v;
}

struct Syllable {
  std::size_t start;
  std::size_t length;
  double pitch_scale;
  double glide;
  double gain;
  std::array<double, 3> vowel;  // formant multipliers
  std::size_t ramp;
};

// Two-pole resonator with unit gain at its centre frequency.
struct Resonator {
  double a1 = 0.0, a2 = 0.0, g = 1.0;
  double y1 = 0.0, y2 = 0.0;

  void tune(double freq, double bw) {
    const double r = std::exp(-M_PI * bw / kSampleRate);
    const double theta = 2.0 * M_PI * freq / kSampleRate;
    a1 = 2.0 * r * std::cos(theta);
    a2 = -r * r;
    g = 1.0 - r;
  }

  double step(double x) {
    const double y = g * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

}  // namespace

AudioBuffer synth_speech(double duration, int64_t speaker_id, uint64_t utterance_seed) {
  const auto n = static_cast<std::size_t>(std::llround(std::max(duration, 0.0) * kSampleRate));
  std::vector<float> out(n, 0.0f);
  if (n == 0) return AudioBuffer(std::move(out));

  const Voice voice = voice_for(speaker_id);
  Rng rng(derive_seed({0x55545452ULL, static_cast<uint64_t>(speaker_id), utterance_seed}));

  auto secs = [](double s) { return static_cast<std::size_t>(std::llround(s * kSampleRate)); };

  // Syllable layout: words of 2-4 syllables separated by pauses of >= 120 ms.
  std::vector<Syllable> syllables;
  std::size_t cursor = secs(rng.uniform(0.02, 0.12));
  bool has_pause = false;
  while (cursor < n) {
    const int count = 2 + static_cast<int>(rng.below(3));
    for (int i = 0; i < count && cursor < n; ++i) {
      Syllable s;
      s.start = cursor;
      s.length = std::min(secs(rng.uniform(0.12, 0.28)), n - cursor);
      s.pitch_scale = rng.uniform(0.85, 1.15);
      s.glide = rng.uniform(-0.12, 0.12);
      s.gain = rng.uniform(0.6, 1.0);
      s.vowel = {rng.uniform(0.85, 1.15), rng.uniform(0.85, 1.15), rng.uniform(0.95, 1.05)};
      s.ramp = secs(rng.uniform(0.012, 0.025));
      syllables.push_back(s);
      cursor += s.length + secs(rng.uniform(0.03, 0.07));
    }
    const std::size_t pause = secs(rng.uniform(0.12, 0.25));
    if (cursor + pause < n) has_pause = true;
    cursor += pause;
  }

  std::vector<double> envelope(n, 0.0);
  std::vector<int> owner(n, -1);
  for (std::size_t k = 0; k < syllables.size(); ++k) {
    const Syllable& s = syllables[k];
    const std::size_t ramp = std::max<std::size_t>(1, std::min(s.ramp, s.length / 2));
    for (std::size_t i = 0; i < s.length; ++i) {
      double e = 1.0;
      if (i < ramp) e = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(i) / ramp);
      const std::size_t tail = s.length - 1 - i;
      if (tail < ramp) e = std::min(e, 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(tail) / ramp));
      envelope[s.start + i] = s.gain * e;
      owner[s.start + i] = static_cast<int>(k);
    }
  }
  if (!has_pause && n > secs(0.3)) {
    // Very short utterances: carve a 120 ms pause out of the middle.
    const std::size_t mid = n / 2, half = secs(0.06);
    for (std::size_t i = mid - half; i < mid + half; ++i) envelope[i] = 0.0;
  }

  std::array<Resonator, 3> filters;
  double phase = 0.0, glottal = 0.0, prev_source = 0.0;
  int current = -2;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = owner[i];
    double f0 = voice.f0;
    if (k >= 0) {
      const Syllable& s = syllables[static_cast<std::size_t>(k)];
      const double pos = static_cast<double>(i - s.start) / static_cast<double>(s.length);
      f0 *= s.pitch_scale * (1.0 + s.glide * (pos - 0.5));
      if (k != current) {
        for (std::size_t r = 0; r < 3; ++r) filters[r].tune(voice.formant[r] * s.vowel[r], voice.bandwidth[r]);
        current = k;
      }
    }
    phase += f0 / kSampleRate;
    double pulse = 0.0;
    if (phase >= 1.0) {
      phase -= 1.0;
      pulse = 1.0;
    }
    glottal = voice.tilt * glottal + (1.0 - voice.tilt) * pulse;
    const double source = glottal + voice.breath * 0.05 * rng.normal();
    // First difference models lip radiation and removes DC.
    double y = source - prev_source;
    prev_source = source;
    for (auto& f : filters) y = f.step(y);
    out[i] = static_cast<float>(y * envelope[i]);
  }

  const float peak = peak_abs(out);
  if (peak > 0.0f) {
    for (float& v : out) v = v / peak * 0.9f;
  }
  return AudioBuffer(std::move(out));
}

}  // namespace actel::inline ACTEL_ABI_NS
