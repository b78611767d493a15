#include <cmath>
#include <filesystem>
#include <vector>

#include "actel/error.hpp"
#include "actel/rng.hpp"
#include "actel/signal.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace actel;

namespace {

AudioBuffer random_audio(std::size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> s(n);
  for (float& v : s) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return AudioBuffer(std::move(s));
}

ImpulseResponse make_rir(std::vector<float> s) {
  ImpulseResponse h;
  h.samples = std::move(s);
  return h;
}

AudioBuffer reverberant(double rt60, int64_t speaker, uint64_t seed) {
  const AudioBuffer clean = synth_speech(3.0, speaker, seed);
  const ImpulseResponse h = preprocess_rir(synth_rir(rt60, 2.0 * rt60 + 0.1, seed * 31 + 7));
  return peak_normalize(convolve_rir(clean, h));
}

}  // namespace

TEST_CASE("convolve_rir identity and zero cases") {
  const AudioBuffer x = random_audio(1000, 1);
  CHECK(convolve_rir(x, make_rir({1.0f})).samples == x.samples);

  const AudioBuffer zeros(std::vector<float>(48000, 0.0f));
  const AudioBuffer y = convolve_rir(zeros, synth_rir(0.5, 1.0, 3));
  CHECK(y.size() == 48000);
  CHECK(peak_abs(y.samples) == 0.0f);
}

TEST_CASE("convolve_rir matches direct sum of products") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const AudioBuffer s = random_audio(64, 100 + seed);
    const AudioBuffer hb = random_audio(16, 200 + seed);
    const std::vector<double> sd(s.samples.begin(), s.samples.end());
    const std::vector<double> hd(hb.samples.begin(), hb.samples.end());
    const std::vector<double> ref = oracle::direct_convolution(sd, hd);
    const AudioBuffer out = convolve_rir(s, make_rir(hb.samples));
    REQUIRE(out.size() == 64);
    for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(out.samples[i] - ref[i]) < 1e-6);
  }
  // Long filters go through the FFT path; compare against the oracle as well.
  const AudioBuffer s = random_audio(3000, 9);
  const AudioBuffer hb = random_audio(700, 10);
  const std::vector<double> ref = oracle::direct_convolution({s.samples.begin(), s.samples.end()},
                                                             {hb.samples.begin(), hb.samples.end()});
  const AudioBuffer out = convolve_rir(s, make_rir(hb.samples));
  double worst = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, std::abs(out.samples[i] - ref[i]));
  CHECK(worst < 1e-5);
}

TEST_CASE("convolve_rir is linear") {
  const AudioBuffer s1 = random_audio(4000, 11), s2 = random_audio(4000, 12);
  const ImpulseResponse h = synth_rir(0.3, 0.6, 5);
  const float a = 0.7f, b = -1.3f;
  AudioBuffer mix = s1;
  for (std::size_t i = 0; i < mix.size(); ++i) mix.samples[i] = a * s1.samples[i] + b * s2.samples[i];
  const AudioBuffer lhs = convolve_rir(mix, h);
  const AudioBuffer y1 = convolve_rir(s1, h), y2 = convolve_rir(s2, h);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    CHECK(std::abs(lhs.samples[i] - (a * y1.samples[i] + b * y2.samples[i])) < 1e-5);
  }
}

TEST_CASE("convolve_rir errors") {
  CHECK_THROWS_AS(convolve_rir(AudioBuffer{}, make_rir({1.0f})), Error);
  CHECK_THROWS_AS(convolve_rir(random_audio(10, 1), make_rir({})), Error);
  ImpulseResponse h = make_rir({1.0f});
  h.sample_rate = 8000;
  try {
    convolve_rir(random_audio(10, 1), h);
    FAIL("expected RateMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RateMismatch);
  }
}

TEST_CASE("preprocess_rir trims pre-echo and scales to 0.25") {
  ImpulseResponse h = make_rir({1.0f, 0.5f, -0.25f});
  h.nominal_rt60 = 0.4;
  ImpulseResponse p = preprocess_rir(h);
  CHECK(p.samples == std::vector<float>{0.25f, 0.125f, -0.0625f});
  CHECK(p.nominal_rt60 == 0.4);

  const std::vector<float> raw{0.01f, 0.02f, 1.0f, 0.5f, -0.3f};
  const auto argmax = static_cast<std::size_t>(
      std::max_element(raw.begin(), raw.end(), [](float x, float y) { return std::abs(x) < std::abs(y); }) -
      raw.begin());
  p = preprocess_rir(make_rir(raw));
  CHECK(p.samples.size() == raw.size() - argmax);
  CHECK(std::abs(p.samples[0]) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(peak_abs(p.samples) == doctest::Approx(0.25).epsilon(1e-6));

  // negative peak
  p = preprocess_rir(make_rir({0.1f, -2.0f, 1.0f}));
  CHECK(p.samples[0] == -0.25f);

  try {
    preprocess_rir(make_rir({0.0f, 0.0f}));
    FAIL("expected DegenerateRir");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateRir);
  }
}

TEST_CASE("preprocess_rir is idempotent") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<float> raw = random_audio(500, seed).samples;
    const ImpulseResponse once = preprocess_rir(make_rir(raw));
    CHECK(preprocess_rir(once) == once);
  }
}

TEST_CASE("peak_normalize") {
  AudioBuffer x(std::vector<float>{0.5f, -0.25f, 0.1f});
  CHECK(peak_normalize(x).samples == std::vector<float>{1.0f, -0.5f, 0.2f});

  const AudioBuffer z(std::vector<float>(100, 0.0f));
  CHECK(peak_normalize(z) == z);

  AudioBuffer big = random_audio(200, 5);
  big.samples[17] = 3.2f;
  const AudioBuffer out = peak_normalize(big);
  for (std::size_t i = 0; i < big.size(); ++i) CHECK(out.samples[i] == big.samples[i] / 3.2f);
  CHECK(peak_abs(out.samples) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("synth_rir envelope and validation") {
  const ImpulseResponse h = synth_rir(0.5, 1.0, 1);
  CHECK(h.samples[0] == 1.0f);
  CHECK(h.nominal_rt60 == 0.5);
  CHECK(h.size() == 16000);
  // The envelope at t = rt60 is exp(-6.9078) = -60 dB.
  CHECK(20.0 * std::log10(std::exp(-kDecay60 * 0.5 / 0.5)) == doctest::Approx(-60.0).epsilon(1e-6));
  CHECK(synth_rir(0.5, 1.0, 1) == h);
  CHECK(synth_rir(0.5, 1.0, 2) != h);

  for (double bad : {-0.1, 0.0, 2.5}) {
    try {
      synth_rir(bad, 6.0, 1);
      FAIL("expected InvalidRt60");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidRt60);
    }
  }
}

TEST_CASE("estimate_rt60 recovers analytic decay") {
  CHECK(estimate_rt60(synth_rir(0.8, 2.0, 7)) == doctest::Approx(0.8).epsilon(0.0625));
  const double a = estimate_rt60(synth_rir(0.5, 1.5, 1));
  CHECK(std::abs(a - 0.5) <= 0.05);
  const double b = estimate_rt60(synth_rir(1.0, 2.5, 2));
  CHECK(std::abs(b - 1.0) <= 0.10);

  double abs_err = 0.0;
  int count = 0;
  for (int i = 1; i <= 12; ++i) {
    const double rt = 0.1 * i;
    abs_err += std::abs(estimate_rt60(synth_rir(rt, 2.0 * rt + 0.1, 40 + i)) - rt);
    ++count;
  }
  CHECK(abs_err / count <= 0.05);

  std::vector<float> impulse(1000, 0.0f);
  impulse[0] = 1.0f;
  try {
    estimate_rt60(make_rir(impulse));
    FAIL("expected InsufficientDecay");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientDecay);
  }
}

TEST_CASE("estimate_rt60 is scale invariant") {
  const ImpulseResponse h = synth_rir(0.6, 1.3, 3);
  const double ref = estimate_rt60(h);
  for (float scale : {0.25f, 0.5f, 3.0f, 17.0f}) {
    ImpulseResponse s = h;
    for (float& v : s.samples) v *= scale;
    CHECK(std::abs(estimate_rt60(s) - ref) < 1e-6);
  }
}

TEST_CASE("blind_rt60 ordering and silence") {
  int ordered = 0;
  for (uint64_t k = 0; k < 5; ++k) {
    const double big = blind_rt60(reverberant(1.0, 10 + static_cast<int64_t>(k), k));
    const double small = blind_rt60(reverberant(0.2, 10 + static_cast<int64_t>(k), k));
    if (big > small) ++ordered;
  }
  CHECK(ordered == 5);

  try {
    blind_rt60(AudioBuffer(std::vector<float>(32000, 0.0f)));
    FAIL("expected InsufficientDecay");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InsufficientDecay);
  }
}

TEST_CASE("blind_rt60 rank-correlates with nominal RT60") {
  std::vector<double> nominal, blind;
  for (int i = 0; i < 50; ++i) {
    const double rt = 0.1 + 1.1 * i / 49.0;
    nominal.push_back(rt);
    blind.push_back(blind_rt60(reverberant(rt, 300 + i, 1000 + static_cast<uint64_t>(i))));
  }
  const double rho = oracle::spearman(nominal, blind);
  MESSAGE("spearman = " << rho);
  CHECK(rho >= 0.8);
}

TEST_CASE("synth_speech shape and determinism") {
  const AudioBuffer a = synth_speech(3.0, 4, 9);
  CHECK(a.size() == 48000);
  CHECK(a == synth_speech(3.0, 4, 9));
  CHECK(peak_abs(a.samples) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(all_finite(a.samples));

  // At least one pause of >= 100 ms (1600 consecutive zero samples).
  std::size_t run = 0, best = 0;
  for (float v : a.samples) {
    run = v == 0.0f ? run + 1 : 0;
    best = std::max(best, run);
  }
  CHECK(best >= 1600);
}

TEST_CASE("synth_speech speaker identity dominates the long-term spectrum") {
  constexpr int speakers = 10, utterances = 5;
  std::vector<std::vector<std::vector<double>>> spec(speakers);
  for (int s = 0; s < speakers; ++s)
    for (int u = 0; u < utterances; ++u)
      spec[s].push_back(oracle::long_term_log_spectrum(synth_speech(2.0, 1000 + s, 77 + u).samples));

  double within = 0, between = 0;
  int nw = 0, nb = 0;
  for (int s = 0; s < speakers; ++s)
    for (int u = 0; u < utterances; ++u)
      for (int t = 0; t < speakers; ++t)
        for (int v = 0; v < utterances; ++v) {
          if (s == t && u >= v) continue;
          const double d = oracle::mean_abs_diff(spec[s][u], spec[t][v]);
          if (s == t) {
            within += d;
            ++nw;
          } else {
            between += d;
            ++nb;
          }
        }
  CHECK(within / nw < between / nb);
}

TEST_CASE("synth_speech utterances are not waveform copies") {
  const AudioBuffer a = synth_speech(2.0, 5, 1), b = synth_speech(2.0, 5, 2);
  double ea = 0, eb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ea += a.samples[i] * a.samples[i];
    eb += b.samples[i] * b.samples[i];
  }
  double best = 0;
  const int n = static_cast<int>(a.size());
  for (int lag = -n + 1; lag < n; lag += 1) {
    double acc = 0;
    const int lo = std::max(0, lag), hi = std::min(n, n + lag);
    for (int i = lo; i < hi; ++i) acc += a.samples[i] * b.samples[i - lag];
    best = std::max(best, std::abs(acc));
  }
  CHECK(best / std::sqrt(ea * eb) < 0.5);
}
