#pragma once

#include <cstdint>

#include "actel/audio.hpp"
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

inline constexpr double kMaxRt60 = 2.0;
// ln(10^3): amplitude envelope exp(-k t / rt60) falls 60 dB at t = rt60.
inline constexpr double kDecay60 = 6.907755278982137;
inline constexpr float kRirPeak = 0.25f;

// Linear convolution truncated to the speech length.
AudioBuffer convolve_rir(const AudioBuffer& speech, const ImpulseResponse& rir);

// Drops everything before the peak-magnitude sample, then rescales so the
// peak magnitude is 0.25.
ImpulseResponse preprocess_rir(const ImpulseResponse& raw);

// Scales so max |x| == 1; an all-zero buffer is returned unchanged.
AudioBuffer peak_normalize(const AudioBuffer& x);

// Unit direct path followed by exponentially decaying white noise.
ImpulseResponse synth_rir(double rt60, double duration, uint64_t seed);

// Schroeder backward integration, line fit on the -5..-25 dB range of the
// energy-decay curve.
double estimate_rt60(const ImpulseResponse& h);

// Blind estimate from reverberant speech using free-decay segments of the
// short-time energy envelope.
double blind_rt60(const AudioBuffer& x);

// Parametric source-filter speech; speaker sets pitch and resonances, the
// utterance seed sets the syllable pattern and intonation.
AudioBuffer synth_speech(double duration, int64_t speaker_id, uint64_t utterance_seed);

}  // namespace actel::inline ACTEL_ABI_NS
