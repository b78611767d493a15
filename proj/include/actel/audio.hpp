#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

inline constexpr int kSampleRate = 16000;

// Mono waveform at 16 kHz. Amplitudes are nominally in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  AudioBuffer() = default;
  explicit AudioBuffer(std::vector<float> s, int rate = kSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
  std::span<const float> view() const { return samples; }

  bool operator==(const AudioBuffer&) const = default;
};

struct ImpulseResponse {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
  // Ground truth for synthetic responses.
  std::optional<double> nominal_rt60;

  std::size_t size() const { return samples.size(); }
  bool operator==(const ImpulseResponse&) const = default;
};

float peak_abs(std::span<const float> x);
bool all_finite(std::span<const float> x);

// 16-bit PCM mono WAV. Samples are scaled by 32768 and clipped on write.
AudioBuffer read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio);

}  // namespace actel::inline ACTEL_ABI_NS
