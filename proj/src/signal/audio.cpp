#include "actel/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "actel/error.hpp"

namespace actel::inline ACTEL_ABI_NS {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::RateMismatch: return "RateMismatch";
    case ErrorKind::DegenerateRir: return "DegenerateRir";
    case ErrorKind::InvalidRt60: return "InvalidRt60";
    case ErrorKind::InsufficientDecay: return "InsufficientDecay";
    case ErrorKind::BandExhausted: return "BandExhausted";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InputTooShort: return "InputTooShort";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::InvalidStageCount: return "InvalidStageCount";
    case ErrorKind::InvalidToken: return "InvalidToken";
    case ErrorKind::NumericalDivergence: return "NumericalDivergence";
    case ErrorKind::DegenerateReference: return "DegenerateReference";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

float peak_abs(std::span<const float> x) {
  float m = 0.0f;
  for (float v : x) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(std::span<const float> x) {
  return std::all_of(x.begin(), x.end(), [](float v) { return std::isfinite(v); });
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

void put_u16(std::ostream& os, uint16_t v) {
  const std::array<char, 2> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  os.write(b.data(), 2);
}

uint32_t get_u32(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

uint16_t get_u16(const unsigned char* p) { return uint16_t(p[0] | (p[1] << 8)); }

int16_t to_pcm(float v) {
  const double scaled = std::nearbyint(static_cast<double>(v) * 32768.0);
  return static_cast<int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

}  // namespace

AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorKind::IoError, "not a RIFF/WAVE file: " + path.string());
  }

  bool have_fmt = false;
  uint16_t channels = 0, bits = 0, format = 0;
  uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const uint32_t len = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) fail(ErrorKind::IoError, "truncated chunk in " + path.string());
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) fail(ErrorKind::IoError, "short fmt chunk in " + path.string());
      format = get_u16(bytes.data() + body);
      channels = get_u16(bytes.data() + body + 2);
      rate = get_u32(bytes.data() + body + 4);
      bits = get_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) fail(ErrorKind::IoError, "data before fmt in " + path.string());
      if (format != 1 || bits != 16 || channels != 1) {
        fail(ErrorKind::IoError, "expected mono 16-bit PCM: " + path.string());
      }
      if (rate != static_cast<uint32_t>(kSampleRate)) {
        fail(ErrorKind::RateMismatch, path.string() + " has rate " + std::to_string(rate));
      }
      std::vector<float> samples(len / 2);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto v = static_cast<int16_t>(get_u16(bytes.data() + body + 2 * i));
        samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return AudioBuffer(std::move(samples));
    }
    pos = body + len + (len & 1);
  }
  fail(ErrorKind::IoError, "no data chunk in " + path.string());
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& audio) {
  if (audio.sample_rate != kSampleRate) {
    fail(ErrorKind::RateMismatch, "refusing to write rate " + std::to_string(audio.sample_rate));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::IoError, "cannot write " + path.string());
  const auto data_bytes = static_cast<uint32_t>(audio.samples.size() * 2);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put_u32(os, 16);
  put_u16(os, 1);
  put_u16(os, 1);
  put_u32(os, kSampleRate);
  put_u32(os, kSampleRate * 2);
  put_u16(os, 2);
  put_u16(os, 16);
  os.write("data", 4);
  put_u32(os, data_bytes);
  std::vector<char> pcm(data_bytes);
  for (std::size_t i = 0; i < audio.samples.size(); ++i) {
    const auto v = static_cast<uint16_t>(to_pcm(audio.samples[i]));
    pcm[2 * i] = static_cast<char>(v & 0xff);
    pcm[2 * i + 1] = static_cast<char>(v >> 8);
  }
  os.write(pcm.data(), static_cast<std::streamsize>(pcm.size()));
  if (!os) fail(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace actel::inline ACTEL_ABI_NS
