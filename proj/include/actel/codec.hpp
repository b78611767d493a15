#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "actel/audio.hpp"
#include "actel/nn.hpp"
#include "actel/rvq.hpp"
#include "json.hpp"
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

struct ModelConfig {
  int sample_rate = kSampleRate;
  int hop = 320;
  int latent_dim = 128;
  int speech_dim = 64;
  int acoustic_dim = 64;
  int codebook_size = 1024;
  int n_quantizers = 8;  // per stream; 0 disables quantization
  int downsample_factor = 1;
  std::vector<int> strides{2, 4, 5, 8};
  int base_channels = 8;  // doubled after every stride
  std::vector<int> encoder_dilations{1, 3, 9};
  std::vector<int> decoder_dilations{1, 3, 9, 27};
  uint64_t seed = 0;

  void validate() const;
  int stage_channels(std::size_t stage) const { return base_channels << stage; }
  int frame_channels() const { return stage_channels(strides.size()); }
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Rows are frames.
struct LatentPair {
  Mat speech_emb;    // [frames x speech_dim]
  Mat acoustic_emb;  // [ceil(frames / d) x acoustic_dim]

  Eigen::Index frames() const { return speech_emb.rows(); }
  bool operator==(const LatentPair& o) const {
    return speech_emb == o.speech_emb && acoustic_emb == o.acoustic_emb;
  }
};

struct TokenStreams {
  TokenMatrix speech_tokens;    // [frames x N]
  TokenMatrix acoustic_tokens;  // [frames_h x N]
};

inline Eigen::Index frames_for(std::size_t samples, int hop) {
  return static_cast<Eigen::Index>((samples + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop));
}
inline Eigen::Index ceil_div(Eigen::Index a, Eigen::Index b) { return (a + b - 1) / b; }

// Non-overlapping mean pooling over blocks of d frames; the last block may be short.
Mat downsample_acoustic(const Mat& emb, int d);
// Adjoint of downsample_acoustic for a given number of input frames.
Mat downsample_acoustic_backward(const Mat& grad, int d, Eigen::Index frames);
// Row t of the output is row floor(t / d) of the input.
Mat upsample_acoustic(const Mat& emb, int d, Eigen::Index target_frames);
Mat upsample_acoustic_backward(const Mat& grad, int d, Eigen::Index coarse_frames);

LatentPair zero_acoustic(const LatentPair& latents);
std::pair<LatentPair, LatentPair> swap_acoustic(const LatentPair& a, const LatentPair& b);

// Everything the backward pass needs from one encoder run.
struct EncodeTrace {
  std::vector<LayerCache> cache;
  LatentPair continuous;
  std::optional<RvqResult> speech_q, acoustic_q;
  LatentPair decoder_side;  // quantized when N > 0, else equal to continuous
};

struct DecodeTrace {
  std::vector<LayerCache> cache;
  Eigen::Index frames = 0;
};

class CodecModel {
 public:
  explicit CodecModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  ResidualVq& speech_vq() { return speech_vq_; }
  ResidualVq& acoustic_vq() { return acoustic_vq_; }
  const ResidualVq& speech_vq() const { return speech_vq_; }
  const ResidualVq& acoustic_vq() const { return acoustic_vq_; }
  bool quantized() const { return config_.n_quantizers > 0; }

  // Continuous latents; the acoustic stream is already downsampled.
  LatentPair encode(const AudioBuffer& x) const;
  // Quantizes both streams (identity when N == 0).
  LatentPair quantize(const LatentPair& latents, TokenStreams* tokens = nullptr) const;
  LatentPair dequantize(const TokenStreams& tokens) const;
  // What the decoder sees for input x: encode followed by quantize.
  LatentPair latents_for_decoding(const AudioBuffer& x) const;
  // Output length is frames * hop.
  AudioBuffer decode(const LatentPair& latents) const;

  // --- training hooks ---
  // wave is [1 x L] with L a multiple of hop.
  EncodeTrace encode_train(const Mat& wave) const;
  Mat decode_train(const LatentPair& latents, DecodeTrace& trace) const;
  // Returns gradients w.r.t. the decoder's speech and (coarse) acoustic inputs.
  LatentPair decode_backward(const Mat& grad_wave, const DecodeTrace& trace, Grads& g) const;
  // grad is w.r.t. the continuous latents (coarse acoustic rows).
  void encode_backward(const EncodeTrace& trace, const LatentPair& grad, Grads& g) const;

 private:
  Mat pad_to_frames(const AudioBuffer& x) const;
  LatentPair split(const Mat& z) const;
  Mat join(const LatentPair& latents) const;

  ModelConfig config_;
  ParamSet params_;
  Sequential encoder_, decoder_;
  ResidualVq speech_vq_, acoustic_vq_;
};

// Encode both, swap acoustic partitions, decode both.
std::pair<AudioBuffer, AudioBuffer> teleport(const AudioBuffer& x1, const AudioBuffer& x2, const CodecModel& model);

// Encode, zero the acoustic embedding, decode.
AudioBuffer dereverberate(const AudioBuffer& x, const CodecModel& model);

struct Checkpoint {
  static constexpr uint32_t kFormatVersion = 1;
  CodecModel model;
  uint64_t step = 0;
};

void save_checkpoint(const std::filesystem::path& path, const CodecModel& model, uint64_t step);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json tokens_to_json(const TokenStreams& tokens);
TokenStreams tokens_from_json(const nlohmann::json& j);

}  // namespace actel::inline ACTEL_ABI_NS
