#include "actel/codec.hpp"

#include <bit>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>

#include "actel/error.hpp"
#include "actel/rng.hpp"

namespace actel::inline ACTEL_ABI_NS {

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) fail(ErrorKind::ConfigError, msg);
  };
  check(sample_rate == kSampleRate, "sample_rate must be 16000");
  check(speech_dim > 0 && acoustic_dim > 0, "stream dims must be positive");
  check(speech_dim + acoustic_dim == latent_dim, "speech_dim + acoustic_dim must equal latent_dim");
  check(codebook_size == 1024, "codebook_size must be 1024");
  check(n_quantizers >= 0, "n_quantizers must be >= 0");
  check(downsample_factor >= 1, "downsample_factor must be >= 1");
  check(!strides.empty(), "at least one stride required");
  int prod = 1;
  for (int s : strides) {
    check(s >= 1, "strides must be positive");
    prod *= s;
  }
  check(prod == hop, "product of strides must equal hop");
  check(base_channels >= 2, "base_channels must be >= 2");
  check(!decoder_dilations.empty() && !encoder_dilations.empty(), "dilation lists must be non-empty");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"sample_rate", c.sample_rate},
                     {"hop", c.hop},
                     {"latent_dim", c.latent_dim},
                     {"speech_dim", c.speech_dim},
                     {"acoustic_dim", c.acoustic_dim},
                     {"codebook_size", c.codebook_size},
                     {"n_quantizers", c.n_quantizers},
                     {"downsample_factor", c.downsample_factor},
                     {"strides", c.strides},
                     {"base_channels", c.base_channels},
                     {"encoder_dilations", c.encoder_dilations},
                     {"decoder_dilations", c.decoder_dilations},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.sample_rate = j.value("sample_rate", d.sample_rate);
  c.hop = j.value("hop", d.hop);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.speech_dim = j.value("speech_dim", d.speech_dim);
  c.acoustic_dim = j.value("acoustic_dim", d.acoustic_dim);
  c.codebook_size = j.value("codebook_size", d.codebook_size);
  c.n_quantizers = j.value("n_quantizers", d.n_quantizers);
  c.downsample_factor = j.value("downsample_factor", d.downsample_factor);
  c.strides = j.value("strides", d.strides);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.encoder_dilations = j.value("encoder_dilations", d.encoder_dilations);
  c.decoder_dilations = j.value("decoder_dilations", d.decoder_dilations);
  c.seed = j.value("seed", d.seed);
}

// --- latent plumbing ----------------------------------------------------------

Mat downsample_acoustic(const Mat& emb, int d) {
  require(d >= 1, ErrorKind::InvalidInput, "downsample factor must be >= 1");
  if (d == 1) return emb;
  const Eigen::Index rows = ceil_div(emb.rows(), d);
  Mat out(rows, emb.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::Index begin = r * d;
    const Eigen::Index n = std::min<Eigen::Index>(d, emb.rows() - begin);
    out.row(r) = emb.middleRows(begin, n).colwise().sum() / static_cast<Real>(n);
  }
  return out;
}

Mat downsample_acoustic_backward(const Mat& grad, int d, Eigen::Index frames) {
  if (d == 1) return grad;
  Mat out(frames, grad.cols());
  for (Eigen::Index t = 0; t < frames; ++t) {
    const Eigen::Index r = t / d;
    const Eigen::Index n = std::min<Eigen::Index>(d, frames - r * d);
    out.row(t) = grad.row(r) / static_cast<Real>(n);
  }
  return out;
}

Mat upsample_acoustic(const Mat& emb, int d, Eigen::Index target_frames) {
  require(d >= 1, ErrorKind::InvalidInput, "downsample factor must be >= 1");
  if (emb.rows() != ceil_div(target_frames, d)) {
    fail(ErrorKind::ShapeError, "acoustic rows " + std::to_string(emb.rows()) + " do not match " +
                                    std::to_string(target_frames) + " frames at factor " + std::to_string(d));
  }
  if (d == 1) return emb;
  Mat out(target_frames, emb.cols());
  for (Eigen::Index t = 0; t < target_frames; ++t) out.row(t) = emb.row(t / d);
  return out;
}

Mat upsample_acoustic_backward(const Mat& grad, int d, Eigen::Index coarse_frames) {
  if (d == 1) return grad;
  Mat out = Mat::Zero(coarse_frames, grad.cols());
  for (Eigen::Index t = 0; t < grad.rows(); ++t) out.row(t / d) += grad.row(t);
  return out;
}

LatentPair zero_acoustic(const LatentPair& latents) {
  return LatentPair{latents.speech_emb, Mat::Zero(latents.acoustic_emb.rows(), latents.acoustic_emb.cols())};
}

std::pair<LatentPair, LatentPair> swap_acoustic(const LatentPair& a, const LatentPair& b) {
  if (a.speech_emb.rows() != b.speech_emb.rows() || a.speech_emb.cols() != b.speech_emb.cols() ||
      a.acoustic_emb.rows() != b.acoustic_emb.rows() || a.acoustic_emb.cols() != b.acoustic_emb.cols()) {
    fail(ErrorKind::ShapeError, "cannot swap latents of different shapes");
  }
  return {LatentPair{a.speech_emb, b.acoustic_emb}, LatentPair{b.speech_emb, a.acoustic_emb}};
}

// --- model ----------------------------------------------------------------------

CodecModel::CodecModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int c0 = config_.base_channels;

  encoder_.push(Conv1d::make(params_, "enc.conv_in", 1, c0, 7));
  for (std::size_t i = 0; i < config_.strides.size(); ++i) {
    const int c = config_.stage_channels(i);
    const std::string name = "enc.stage" + std::to_string(i);
    encoder_.push(ResUnit::make(params_, name + ".res", c, 1));
    encoder_.push(Elu{});
    encoder_.push(Conv1d::make_down(params_, name + ".down", c, 2 * c, config_.strides[i]));
  }
  const int cf = config_.frame_channels();
  for (int dil : config_.encoder_dilations) {
    encoder_.push(ResUnit::make(params_, "enc.frame_res" + std::to_string(dil), cf, dil));
  }
  encoder_.push(Elu{});
  encoder_.push(Conv1d::make(params_, "enc.proj", cf, config_.latent_dim, 3));

  decoder_.push(Conv1d::make(params_, "dec.conv_in", config_.latent_dim, cf, 3));
  for (int dil : config_.decoder_dilations) {
    decoder_.push(ResUnit::make(params_, "dec.frame_res" + std::to_string(dil), cf, dil));
  }
  for (std::size_t i = config_.strides.size(); i-- > 0;) {
    const int c = config_.stage_channels(i);
    const std::string name = "dec.stage" + std::to_string(i);
    decoder_.push(Elu{});
    decoder_.push(ConvTranspose1d::make_up(params_, name + ".up", 2 * c, c, config_.strides[i]));
    decoder_.push(ResUnit::make(params_, name + ".res", c, 1));
  }
  decoder_.push(Elu{});
  decoder_.push(Conv1d::make(params_, "dec.conv_out", c0, 1, 7));

  Rng rng(derive_seed({0x4d4f444cULL, config_.seed}));
  init_uniform(params_, rng);

  speech_vq_ = ResidualVq(config_.n_quantizers, config_.codebook_size, config_.speech_dim);
  acoustic_vq_ = ResidualVq(config_.n_quantizers, config_.codebook_size, config_.acoustic_dim);
}

Mat CodecModel::pad_to_frames(const AudioBuffer& x) const {
  if (x.size() < static_cast<std::size_t>(config_.hop)) {
    fail(ErrorKind::InputTooShort, "input has " + std::to_string(x.size()) + " samples, need at least " +
                                       std::to_string(config_.hop));
  }
  require(x.sample_rate == config_.sample_rate, ErrorKind::RateMismatch, "input sample rate differs from model");
  const Eigen::Index frames = frames_for(x.size(), config_.hop);
  Mat wave = Mat::Zero(1, frames * config_.hop);
  std::copy(x.samples.begin(), x.samples.end(), wave.data());
  return wave;
}

LatentPair CodecModel::split(const Mat& z) const {
  // z is [latent_dim x frames]
  const Mat zt = z.transpose();
  LatentPair out;
  out.speech_emb = zt.leftCols(config_.speech_dim);
  out.acoustic_emb = downsample_acoustic(zt.rightCols(config_.acoustic_dim), config_.downsample_factor);
  return out;
}

Mat CodecModel::join(const LatentPair& latents) const {
  const Eigen::Index frames = latents.frames();
  if (latents.speech_emb.cols() != config_.speech_dim || latents.acoustic_emb.cols() != config_.acoustic_dim) {
    fail(ErrorKind::ShapeError, "latent widths do not match the model");
  }
  if (frames == 0) fail(ErrorKind::ShapeError, "latents have no frames");
  const Mat fine = upsample_acoustic(latents.acoustic_emb, config_.downsample_factor, frames);
  Mat z(config_.latent_dim, frames);
  z.topRows(config_.speech_dim) = latents.speech_emb.transpose();
  z.bottomRows(config_.acoustic_dim) = fine.transpose();
  return z;
}

LatentPair CodecModel::encode(const AudioBuffer& x) const {
  const Mat wave = pad_to_frames(x);
  return split(encoder_.forward(params_, wave, nullptr));
}

LatentPair CodecModel::quantize(const LatentPair& latents, TokenStreams* tokens) const {
  if (!quantized()) {
    if (tokens) *tokens = TokenStreams{};
    return latents;
  }
  RvqResult s = speech_vq_.quantize(latents.speech_emb, config_.n_quantizers);
  RvqResult a = acoustic_vq_.quantize(latents.acoustic_emb, config_.n_quantizers);
  if (tokens) *tokens = TokenStreams{s.tokens, a.tokens};
  return LatentPair{std::move(s.quantized), std::move(a.quantized)};
}

LatentPair CodecModel::dequantize(const TokenStreams& tokens) const {
  require(quantized(), ErrorKind::InvalidStageCount, "model has no quantizers");
  if (tokens.speech_tokens.cols() != config_.n_quantizers || tokens.acoustic_tokens.cols() != config_.n_quantizers) {
    fail(ErrorKind::ShapeError, "token streams must have n_quantizers columns");
  }
  return LatentPair{speech_vq_.dequantize(tokens.speech_tokens), acoustic_vq_.dequantize(tokens.acoustic_tokens)};
}

LatentPair CodecModel::latents_for_decoding(const AudioBuffer& x) const { return quantize(encode(x)); }

AudioBuffer CodecModel::decode(const LatentPair& latents) const {
  const Mat y = decoder_.forward(params_, join(latents), nullptr);
  AudioBuffer out;
  out.sample_rate = config_.sample_rate;
  out.samples.assign(y.data(), y.data() + y.size());
  return out;
}

EncodeTrace CodecModel::encode_train(const Mat& wave) const {
  require(wave.rows() == 1 && wave.cols() > 0 && wave.cols() % config_.hop == 0, ErrorKind::ShapeError,
          "training waveform must be [1 x k*hop]");
  EncodeTrace tr;
  tr.continuous = split(encoder_.forward(params_, wave, &tr.cache));
  if (quantized()) {
    tr.speech_q = speech_vq_.quantize(tr.continuous.speech_emb, config_.n_quantizers);
    tr.acoustic_q = acoustic_vq_.quantize(tr.continuous.acoustic_emb, config_.n_quantizers);
    tr.decoder_side = LatentPair{tr.speech_q->quantized, tr.acoustic_q->quantized};
  } else {
    tr.decoder_side = tr.continuous;
  }
  return tr;
}

Mat CodecModel::decode_train(const LatentPair& latents, DecodeTrace& trace) const {
  trace.frames = latents.frames();
  return decoder_.forward(params_, join(latents), &trace.cache);
}

LatentPair CodecModel::decode_backward(const Mat& grad_wave, const DecodeTrace& trace, Grads& g) const {
  const Mat dz = decoder_.backward(params_, grad_wave, trace.cache, g).transpose();
  LatentPair out;
  out.speech_emb = dz.leftCols(config_.speech_dim);
  out.acoustic_emb = upsample_acoustic_backward(dz.rightCols(config_.acoustic_dim), config_.downsample_factor,
                                                ceil_div(trace.frames, config_.downsample_factor));
  return out;
}

void CodecModel::encode_backward(const EncodeTrace& trace, const LatentPair& grad, Grads& g) const {
  const Eigen::Index frames = trace.continuous.frames();
  Mat dz(config_.latent_dim, frames);
  dz.topRows(config_.speech_dim) = grad.speech_emb.transpose();
  dz.bottomRows(config_.acoustic_dim) =
      downsample_acoustic_backward(grad.acoustic_emb, config_.downsample_factor, frames).transpose();
  encoder_.backward(params_, dz, trace.cache, g);
}

std::pair<AudioBuffer, AudioBuffer> teleport(const AudioBuffer& x1, const AudioBuffer& x2, const CodecModel& model) {
  const LatentPair a = model.latents_for_decoding(x1);
  const LatentPair b = model.latents_for_decoding(x2);
  auto [ab, ba] = swap_acoustic(a, b);
  return {model.decode(ab), model.decode(ba)};
}

AudioBuffer dereverberate(const AudioBuffer& x, const CodecModel& model) {
  return model.decode(zero_acoustic(model.latents_for_decoding(x)));
}

// --- checkpoint -------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'C', 'T', 'L', 'C', 'K', 'P', 'T'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(ErrorKind::IoError, "truncated checkpoint");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<uint64_t>(is);
  if (n > (1u << 26)) fail(ErrorKind::IoError, "corrupt checkpoint string");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) fail(ErrorKind::IoError, "truncated checkpoint");
  return s;
}

void put_tensor(std::ostream& os, const std::string& name, const Mat& m) {
  put_string(os, name);
  put<uint64_t>(os, static_cast<uint64_t>(m.rows()));
  put<uint64_t>(os, static_cast<uint64_t>(m.cols()));
  // stored as float32 whatever the build precision
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f = m.cast<float>();
  os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
}

Mat row_of(const std::vector<Real>& v) {
  return Eigen::Map<const Mat>(v.data(), 1, static_cast<Eigen::Index>(v.size()));
}

std::vector<std::pair<std::string, const Mat*>> vq_tensors(const std::string& prefix, const ResidualVq& vq,
                                                           std::deque<Mat>& scratch) {
  std::vector<std::pair<std::string, const Mat*>> out;
  for (int s = 0; s < vq.stages(); ++s) {
    const auto su = static_cast<std::size_t>(s);
    out.emplace_back(prefix + ".codebook." + std::to_string(s), &vq.codebooks()[su]);
    out.emplace_back(prefix + ".embed_sum." + std::to_string(s), &vq.embed_sums()[su]);
    scratch.push_back(row_of(vq.cluster_sizes()[su]));
    out.emplace_back(prefix + ".cluster_size." + std::to_string(s), &scratch.back());
  }
  scratch.push_back(Mat::Constant(1, 1, vq.initialized() ? 1.0 : 0.0));
  out.emplace_back(prefix + ".initialized", &scratch.back());
  return out;
}

void restore_vq(const std::string& prefix, ResidualVq& vq, std::map<std::string, Mat>& tensors) {
  auto take = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) -> Mat {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail(ErrorKind::IoError, "checkpoint lacks tensor " + name);
    if (it->second.rows() != rows || it->second.cols() != cols) {
      fail(ErrorKind::ShapeError, "checkpoint tensor " + name + " has the wrong shape");
    }
    Mat m = std::move(it->second);
    tensors.erase(it);
    return m;
  };
  for (int s = 0; s < vq.stages(); ++s) {
    const auto su = static_cast<std::size_t>(s);
    vq.codebooks()[su] = take(prefix + ".codebook." + std::to_string(s), vq.codebook_size(), vq.dim());
    vq.embed_sums()[su] = take(prefix + ".embed_sum." + std::to_string(s), vq.codebook_size(), vq.dim());
    const Mat c = take(prefix + ".cluster_size." + std::to_string(s), 1, vq.codebook_size());
    vq.cluster_sizes()[su].assign(c.data(), c.data() + c.size());
  }
  if (take(prefix + ".initialized", 1, 1)(0, 0) != 0.0) vq.mark_initialized();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CodecModel& model, uint64_t step) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorKind::IoError, "cannot write " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    put<uint32_t>(os, Checkpoint::kFormatVersion);
    put<uint64_t>(os, step);
    put_string(os, nlohmann::json(model.config()).dump());

    std::deque<Mat> scratch;
    std::vector<std::pair<std::string, const Mat*>> tensors;
    for (const Param& p : model.params().all()) tensors.emplace_back(p.name, &p.value);
    for (auto& t : vq_tensors("speech_vq", model.speech_vq(), scratch)) tensors.push_back(t);
    for (auto& t : vq_tensors("acoustic_vq", model.acoustic_vq(), scratch)) tensors.push_back(t);
    put<uint64_t>(os, tensors.size());
    for (const auto& [name, m] : tensors) put_tensor(os, name, *m);
    if (!os) fail(ErrorKind::IoError, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::IoError, "cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) fail(ErrorKind::IoError, "not a checkpoint file");
  const auto version = get<uint32_t>(is);
  if (version != Checkpoint::kFormatVersion) {
    fail(ErrorKind::ConfigError, "unsupported checkpoint format_version " + std::to_string(version));
  }
  const auto step = get<uint64_t>(is);
  ModelConfig config;
  try {
    config = nlohmann::json::parse(get_string(is)).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ConfigError, std::string("bad checkpoint config: ") + e.what());
  }
  Checkpoint ck{CodecModel(config), step};

  std::map<std::string, Mat> tensors;
  const auto count = get<uint64_t>(is);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = get_string(is);
    const auto rows = get<uint64_t>(is);
    const auto cols = get<uint64_t>(is);
    if (rows * cols > (1ull << 28)) fail(ErrorKind::IoError, "corrupt tensor " + name);
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(static_cast<Eigen::Index>(rows),
                                                                            static_cast<Eigen::Index>(cols));
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (!is) fail(ErrorKind::IoError, "truncated tensor " + name);
    tensors.emplace(std::move(name), m.cast<Real>());
  }

  for (Param& p : ck.model.params().all()) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) fail(ErrorKind::IoError, "checkpoint lacks tensor " + p.name);
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      fail(ErrorKind::ShapeError, "checkpoint tensor " + p.name + " has the wrong shape");
    }
    p.value = std::move(it->second);
    tensors.erase(it);
  }
  restore_vq("speech_vq", ck.model.speech_vq(), tensors);
  restore_vq("acoustic_vq", ck.model.acoustic_vq(), tensors);
  if (!tensors.empty()) fail(ErrorKind::IoError, "checkpoint has unexpected tensor " + tensors.begin()->first);
  return ck;
}

nlohmann::json tokens_to_json(const TokenStreams& tokens) {
  auto rows = [](const TokenMatrix& m) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      a.push_back(std::vector<int32_t>(m.row(t).data(), m.row(t).data() + m.cols()));
    }
    return a;
  };
  return nlohmann::json{{"speech_tokens", rows(tokens.speech_tokens)},
                        {"acoustic_tokens", rows(tokens.acoustic_tokens)}};
}

TokenStreams tokens_from_json(const nlohmann::json& j) {
  auto parse = [](const nlohmann::json& a) {
    TokenMatrix m;
    if (!a.is_array()) fail(ErrorKind::InvalidInput, "token stream must be an array");
    const Eigen::Index rows = static_cast<Eigen::Index>(a.size());
    const Eigen::Index cols = rows ? static_cast<Eigen::Index>(a[0].size()) : 0;
    m.resize(rows, cols);
    for (Eigen::Index t = 0; t < rows; ++t) {
      const auto& r = a[static_cast<std::size_t>(t)];
      if (static_cast<Eigen::Index>(r.size()) != cols) fail(ErrorKind::ShapeError, "ragged token rows");
      for (Eigen::Index s = 0; s < cols; ++s) m(t, s) = r[static_cast<std::size_t>(s)].get<int32_t>();
    }
    return m;
  };
  try {
    return TokenStreams{parse(j.at("speech_tokens")), parse(j.at("acoustic_tokens"))};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("bad token file: ") + e.what());
  }
}

}  // namespace actel::inline ACTEL_ABI_NS
