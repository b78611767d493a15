#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "actel/codec.hpp"
#include "actel/error.hpp"
#include "actel/rng.hpp"
#include "actel/signal.hpp"
#include "doctest.h"

using namespace actel;

namespace {

AudioBuffer random_audio(std::size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> s(n);
  for (float& v : s) v = static_cast<float>(0.5 * rng.uniform(-1.0, 1.0));
  return AudioBuffer(std::move(s));
}

Mat random_mat(Eigen::Index r, Eigen::Index c, uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(rng.normal());
  return m;
}

// Quantized model with codebooks seeded from its own encoder output.
CodecModel ready_model(ModelConfig c) {
  CodecModel m(c);
  if (m.quantized()) {
    const LatentPair l = m.encode(random_audio(16000, 99));
    m.speech_vq().initialize(l.speech_emb, 1);
    m.acoustic_vq().initialize(l.acoustic_emb, 2);
  }
  return m;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::InvalidInput;
}

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "actel_test_codec";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("default configuration is valid and small") {
  const ModelConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.speech_dim + c.acoustic_dim == c.latent_dim);
  const CodecModel m(c);
  CHECK(m.params().scalar_count() < 2'000'000);
}

TEST_CASE("configuration invariants are enforced") {
  ModelConfig c;
  c.hop = 300;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::ConfigError);
  c = ModelConfig{};
  c.codebook_size = 512;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::ConfigError);
  c = ModelConfig{};
  c.speech_dim = 60;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::ConfigError);
  c = ModelConfig{};
  c.downsample_factor = 0;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::ConfigError);
  c = ModelConfig{};
  c.n_quantizers = -1;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::ConfigError);
}

TEST_CASE("frame and length contract") {
  for (int n_q : {0, 8}) {
    ModelConfig c;
    c.n_quantizers = n_q;
    const CodecModel m = ready_model(c);
    for (std::size_t len : {320u, 480u, 48000u, 96000u}) {
      const AudioBuffer x = random_audio(len, len);
      const LatentPair l = m.latents_for_decoding(x);
      const auto frames = static_cast<Eigen::Index>((len + 319) / 320);
      CHECK(l.frames() == frames);
      CHECK(l.speech_emb.cols() == 64);
      CHECK(l.acoustic_emb.cols() == 64);
      CHECK(m.decode(l).size() == static_cast<std::size_t>(frames * 320));
    }
  }
  const CodecModel m = ready_model(ModelConfig{});
  CHECK(kind_of([&] { m.encode(random_audio(319, 1)); }) == ErrorKind::InputTooShort);
}

TEST_CASE("acoustic stream length follows the downsample factor") {
  ModelConfig c;
  c.downsample_factor = 10;
  const CodecModel m = ready_model(c);
  const LatentPair l = m.encode(random_audio(48000, 3));
  CHECK(l.speech_emb.rows() == 150);
  CHECK(l.acoustic_emb.rows() == 15);
  c.downsample_factor = 150;
  CHECK(ready_model(c).encode(random_audio(48000, 3)).acoustic_emb.rows() == 1);
}

TEST_CASE("decoding all-zero latents stays finite") {
  const CodecModel m = ready_model(ModelConfig{});
  const LatentPair z{Mat::Zero(20, 64), Mat::Zero(20, 64)};
  const AudioBuffer y = m.decode(z);
  CHECK(y.size() == 6400);
  CHECK(all_finite(y.view()));
  CHECK(kind_of([&] { m.decode(LatentPair{Mat::Zero(20, 63), Mat::Zero(20, 64)}); }) == ErrorKind::ShapeError);
}

TEST_CASE("downsample_acoustic against a loop oracle") {
  const Mat x = random_mat(150, 64, 5);
  CHECK(downsample_acoustic(x, 1) == x);
  const Mat y = downsample_acoustic(x, 10);
  REQUIRE(y.rows() == 15);
  for (Eigen::Index b = 0; b < 15; ++b) {
    for (Eigen::Index j = 0; j < 64; ++j) {
      double s = 0.0;
      for (Eigen::Index t = 10 * b; t < 10 * b + 10; ++t) s += x(t, j);
      CHECK(y(b, j) == doctest::Approx(s / 10.0).epsilon(1e-5));
    }
  }
  // short final block is averaged over its own size
  const Mat p = downsample_acoustic(x.topRows(7), 3);
  REQUIRE(p.rows() == 3);
  CHECK(p(2, 0) == doctest::Approx(x(6, 0)).epsilon(1e-6));
  CHECK(p(1, 5) == doctest::Approx((x(3, 5) + x(4, 5) + x(5, 5)) / 3.0).epsilon(1e-5));

  Mat constant(30, 64);
  constant.rowwise() = random_mat(1, 64, 6).row(0);
  for (int d : {1, 2, 7, 30}) {
    const Mat c = downsample_acoustic(constant, d);
    for (Eigen::Index r = 0; r < c.rows(); ++r) CHECK((c.row(r) - constant.row(0)).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((upsample_acoustic(c, d, 30) - constant).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("upsample_acoustic repeats rows by index") {
  const Mat h = random_mat(15, 64, 7);
  CHECK(upsample_acoustic(h, 1, 15) == h);
  const Mat u = upsample_acoustic(h, 10, 150);
  REQUIRE(u.rows() == 150);
  for (Eigen::Index t = 0; t < 150; ++t) CHECK(u.row(t) == h.row(t / 10));
  CHECK(kind_of([&] { upsample_acoustic(h, 10, 160); }) == ErrorKind::ShapeError);
}

TEST_CASE("pooling backward passes are adjoints") {
  const Mat x = random_mat(23, 5, 8), g = random_mat(5, 5, 9);
  const double lhs = (downsample_acoustic(x, 5).cwiseProduct(g)).sum();
  const double rhs = (x.cwiseProduct(downsample_acoustic_backward(g, 5, 23))).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
  const Mat gu = random_mat(23, 5, 10);
  const double lu = (upsample_acoustic(g, 5, 23).cwiseProduct(gu)).sum();
  const double ru = (g.cwiseProduct(upsample_acoustic_backward(gu, 5, 5))).sum();
  CHECK(lu == doctest::Approx(ru).epsilon(1e-5));
}

TEST_CASE("zero_acoustic and swap_acoustic") {
  const LatentPair a{random_mat(10, 64, 1), random_mat(10, 64, 2)};
  const LatentPair b{random_mat(10, 64, 3), random_mat(10, 64, 4)};
  const LatentPair z = zero_acoustic(a);
  CHECK(z.speech_emb == a.speech_emb);
  CHECK(z.acoustic_emb.isZero(0));
  CHECK(z.acoustic_emb.rows() == a.acoustic_emb.rows());
  CHECK(zero_acoustic(z) == z);

  const auto [ab, ba] = swap_acoustic(a, b);
  CHECK(ab.speech_emb == a.speech_emb);
  CHECK(ab.acoustic_emb == b.acoustic_emb);
  CHECK(ba.speech_emb == b.speech_emb);
  CHECK(ba.acoustic_emb == a.acoustic_emb);
  const auto [x, y] = swap_acoustic(ab, ba);
  CHECK(x == a);
  CHECK(y == b);
  const auto [s1, s2] = swap_acoustic(a, a);
  CHECK(s1 == a);
  CHECK(s2 == a);
  const LatentPair shorter{random_mat(9, 64, 5), random_mat(9, 64, 6)};
  CHECK(kind_of([&] { swap_acoustic(a, shorter); }) == ErrorKind::ShapeError);
}

TEST_CASE("frozen model is deterministic and self-teleport equals reconstruction") {
  const CodecModel m = ready_model(ModelConfig{});
  const AudioBuffer x = synth_speech(3.0, 5, 5);
  CHECK(m.encode(x) == m.encode(x));
  const AudioBuffer rec = m.decode(m.latents_for_decoding(x));
  const auto [t1, t2] = teleport(x, x, m);
  CHECK(t1.samples == rec.samples);
  CHECK(t2.samples == rec.samples);
  CHECK(t1.size() == 48000);
  CHECK(dereverberate(x, m).size() == 48000);
}

TEST_CASE("tokens are in range and dequantize to the decoder-side latents") {
  const CodecModel m = ready_model(ModelConfig{});
  const AudioBuffer x = random_audio(16000, 11);
  TokenStreams tok;
  const LatentPair q = m.quantize(m.encode(x), &tok);
  CHECK(tok.speech_tokens.cols() == 8);
  CHECK(tok.speech_tokens.rows() == 50);
  CHECK(tok.speech_tokens.minCoeff() >= 0);
  CHECK(tok.speech_tokens.maxCoeff() < 1024);
  CHECK(tok.acoustic_tokens.maxCoeff() < 1024);
  CHECK(m.dequantize(tok) == q);
  CHECK(tokens_from_json(tokens_to_json(tok)).speech_tokens == tok.speech_tokens);

  ModelConfig c;
  c.n_quantizers = 0;
  const CodecModel u(c);
  CHECK(u.latents_for_decoding(x) == u.encode(x));
}

TEST_CASE("checkpoint round trip") {
  ModelConfig c;
  c.downsample_factor = 4;
  c.seed = 17;
  const CodecModel m = ready_model(c);
  const auto path = temp_path("model.ckpt");
  save_checkpoint(path, m, 123);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.step == 123);
  CHECK(ck.model.config() == m.config());
  REQUIRE(ck.model.params().size() == m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(ck.model.params()[i] == m.params()[i]);
  CHECK(ck.model.speech_vq().codebooks() == m.speech_vq().codebooks());
  CHECK(ck.model.acoustic_vq().initialized());
  const AudioBuffer x = synth_speech(1.0, 3, 3);
  CHECK(dereverberate(x, ck.model).samples == dereverberate(x, m).samples);

  {
    std::ofstream os(temp_path("bad.ckpt"), std::ios::binary);
    os << "not a checkpoint";
  }
  CHECK(kind_of([&] { load_checkpoint(temp_path("bad.ckpt")); }) == ErrorKind::IoError);

  // bump the version field that follows the 8-byte magic
  std::vector<char> bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  bytes[8] = 9;
  {
    std::ofstream os(temp_path("future.ckpt"), std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK(kind_of([&] { load_checkpoint(temp_path("future.ckpt")); }) == ErrorKind::ConfigError);
}
