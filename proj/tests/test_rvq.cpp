#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "actel/error.hpp"
#include "actel/rng.hpp"
#include "actel/rvq.hpp"
#include "doctest.h"

using namespace actel;

namespace {

Mat random_rows(Eigen::Index rows, Eigen::Index cols, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(scale * rng.normal());
  return m;
}

// Brute-force argmin over every codeword in double precision; first minimum wins.
int32_t brute_nearest(const Mat& rows, Eigen::Index t, const Mat& cb) {
  double best = std::numeric_limits<double>::infinity();
  int32_t arg = -1;
  for (Eigen::Index k = 0; k < cb.rows(); ++k) {
    double d = 0.0;
    for (Eigen::Index j = 0; j < cb.cols(); ++j) {
      const double diff = static_cast<double>(rows(t, j)) - static_cast<double>(cb(k, j));
      d += diff * diff;
    }
    if (d < best) {
      best = d;
      arg = static_cast<int32_t>(k);
    }
  }
  return arg;
}

double mean_sq(const Mat& m) { return m.cast<double>().squaredNorm() / static_cast<double>(m.rows()); }

// Codebooks trained the way the model trains them: residual-sample seeding
// followed by mean updates (EMA with decay 0).
ResidualVq trained_quantizer(int stages, uint64_t seed) {
  ResidualVq vq(stages, 1024, 64);
  const Mat train = random_rows(4096, 64, seed);
  vq.initialize(train, seed);
  VqOptions lloyd;
  lloyd.decay = 0;
  for (int it = 0; it < 4; ++it) {
    const RvqResult r = vq.quantize(train, stages);
    const RvqResult* p = &r;
    vq.ema_update(std::span<const RvqResult* const>(&p, 1), lloyd, seed + static_cast<uint64_t>(it));
  }
  return vq;
}

}  // namespace

TEST_CASE("stage-1 tokens equal exhaustive nearest-codeword search") {
  const Mat cb = random_rows(1024, 64, 1);
  const Mat rows = random_rows(1000, 64, 2);
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Mat> books{cb};
  const RvqResult r = rvq_quantize(rows, books, 1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  int match = 0;
  for (Eigen::Index t = 0; t < rows.rows(); ++t) match += r.tokens(t, 0) == brute_nearest(rows, t, cb);
  CHECK(match == 1000);
  CHECK(secs < 10.0);
}

TEST_CASE("a row equal to a codeword maps to it with zero residual") {
  const Mat cb = random_rows(1024, 64, 3);
  const Mat row = cb.row(417);
  const std::vector<Mat> books{cb};
  const RvqResult r = rvq_quantize(row, books, 1);
  CHECK(r.tokens(0, 0) == 417);
  CHECK((row - r.quantized).squaredNorm() == 0.0);
}

TEST_CASE("ties go to the lowest index") {
  Mat cb = random_rows(8, 4, 4);
  cb.row(5) = cb.row(2);
  const Mat row = cb.row(2);
  CHECK(nearest_codewords(row, cb)[0] == 2);
}

TEST_CASE("mean squared residual is non-increasing in the stage count") {
  const ResidualVq vq = trained_quantizer(16, 5);
  const Mat x = random_rows(100, 64, 6);
  double prev = mean_sq(x);
  int violations = 0;
  for (int n = 1; n <= 16; ++n) {
    const double e = mean_sq(x - vq.quantize(x, n).quantized);
    if (e > prev) ++violations;
    prev = e;
  }
  CHECK(violations == 0);
}

TEST_CASE("dequantize inverts quantize and matches explicit accumulation") {
  std::vector<Mat> books;
  for (int s = 0; s < 4; ++s) books.push_back(random_rows(1024, 64, 10 + static_cast<uint64_t>(s), std::pow(0.5, s)));
  const Mat x = random_rows(37, 64, 20);
  const RvqResult r = rvq_quantize(x, books, 4);
  CHECK(rvq_dequantize(r.tokens, books) == r.quantized);

  Mat acc = Mat::Zero(37, 64);
  for (Eigen::Index t = 0; t < 37; ++t)
    for (int s = 0; s < 4; ++s)
      for (Eigen::Index j = 0; j < 64; ++j) acc(t, j) += books[static_cast<std::size_t>(s)](r.tokens(t, s), j);
  CHECK((acc - rvq_dequantize(r.tokens, books)).cwiseAbs().maxCoeff() == 0.0);

  TokenMatrix single(1, 1);
  single(0, 0) = 99;
  const std::vector<Mat> one{books[0]};
  CHECK(rvq_dequantize(single, one) == books[0].row(99));

  for (const auto& [token, kind] : {std::pair{1024, ErrorKind::InvalidToken}, std::pair{-1, ErrorKind::InvalidToken}}) {
    single(0, 0) = token;
    try {
      rvq_dequantize(single, one);
      FAIL("expected InvalidToken");
    } catch (const Error& e) {
      CHECK(e.kind() == kind);
    }
  }
}

TEST_CASE("stage count out of range") {
  const std::vector<Mat> books{random_rows(1024, 64, 1), random_rows(1024, 64, 2)};
  const Mat x = random_rows(3, 64, 3);
  for (int n : {0, 3}) {
    try {
      rvq_quantize(x, books, n);
      FAIL("expected InvalidStageCount");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidStageCount);
    }
  }
}

TEST_CASE("EMA with decay 0 moves used codewords to their cluster means and reseeds dead ones") {
  ResidualVq vq(1, 1024, 4);
  const Mat x = random_rows(64, 4, 30);
  vq.initialize(x, 1);
  const RvqResult r = vq.quantize(x, 1);
  const RvqResult* p = &r;
  VqOptions o;
  o.decay = 0;
  o.epsilon = 0;
  vq.ema_update(std::span<const RvqResult* const>(&p, 1), o, 2);

  std::vector<int> count(1024, 0);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(1024, 4);
  for (Eigen::Index t = 0; t < 64; ++t) {
    ++count[static_cast<std::size_t>(r.tokens(t, 0))];
    sum.row(r.tokens(t, 0)) += x.row(t).cast<double>();
  }
  for (int k = 0; k < 1024; ++k) {
    if (count[static_cast<std::size_t>(k)] == 0) {
      // unused codes are dead after one decay-0 step and take a batch row
      bool from_batch = false;
      for (Eigen::Index t = 0; t < 64; ++t) from_batch |= vq.codebooks()[0].row(k) == x.row(t);
      CHECK(from_batch);
      continue;
    }
    const Eigen::VectorXd mean = sum.row(k).transpose() / count[static_cast<std::size_t>(k)];
    CHECK((vq.codebooks()[0].row(k).cast<double>().transpose() - mean).cwiseAbs().maxCoeff() < 1e-5);
  }
}
