#include "actel/rvq.hpp"

#include <cmath>
#include <limits>

#include "actel/error.hpp"
#include "actel/rng.hpp"

namespace actel::inline ACTEL_ABI_NS {

namespace {

double exact_sq_distance(const Real* a, const Real* b, Eigen::Index d) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += diff * diff;
  }
  return s;
}

}  // namespace

std::vector<int32_t> nearest_codewords(const Mat& rows, const Mat& codebook) {
  if (rows.cols() != codebook.cols()) fail(ErrorKind::ShapeError, "row/codebook dimension mismatch");
  const Eigen::Index d = rows.cols();
  const Eigen::Matrix<Real, Eigen::Dynamic, 1> norms = codebook.rowwise().squaredNorm();
  // ||r - e||^2 - ||r||^2 = ||e||^2 - 2 r.e
  Mat scores = Real(-2) * (rows * codebook.transpose());
  scores.rowwise() += norms.transpose();

  std::vector<int32_t> out(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index t = 0; t < rows.rows(); ++t) {
    const Real* s = scores.row(t).data();
    Real best = std::numeric_limits<Real>::infinity();
    for (Eigen::Index k = 0; k < scores.cols(); ++k) best = std::min(best, s[k]);
    // Float rounding in the expansion is bounded well inside this window.
    const Real window = 1e-4 * (1.0 + std::abs(best) + rows.row(t).squaredNorm());
    double best_exact = std::numeric_limits<double>::infinity();
    int32_t best_k = 0;
    for (Eigen::Index k = 0; k < scores.cols(); ++k) {
      if (s[k] > best + window) continue;
      const double dist = exact_sq_distance(rows.row(t).data(), codebook.row(k).data(), d);
      if (dist < best_exact) {
        best_exact = dist;
        best_k = static_cast<int32_t>(k);
      }
    }
    out[static_cast<std::size_t>(t)] = best_k;
  }
  return out;
}

RvqResult rvq_quantize(const Mat& emb, std::span<const Mat> codebooks, int n) {
  if (n < 1 || n > static_cast<int>(codebooks.size())) {
    fail(ErrorKind::InvalidStageCount,
         "requested " + std::to_string(n) + " stages of " + std::to_string(codebooks.size()));
  }
  RvqResult r;
  r.tokens.resize(emb.rows(), n);
  r.quantized = Mat::Zero(emb.rows(), emb.cols());
  Mat residual = emb;
  for (int s = 0; s < n; ++s) {
    const Mat& cb = codebooks[static_cast<std::size_t>(s)];
    const std::vector<int32_t> idx = nearest_codewords(residual, cb);
    for (Eigen::Index t = 0; t < emb.rows(); ++t) {
      const int32_t k = idx[static_cast<std::size_t>(t)];
      r.tokens(t, s) = k;
      r.quantized.row(t) += cb.row(k);
    }
    r.stage_input.push_back(residual);
    for (Eigen::Index t = 0; t < emb.rows(); ++t) residual.row(t) -= cb.row(r.tokens(t, s));
  }
  return r;
}

Mat rvq_dequantize(const TokenMatrix& tokens, std::span<const Mat> codebooks) {
  if (tokens.cols() > static_cast<Eigen::Index>(codebooks.size())) {
    fail(ErrorKind::InvalidStageCount, "more token columns than codebooks");
  }
  const Eigen::Index dim = codebooks.empty() ? 0 : codebooks[0].cols();
  Mat out = Mat::Zero(tokens.rows(), dim);
  for (Eigen::Index s = 0; s < tokens.cols(); ++s) {
    const Mat& cb = codebooks[static_cast<std::size_t>(s)];
    for (Eigen::Index t = 0; t < tokens.rows(); ++t) {
      const int32_t k = tokens(t, s);
      if (k < 0 || k >= cb.rows()) fail(ErrorKind::InvalidToken, "token " + std::to_string(k) + " out of range");
      out.row(t) += cb.row(k);
    }
  }
  return out;
}

ResidualVq::ResidualVq(int stages, int codebook_size, int dim)
    : codebook_size_(codebook_size), dim_(dim) {
  for (int s = 0; s < stages; ++s) {
    codebooks_.push_back(Mat::Zero(codebook_size, dim));
    embed_sum_.push_back(Mat::Zero(codebook_size, dim));
    cluster_size_.emplace_back(static_cast<std::size_t>(codebook_size), 0.0);
  }
}

RvqResult ResidualVq::quantize(const Mat& emb, int n) const { return rvq_quantize(emb, codebooks_, n); }

Mat ResidualVq::dequantize(const TokenMatrix& tokens) const { return rvq_dequantize(tokens, codebooks_); }

void ResidualVq::initialize(const Mat& samples, uint64_t seed) {
  require(samples.rows() > 0 && samples.cols() == dim_, ErrorKind::ShapeError, "bad quantizer init batch");
  Rng rng(derive_seed({0x5651494eULL, seed}));
  Mat residual = samples;
  for (int s = 0; s < stages(); ++s) {
    Mat& cb = codebooks_[static_cast<std::size_t>(s)];
    for (int k = 0; k < codebook_size_; ++k) {
      cb.row(k) = residual.row(static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(residual.rows()))));
    }
    embed_sum_[static_cast<std::size_t>(s)] = cb;
    std::fill(cluster_size_[static_cast<std::size_t>(s)].begin(), cluster_size_[static_cast<std::size_t>(s)].end(),
              1.0);
    const std::vector<int32_t> idx = nearest_codewords(residual, cb);
    for (Eigen::Index t = 0; t < residual.rows(); ++t) residual.row(t) -= cb.row(idx[static_cast<std::size_t>(t)]);
  }
  initialized_ = true;
}

void ResidualVq::ema_update(std::span<const RvqResult* const> batch, const VqOptions& opts, uint64_t seed) {
  Rng rng(derive_seed({0x454d4155ULL, seed}));
  for (int s = 0; s < stages(); ++s) {
    const auto su = static_cast<std::size_t>(s);
    std::vector<double> counts(static_cast<std::size_t>(codebook_size_), 0.0);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(codebook_size_, dim_);
    std::vector<std::pair<const RvqResult*, Eigen::Index>> rows;
    for (const RvqResult* r : batch) {
      if (static_cast<int>(r->stage_input.size()) <= s) continue;
      for (Eigen::Index t = 0; t < r->tokens.rows(); ++t) {
        const int32_t k = r->tokens(t, s);
        counts[static_cast<std::size_t>(k)] += 1.0;
        sums.row(k) += r->stage_input[su].row(t).cast<double>();
        rows.emplace_back(r, t);
      }
    }
    if (rows.empty()) continue;

    std::vector<Real>& cluster = cluster_size_[su];
    Mat& embed_sum = embed_sum_[su];
    const Real keep = opts.decay, take = 1.0 - opts.decay;
    double total = 0.0;
    for (int k = 0; k < codebook_size_; ++k) {
      cluster[static_cast<std::size_t>(k)] =
          keep * cluster[static_cast<std::size_t>(k)] + take * static_cast<Real>(counts[static_cast<std::size_t>(k)]);
      embed_sum.row(k) = keep * embed_sum.row(k) + take * sums.row(k).cast<Real>();
      total += cluster[static_cast<std::size_t>(k)];
    }
    Mat& cb = codebooks_[su];
    const double denom = total + codebook_size_ * static_cast<double>(opts.epsilon);
    for (int k = 0; k < codebook_size_; ++k) {
      const double smoothed = (cluster[static_cast<std::size_t>(k)] + opts.epsilon) / denom * total;
      cb.row(k) = embed_sum.row(k) / static_cast<Real>(smoothed);
    }
    for (int k = 0; k < codebook_size_; ++k) {
      if (cluster[static_cast<std::size_t>(k)] >= opts.dead_threshold) continue;
      const auto& [r, t] = rows[static_cast<std::size_t>(rng.below(rows.size()))];
      cb.row(k) = r->stage_input[su].row(t);
      embed_sum.row(k) = cb.row(k);
      cluster[static_cast<std::size_t>(k)] = 1.0;
    }
  }
}

}  // namespace actel::inline ACTEL_ABI_NS
