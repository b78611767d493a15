#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "actel/nn.hpp"
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

using TokenMatrix = Eigen::Matrix<int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct RvqResult {
  TokenMatrix tokens;            // [T x n]
  Mat quantized;                 // [T x D], sum of selected codewords
  std::vector<Mat> stage_input;  // residual entering each stage
};

// Nearest codeword per row; ties go to the lowest index. Distances are
// screened with a GEMM expansion and confirmed exactly in double precision.
std::vector<int32_t> nearest_codewords(const Mat& rows, const Mat& codebook);

// codebooks[i] is [K x D] for stage i; uses the first n stages.
RvqResult rvq_quantize(const Mat& emb, std::span<const Mat> codebooks, int n);
Mat rvq_dequantize(const TokenMatrix& tokens, std::span<const Mat> codebooks);

struct VqOptions {
  Real decay = 0.99;
  Real epsilon = 1e-5;
  // Codes whose EMA cluster size drops below this are reseeded from the batch.
  Real dead_threshold = 0.05;
};

// Residual vector quantizer with EMA codebook updates.
class ResidualVq {
 public:
  ResidualVq() = default;
  ResidualVq(int stages, int codebook_size, int dim);

  int stages() const { return static_cast<int>(codebooks_.size()); }
  int codebook_size() const { return codebook_size_; }
  int dim() const { return dim_; }
  bool initialized() const { return initialized_; }

  const std::vector<Mat>& codebooks() const { return codebooks_; }
  std::vector<Mat>& codebooks() { return codebooks_; }
  std::vector<Mat>& embed_sums() { return embed_sum_; }
  const std::vector<Mat>& embed_sums() const { return embed_sum_; }
  std::vector<std::vector<Real>>& cluster_sizes() { return cluster_size_; }
  const std::vector<std::vector<Real>>& cluster_sizes() const { return cluster_size_; }
  void mark_initialized() { initialized_ = true; }

  RvqResult quantize(const Mat& emb, int n) const;
  Mat dequantize(const TokenMatrix& tokens) const;

  // Seeds every stage from rows of the given batch (stage i from residuals
  // left by stages < i).
  void initialize(const Mat& samples, uint64_t seed);

  // One EMA step over the batch results (produced by quantize on this
  // quantizer with all stages), followed by dead-code reseeding.
  void ema_update(std::span<const RvqResult* const> batch, const VqOptions& opts, uint64_t seed);

 private:
  int codebook_size_ = 0;
  int dim_ = 0;
  bool initialized_ = false;
  std::vector<Mat> codebooks_;
  std::vector<Mat> embed_sum_;
  std::vector<std::vector<Real>> cluster_size_;
};

}  // namespace actel::inline ACTEL_ABI_NS
