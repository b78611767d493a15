#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include "actel/real.hpp"

namespace actel::inline ACTEL_ABI_NS {

// Feature maps are [channels x time], row-major so each channel is contiguous.
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Rng;

struct Param {
  std::string name;
  Mat value;
  int fan_in = 1;
};

class ParamSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols, int fan_in);

  Mat& operator[](std::size_t i) { return params_[i].value; }
  const Mat& operator[](std::size_t i) const { return params_[i].value; }
  std::size_t size() const { return params_.size(); }
  const std::vector<Param>& all() const { return params_; }
  std::vector<Param>& all() { return params_; }
  std::size_t scalar_count() const;

 private:
  std::vector<Param> params_;
};

// Gradient buffers shaped like a ParamSet.
struct Grads {
  std::vector<Mat> g;

  static Grads zeros_like(const ParamSet& p);
  void set_zero();
  Grads& operator+=(const Grads& other);
};

struct Conv1d {
  int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, dilation = 1, pad_left = 0, pad_right = 0;
  std::size_t weight = 0, bias = 0;  // weight is [out x in*kernel]

  struct Cache {
    Mat col;
    Eigen::Index in_len = 0;
  };

  static Conv1d make(ParamSet& p, const std::string& name, int in_ch, int out_ch, int kernel, int stride = 1,
                     int dilation = 1);
  // Strided conv that maps length L (divisible by stride) to L / stride.
  static Conv1d make_down(ParamSet& p, const std::string& name, int in_ch, int out_ch, int stride);

  Eigen::Index out_len(Eigen::Index in_len) const;
  Mat forward(const ParamSet& p, const Mat& x, Cache* cache) const;
  Mat backward(const ParamSet& p, const Mat& dy, const Cache& cache, Grads& g) const;
};

// Kernel 2*stride, cropped so length L maps to L * stride.
struct ConvTranspose1d {
  int in_ch = 0, out_ch = 0, kernel = 2, stride = 1, crop_left = 0;
  std::size_t weight = 0, bias = 0;  // weight is [in x out*kernel]

  struct Cache {
    Mat x;
  };

  static ConvTranspose1d make_up(ParamSet& p, const std::string& name, int in_ch, int out_ch, int stride);

  Mat forward(const ParamSet& p, const Mat& x, Cache* cache) const;
  Mat backward(const ParamSet& p, const Mat& dy, const Cache& cache, Grads& g) const;
};

struct Elu {
  struct Cache {
    Mat x;
  };
  Mat forward(const ParamSet&, const Mat& x, Cache* cache) const;
  Mat backward(const ParamSet&, const Mat& dy, const Cache& cache, Grads&) const;
};

// x + conv1x1(elu(conv_k3_dilated(elu(x)))), hidden width channels / 2.
struct ResUnit {
  Conv1d conv1, conv2;

  struct Cache {
    Mat x, c1;
    Conv1d::Cache k1, k2;
  };

  static ResUnit make(ParamSet& p, const std::string& name, int channels, int dilation);
  Mat forward(const ParamSet& p, const Mat& x, Cache* cache) const;
  Mat backward(const ParamSet& p, const Mat& dy, const Cache& cache, Grads& g) const;
};

using Layer = std::variant<Conv1d, ConvTranspose1d, Elu, ResUnit>;
using LayerCache = std::variant<Conv1d::Cache, ConvTranspose1d::Cache, Elu::Cache, ResUnit::Cache>;

class Sequential {
 public:
  void push(Layer layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }

  // cache may be null for inference.
  Mat forward(const ParamSet& p, const Mat& x, std::vector<LayerCache>* cache) const;
  Mat backward(const ParamSet& p, const Mat& dy, const std::vector<LayerCache>& cache, Grads& g) const;

 private:
  std::vector<Layer> layers_;
};

// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor.
void init_uniform(ParamSet& p, Rng& rng);

}  // namespace actel::inline ACTEL_ABI_NS
