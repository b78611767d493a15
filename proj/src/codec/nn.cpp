#include "actel/nn.hpp"

#include <cmath>

#include "actel/error.hpp"
#include "actel/rng.hpp"

namespace actel::inline ACTEL_ABI_NS {

std::size_t ParamSet::add(std::string name, Eigen::Index rows, Eigen::Index cols, int fan_in) {
  params_.push_back(Param{std::move(name), Mat::Zero(rows, cols), fan_in});
  return params_.size() - 1;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Grads Grads::zeros_like(const ParamSet& p) {
  Grads g;
  g.g.reserve(p.size());
  for (const Param& q : p.all()) g.g.push_back(Mat::Zero(q.value.rows(), q.value.cols()));
  return g;
}

void Grads::set_zero() {
  for (Mat& m : g) m.setZero();
}

Grads& Grads::operator+=(const Grads& other) {
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += other.g[i];
  return *this;
}

void init_uniform(ParamSet& p, Rng& rng) {
  for (Param& q : p.all()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(q.fan_in));
    for (Eigen::Index i = 0; i < q.value.size(); ++i) q.value.data()[i] = static_cast<Real>(rng.uniform(-bound, bound));
  }
}

// --- Conv1d -----------------------------------------------------------------

Conv1d Conv1d::make(ParamSet& p, const std::string& name, int in_ch, int out_ch, int kernel, int stride,
                    int dilation) {
  Conv1d c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kernel = kernel;
  c.stride = stride;
  c.dilation = dilation;
  c.pad_left = c.pad_right = dilation * (kernel - 1) / 2;
  c.weight = p.add(name + ".weight", out_ch, in_ch * kernel, in_ch * kernel);
  c.bias = p.add(name + ".bias", out_ch, 1, in_ch * kernel);
  return c;
}

Conv1d Conv1d::make_down(ParamSet& p, const std::string& name, int in_ch, int out_ch, int stride) {
  Conv1d c = make(p, name, in_ch, out_ch, 2 * stride, stride, 1);
  c.pad_left = stride / 2;
  c.pad_right = stride - stride / 2;
  return c;
}

Eigen::Index Conv1d::out_len(Eigen::Index in_len) const {
  const Eigen::Index span = static_cast<Eigen::Index>(dilation) * (kernel - 1) + 1;
  return (in_len + pad_left + pad_right - span) / stride + 1;
}

Mat Conv1d::forward(const ParamSet& p, const Mat& x, Cache* cache) const {
  if (x.rows() != in_ch) fail(ErrorKind::ShapeError, "conv expects " + std::to_string(in_ch) + " channels");
  const Eigen::Index tin = x.cols();
  const Eigen::Index tout = out_len(tin);
  if (tout <= 0) fail(ErrorKind::ShapeError, "conv input too short");

  Mat col(static_cast<Eigen::Index>(in_ch) * kernel, tout);
  for (int i = 0; i < in_ch; ++i) {
    const Real* xi = x.row(i).data();
    for (int k = 0; k < kernel; ++k) {
      Real* dst = col.row(static_cast<Eigen::Index>(i) * kernel + k).data();
      const Eigen::Index offset = static_cast<Eigen::Index>(k) * dilation - pad_left;
      for (Eigen::Index t = 0; t < tout; ++t) {
        const Eigen::Index s = t * stride + offset;
        dst[t] = (s >= 0 && s < tin) ? xi[s] : 0.0;
      }
    }
  }
  Mat y = p[weight] * col;
  y.colwise() += Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>(p[bias].data(), out_ch);
  if (cache) {
    cache->col = std::move(col);
    cache->in_len = tin;
  }
  return y;
}

Mat Conv1d::backward(const ParamSet& p, const Mat& dy, const Cache& cache, Grads& g) const {
  g.g[weight].noalias() += dy * cache.col.transpose();
  g.g[bias] += dy.rowwise().sum();
  const Mat dcol = p[weight].transpose() * dy;
  const Eigen::Index tin = cache.in_len, tout = dy.cols();
  Mat dx = Mat::Zero(in_ch, tin);
  for (int i = 0; i < in_ch; ++i) {
    Real* dxi = dx.row(i).data();
    for (int k = 0; k < kernel; ++k) {
      const Real* src = dcol.row(static_cast<Eigen::Index>(i) * kernel + k).data();
      const Eigen::Index offset = static_cast<Eigen::Index>(k) * dilation - pad_left;
      for (Eigen::Index t = 0; t < tout; ++t) {
        const Eigen::Index s = t * stride + offset;
        if (s >= 0 && s < tin) dxi[s] += src[t];
      }
    }
  }
  return dx;
}

// --- ConvTranspose1d ----------------------------------------------------------

ConvTranspose1d ConvTranspose1d::make_up(ParamSet& p, const std::string& name, int in_ch, int out_ch,
                                         int stride) {
  ConvTranspose1d c;
  c.in_ch = in_ch;
  c.out_ch = out_ch;
  c.kernel = 2 * stride;
  c.stride = stride;
  c.crop_left = stride / 2;
  c.weight = p.add(name + ".weight", in_ch, out_ch * c.kernel, out_ch * c.kernel);
  c.bias = p.add(name + ".bias", out_ch, 1, out_ch * c.kernel);
  return c;
}

Mat ConvTranspose1d::forward(const ParamSet& p, const Mat& x, Cache* cache) const {
  if (x.rows() != in_ch) fail(ErrorKind::ShapeError, "transposed conv expects " + std::to_string(in_ch) + " channels");
  const Eigen::Index tin = x.cols();
  const Eigen::Index tout = tin * stride;
  const Mat cols = p[weight].transpose() * x;  // [out*kernel x tin]
  Mat y(out_ch, tout);
  y.colwise() = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>(p[bias].data(), out_ch);
  for (int o = 0; o < out_ch; ++o) {
    Real* yo = y.row(o).data();
    for (int k = 0; k < kernel; ++k) {
      const Real* src = cols.row(static_cast<Eigen::Index>(o) * kernel + k).data();
      const Eigen::Index offset = k - crop_left;
      for (Eigen::Index t = 0; t < tin; ++t) {
        const Eigen::Index s = t * stride + offset;
        if (s >= 0 && s < tout) yo[s] += src[t];
      }
    }
  }
  if (cache) cache->x = x;
  return y;
}

Mat ConvTranspose1d::backward(const ParamSet& p, const Mat& dy, const Cache& cache, Grads& g) const {
  const Eigen::Index tin = cache.x.cols();
  const Eigen::Index tout = dy.cols();
  Mat dcols(static_cast<Eigen::Index>(out_ch) * kernel, tin);
  for (int o = 0; o < out_ch; ++o) {
    const Real* dyo = dy.row(o).data();
    for (int k = 0; k < kernel; ++k) {
      Real* dst = dcols.row(static_cast<Eigen::Index>(o) * kernel + k).data();
      const Eigen::Index offset = k - crop_left;
      for (Eigen::Index t = 0; t < tin; ++t) {
        const Eigen::Index s = t * stride + offset;
        dst[t] = (s >= 0 && s < tout) ? dyo[s] : 0.0;
      }
    }
  }
  g.g[weight].noalias() += cache.x * dcols.transpose();
  g.g[bias] += dy.rowwise().sum();
  return p[weight] * dcols;
}

// --- Elu ------------------------------------------------------------------------

Mat Elu::forward(const ParamSet&, const Mat& x, Cache* cache) const {
  Mat y = x.unaryExpr([](Real v) { return v > 0.0 ? v : std::expm1(v); });
  if (cache) cache->x = x;
  return y;
}

Mat Elu::backward(const ParamSet&, const Mat& dy, const Cache& cache, Grads&) const {
  return dy.binaryExpr(cache.x, [](Real d, Real v) { return v > 0.0 ? d : d * std::exp(v); });
}

// --- ResUnit ----------------------------------------------------------------------

ResUnit ResUnit::make(ParamSet& p, const std::string& name, int channels, int dilation) {
  const int hidden = std::max(1, channels / 2);
  ResUnit r;
  r.conv1 = Conv1d::make(p, name + ".conv1", channels, hidden, 3, 1, dilation);
  r.conv2 = Conv1d::make(p, name + ".conv2", hidden, channels, 1);
  return r;
}

namespace {

inline Real elu(Real v) { return v > 0.0 ? v : std::expm1(v); }
inline Real elu_grad(Real v) { return v > 0.0 ? 1.0 : std::exp(v); }

}  // namespace

Mat ResUnit::forward(const ParamSet& p, const Mat& x, Cache* cache) const {
  const Mat e1 = x.unaryExpr(&elu);
  Mat c1 = conv1.forward(p, e1, cache ? &cache->k1 : nullptr);
  const Mat e2 = c1.unaryExpr(&elu);
  Mat y = conv2.forward(p, e2, cache ? &cache->k2 : nullptr);
  y += x;
  if (cache) {
    cache->x = x;
    cache->c1 = std::move(c1);
  }
  return y;
}

Mat ResUnit::backward(const ParamSet& p, const Mat& dy, const Cache& cache, Grads& g) const {
  const Mat de2 = conv2.backward(p, dy, cache.k2, g);
  const Mat dc1 = de2.binaryExpr(cache.c1, [](Real d, Real v) { return d * elu_grad(v); });
  const Mat de1 = conv1.backward(p, dc1, cache.k1, g);
  Mat dx = de1.binaryExpr(cache.x, [](Real d, Real v) { return d * elu_grad(v); });
  dx += dy;
  return dx;
}

// --- Sequential -------------------------------------------------------------------

Mat Sequential::forward(const ParamSet& p, const Mat& x, std::vector<LayerCache>* cache) const {
  if (cache) {
    cache->clear();
    cache->reserve(layers_.size());
  }
  Mat h = x;
  for (const Layer& layer : layers_) {
    h = std::visit(
        [&](const auto& l) -> Mat {
          using L = std::decay_t<decltype(l)>;
          if (!cache) return l.forward(p, h, nullptr);
          cache->emplace_back(typename L::Cache{});
          return l.forward(p, h, &std::get<typename L::Cache>(cache->back()));
        },
        layer);
  }
  return h;
}

Mat Sequential::backward(const ParamSet& p, const Mat& dy, const std::vector<LayerCache>& cache, Grads& g) const {
  Mat d = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    d = std::visit(
        [&](const auto& l) -> Mat {
          using L = std::decay_t<decltype(l)>;
          return l.backward(p, d, std::get<typename L::Cache>(cache[i]), g);
        },
        layers_[i]);
  }
  return d;
}

}  // namespace actel::inline ACTEL_ABI_NS
