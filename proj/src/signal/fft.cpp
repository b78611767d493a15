#include "actel/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>

#include "actel/error.hpp"

namespace actel::inline ACTEL_ABI_NS {

namespace {

#ifdef ACTEL_DOUBLE
using fft_plan = fftw_plan;
using fft_complex = fftw_complex;
#define ACTEL_FFTW(name) fftw_##name
#else
using fft_plan = fftwf_plan;
using fft_complex = fftwf_complex;
#define ACTEL_FFTW(name) fftwf_##name
#endif

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct PlanPair {
  fft_plan fwd;
  fft_plan inv;
};

struct FftwDeleter {
  void operator()(void* p) const { ACTEL_FFTW(free)(p); }
};

struct Scratch {
  std::unique_ptr<Real, FftwDeleter> real;
  std::unique_ptr<fft_complex, FftwDeleter> cplx;
};

Scratch make_scratch(int n) {
  Scratch s;
  s.real.reset(ACTEL_FFTW(alloc_real)(static_cast<size_t>(n)));
  s.cplx.reset(ACTEL_FFTW(alloc_complex)(static_cast<size_t>(n / 2 + 1)));
  return s;
}

// Plans live for the whole process; FFTW plans are immutable after creation.
const PlanPair& plans_for(int n) {
  static std::map<int, PlanPair> cache;
  std::lock_guard<std::mutex> lock(planner_mutex());
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Scratch s = make_scratch(n);
  PlanPair p;
  p.fwd = ACTEL_FFTW(plan_dft_r2c_1d)(n, s.real.get(), s.cplx.get(), FFTW_ESTIMATE);
  p.inv = ACTEL_FFTW(plan_dft_c2r_1d)(n, s.cplx.get(), s.real.get(), FFTW_ESTIMATE);
  return cache.emplace(n, p).first->second;
}

Scratch& scratch_for(int n) {
  thread_local std::map<int, Scratch> local;
  auto it = local.find(n);
  if (it == local.end()) it = local.emplace(n, make_scratch(n)).first;
  return it->second;
}

}  // namespace

RealFft::RealFft(int n) : n_(n) {
  require(n >= 2, ErrorKind::InvalidInput, "fft size must be >= 2");
  const PlanPair& p = plans_for(n);
  fwd_ = p.fwd;
  inv_ = p.inv;
}

void RealFft::forward(std::span<const Real> in, std::span<std::complex<Real>> out) const {
  Scratch& s = scratch_for(n_);
  std::copy(in.begin(), in.begin() + n_, s.real.get());
  ACTEL_FFTW(execute_dft_r2c)(static_cast<fft_plan>(fwd_), s.real.get(), s.cplx.get());
  std::memcpy(static_cast<void*>(out.data()), s.cplx.get(), sizeof(fft_complex) * static_cast<size_t>(bins()));
}

void RealFft::inverse(std::span<const std::complex<Real>> in, std::span<Real> out) const {
  Scratch& s = scratch_for(n_);
  std::memcpy(s.cplx.get(), in.data(), sizeof(fft_complex) * static_cast<size_t>(bins()));
  ACTEL_FFTW(execute_dft_c2r)(static_cast<fft_plan>(inv_), s.cplx.get(), s.real.get());
  std::copy(s.real.get(), s.real.get() + n_, out.begin());
}

std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const size_t out_len = a.size() + b.size() - 1;
  size_t n = 1;
  while (n < out_len) n <<= 1;

  double* ta = fftw_alloc_real(n);
  double* tb = fftw_alloc_real(n);
  fftw_complex* fa = fftw_alloc_complex(n / 2 + 1);
  fftw_complex* fb = fftw_alloc_complex(n / 2 + 1);
  fftw_plan pa, pb, pi;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    pa = fftw_plan_dft_r2c_1d(static_cast<int>(n), ta, fa, FFTW_ESTIMATE);
    pb = fftw_plan_dft_r2c_1d(static_cast<int>(n), tb, fb, FFTW_ESTIMATE);
    pi = fftw_plan_dft_c2r_1d(static_cast<int>(n), fa, ta, FFTW_ESTIMATE);
  }
  std::fill(ta, ta + n, 0.0);
  std::fill(tb, tb + n, 0.0);
  std::copy(a.begin(), a.end(), ta);
  std::copy(b.begin(), b.end(), tb);
  fftw_execute(pa);
  fftw_execute(pb);
  for (size_t k = 0; k < n / 2 + 1; ++k) {
    const double re = fa[k][0] * fb[k][0] - fa[k][1] * fb[k][1];
    const double im = fa[k][0] * fb[k][1] + fa[k][1] * fb[k][0];
    fa[k][0] = re;
    fa[k][1] = im;
  }
  fftw_execute(pi);
  std::vector<double> out(out_len);
  const double scale = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < out_len; ++i) out[i] = ta[i] * scale;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(pa);
    fftw_destroy_plan(pb);
    fftw_destroy_plan(pi);
  }
  fftw_free(ta);
  fftw_free(tb);
  fftw_free(fa);
  fftw_free(fb);
  return out;
}

}  // namespace actel::inline ACTEL_ABI_NS
