// Copyright 2026 the tvfx authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <vector>

#include <fftw3.h>

#include "tvfx/common.hpp"

namespace tvfx {

// Thin RAII wrapper over FFTW's 1-d real transforms, for float and double.
// Plans are cached per transform size. Transforms follow FFTW conventions:
// rfft is unnormalized, irfft scales the round trip by n. Not thread-safe;
// use one engine per thread (the whole pipeline is single-threaded anyway).

namespace detail {

template <typename Scalar>
struct FftwApi;

template <>
struct FftwApi<float> {
  using plan_t = fftwf_plan;
  using complex_t = fftwf_complex;
  static plan_t plan_r2c(int n, float* in, complex_t* out) {
    return fftwf_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static plan_t plan_c2r(int n, complex_t* in, float* out) {
    return fftwf_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static void run_r2c(plan_t p, float* in, complex_t* out) { fftwf_execute_dft_r2c(p, in, out); }
  static void run_c2r(plan_t p, complex_t* in, float* out) { fftwf_execute_dft_c2r(p, in, out); }
  static void destroy(plan_t p) { fftwf_destroy_plan(p); }
};

template <>
struct FftwApi<double> {
  using plan_t = fftw_plan;
  using complex_t = fftw_complex;
  static plan_t plan_r2c(int n, double* in, complex_t* out) {
    return fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static plan_t plan_c2r(int n, complex_t* in, double* out) {
    return fftw_plan_dft_c2r_1d(n, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static void run_r2c(plan_t p, double* in, complex_t* out) { fftw_execute_dft_r2c(p, in, out); }
  static void run_c2r(plan_t p, complex_t* in, double* out) { fftw_execute_dft_c2r(p, in, out); }
  static void destroy(plan_t p) { fftw_destroy_plan(p); }
};

}  // namespace detail

template <typename Scalar>
class Fft {
  using Api = detail::FftwApi<Scalar>;

 public:
  Fft() = default;
  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;
  ~Fft() {
    for (auto& [n, p] : fwd_) Api::destroy(p);
    for (auto& [n, p] : inv_) Api::destroy(p);
  }

  // Real n-point signal -> n/2+1 complex bins.
  void rfft(const Scalar* in, std::size_t n, std::complex<Scalar>* out) {
    scratch_real_.assign(in, in + n);
    Api::run_r2c(fwd_plan(static_cast<int>(n)), scratch_real_.data(),
                 reinterpret_cast<typename Api::complex_t*>(out));
  }

  // n/2+1 complex bins -> real n-point signal; output scaled by n (FFTW raw).
  void irfft(const std::complex<Scalar>* in, std::size_t n, Scalar* out) {
    scratch_cplx_.assign(in, in + n / 2 + 1);  // c2r destroys its input
    Api::run_c2r(inv_plan(static_cast<int>(n)),
                 reinterpret_cast<typename Api::complex_t*>(scratch_cplx_.data()), out);
  }

  static Fft& instance() {
    static Fft engine;
    return engine;
  }

 private:
  typename Api::plan_t fwd_plan(int n) {
    auto it = fwd_.find(n);
    if (it != fwd_.end()) return it->second;
    std::vector<Scalar> in(static_cast<std::size_t>(n));
    std::vector<std::complex<Scalar>> out(static_cast<std::size_t>(n) / 2 + 1);
    auto p = Api::plan_r2c(n, in.data(), reinterpret_cast<typename Api::complex_t*>(out.data()));
    check(p != nullptr, "FFT plan creation failed");
    fwd_[n] = p;
    return p;
  }
  typename Api::plan_t inv_plan(int n) {
    auto it = inv_.find(n);
    if (it != inv_.end()) return it->second;
    std::vector<std::complex<Scalar>> in(static_cast<std::size_t>(n) / 2 + 1);
    std::vector<Scalar> out(static_cast<std::size_t>(n));
    auto p = Api::plan_c2r(n, reinterpret_cast<typename Api::complex_t*>(in.data()), out.data());
    check(p != nullptr, "FFT plan creation failed");
    inv_[n] = p;
    return p;
  }

  std::map<int, typename Api::plan_t> fwd_, inv_;
  std::vector<Scalar> scratch_real_;
  std::vector<std::complex<Scalar>> scratch_cplx_;
};

}  // namespace tvfx
