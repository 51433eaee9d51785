#pragma once

// Discrete Fourier transforms along the sequence axis of an n x d matrix,
// plus the direct time-domain reference evaluations used as oracles.
//
// Conventions:
//   forward  X_k = sum_j x_j exp(-2 pi i jk / n)
//   inverse  x_j = (1/n) sum_k X_k exp(+2 pi i jk / n)
// Real input is stored as the half spectrum, bins 0..floor(n/2).

#include <bit>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "tedrec/error.hpp"
#include "tedrec/tensor.hpp"

namespace tedrec {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace detail {

// exp(sign * 2 pi i * num / den), evaluated in long double and rounded once.
template <class T>
std::complex<T> unit_root(long long num, long long den, int sign) {
  const long double angle = sign * 2.0L * std::numbers::pi_v<long double> * static_cast<long double>(num) /
                            static_cast<long double>(den);
  return {static_cast<T>(std::cos(angle)), static_cast<T>(std::sin(angle))};
}

// In-place iterative radix-2 Cooley-Tukey transform of a power-of-two length.
template <class T>
class Radix2Fft {
 public:
  Radix2Fft() = default;
  explicit Radix2Fft(std::size_t n) : n_(n), twiddles_(n / 2), bitrev_(n) {
    if (!is_power_of_two(n)) throw InvalidArgument("Radix2Fft: length must be a power of two");
    for (std::size_t k = 0; k < n / 2; ++k) twiddles_[k] = unit_root<T>(static_cast<long long>(k), static_cast<long long>(n), -1);
    const int bits = std::countr_zero(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
      bitrev_[i] = r;
    }
  }

  std::size_t size() const { return n_; }

  // Unscaled in both directions.
  void transform(std::span<std::complex<T>> a, bool inverse) const {
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          std::complex<T> w = twiddles_[k * step];
          if (inverse) w = std::conj(w);
          const std::complex<T> u = a[start + k];
          const std::complex<T> v = a[start + k + half] * w;
          a[start + k] = u + v;
          a[start + k + half] = u - v;
        }
      }
    }
  }

  void perturb_twiddle(std::size_t index, T delta) {
    if (twiddles_.empty()) return;
    twiddles_[index % twiddles_.size()] += std::complex<T>(delta, delta);
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::complex<T>> twiddles_;
  std::vector<std::size_t> bitrev_;
};

}  // namespace detail

// Precomputed transform of a fixed length n. Power-of-two lengths use a
// half-length complex FFT with real-input packing; any other length goes
// through Bluestein's chirp-z algorithm on a power-of-two convolution.
// Immutable after construction, so one plan may be shared across threads.
template <class T>
class FftPlan {
 public:
  using complex_type = std::complex<T>;

  explicit FftPlan(std::size_t n) : n_(n) {
    if (n == 0) throw InvalidArgument("FftPlan: length must be positive");
    if (is_power_of_two(n)) {
      if (n >= 2) {
        half_ = detail::Radix2Fft<T>(n / 2);
        real_twiddles_.resize(n / 2 + 1);
        for (std::size_t k = 0; k <= n / 2; ++k) {
          real_twiddles_[k] = detail::unit_root<T>(static_cast<long long>(k), static_cast<long long>(n), -1);
        }
      }
    } else {
      init_bluestein();
    }
  }

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }
  bool uses_bluestein() const { return !is_power_of_two(n_); }

  // Real input of length n -> bins 0..n/2.
  void forward(std::span<const T> x, std::span<complex_type> out) const {
    if (n_ == 1) {
      out[0] = {x[0], T{}};
      return;
    }
    if (!uses_bluestein()) {
      forward_packed(x, out);
      return;
    }
    std::vector<complex_type> full(n_);
    for (std::size_t j = 0; j < n_; ++j) full[j] = {x[j], T{}};
    bluestein(full, false);
    for (std::size_t k = 0; k < bins(); ++k) out[k] = full[k];
    out[0].imag(T{});
    if (n_ % 2 == 0) out[n_ / 2].imag(T{});
  }

  // Half spectrum -> real output of length n. Imaginary parts of the DC and
  // (for even n) Nyquist bins are ignored, as they cannot come from real data.
  void inverse(std::span<const complex_type> in, std::span<T> x) const {
    if (n_ == 1) {
      x[0] = in[0].real();
      return;
    }
    if (!uses_bluestein()) {
      inverse_packed(in, x);
      return;
    }
    std::vector<complex_type> full(n_);
    for (std::size_t k = 0; k < bins(); ++k) full[k] = in[k];
    full[0].imag(T{});
    if (n_ % 2 == 0) full[n_ / 2].imag(T{});
    for (std::size_t k = bins(); k < n_; ++k) full[k] = std::conj(full[n_ - k]);
    bluestein(full, true);
    const T scale = T{1} / static_cast<T>(n_);
    for (std::size_t j = 0; j < n_; ++j) x[j] = full[j].real() * scale;
  }

  // Negative control for the verification suite: corrupts one twiddle factor
  // so every transform of length >= 4 goes wrong.
  void inject_twiddle_fault(T delta = T(1e-3)) {
    if (!uses_bluestein()) {
      if (real_twiddles_.size() > 1) real_twiddles_[1] += complex_type(delta, delta);
      half_.perturb_twiddle(1, delta);
    } else {
      inner_.perturb_twiddle(1, delta);
    }
  }

 private:
  void forward_packed(std::span<const T> x, std::span<complex_type> out) const {
    const std::size_t m = n_ / 2;
    std::vector<complex_type> z(m);
    for (std::size_t j = 0; j < m; ++j) z[j] = {x[2 * j], x[2 * j + 1]};
    half_.transform(z, false);
    for (std::size_t k = 0; k <= m; ++k) {
      const complex_type zk = z[k % m];
      const complex_type zc = std::conj(z[(m - k) % m]);
      const complex_type even = (zk + zc) * T(0.5);
      const complex_type odd = (zk - zc) * complex_type(T{}, T(-0.5));
      out[k] = even + real_twiddles_[k] * odd;
    }
    out[0].imag(T{});
    out[m].imag(T{});
  }

  void inverse_packed(std::span<const complex_type> in, std::span<T> x) const {
    const std::size_t m = n_ / 2;
    std::vector<complex_type> z(m);
    for (std::size_t k = 0; k < m; ++k) {
      complex_type a = in[k];
      complex_type b = in[m - k];
      if (k == 0) {
        a.imag(T{});
        b.imag(T{});
      }
      const complex_type bc = std::conj(b);
      const complex_type even = (a + bc) * T(0.5);
      const complex_type odd = (a - bc) * T(0.5) * std::conj(real_twiddles_[k]);
      z[k] = even + complex_type(T{}, T{1}) * odd;
    }
    half_.transform(z, true);
    const T scale = T{1} / static_cast<T>(m);
    for (std::size_t j = 0; j < m; ++j) {
      x[2 * j] = z[j].real() * scale;
      x[2 * j + 1] = z[j].imag() * scale;
    }
  }

  void init_bluestein() {
    std::size_t m = 1;
    while (m < 2 * n_ - 1) m <<= 1;
    inner_ = detail::Radix2Fft<T>(m);
    chirp_.resize(n_);
    const long long two_n = 2 * static_cast<long long>(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      const long long jj = static_cast<long long>(j) * static_cast<long long>(j) % two_n;
      // exp(-i pi j^2 / n)
      chirp_[j] = detail::unit_root<T>(jj, two_n, -1);
    }
    kernel_.assign(m, complex_type{});
    kernel_[0] = std::conj(chirp_[0]);
    for (std::size_t j = 1; j < n_; ++j) {
      kernel_[j] = std::conj(chirp_[j]);
      kernel_[m - j] = std::conj(chirp_[j]);
    }
    inner_.transform(kernel_, false);
  }

  // Full complex DFT (unscaled) of length n in place; inverse flips the sign.
  void bluestein(std::vector<complex_type>& a, bool inverse) const {
    const std::size_t m = inner_.size();
    if (inverse) {
      for (auto& v : a) v = std::conj(v);
    }
    std::vector<complex_type> buf(m);
    for (std::size_t j = 0; j < n_; ++j) buf[j] = a[j] * chirp_[j];
    inner_.transform(buf, false);
    for (std::size_t i = 0; i < m; ++i) buf[i] *= kernel_[i];
    inner_.transform(buf, true);
    const T scale = T{1} / static_cast<T>(m);
    for (std::size_t k = 0; k < n_; ++k) a[k] = buf[k] * scale * chirp_[k];
    if (inverse) {
      for (auto& v : a) v = std::conj(v);
    }
  }

  std::size_t n_;
  detail::Radix2Fft<T> half_;
  std::vector<complex_type> real_twiddles_;
  detail::Radix2Fft<T> inner_;
  std::vector<complex_type> chirp_;
  std::vector<complex_type> kernel_;
};

// Half spectrum of an n x d real matrix, transformed column by column.
template <class T>
struct Spectrum {
  Matrix<T> re;
  Matrix<T> im;
  std::size_t original_n = 0;

  Spectrum() = default;
  Spectrum(std::size_t n, std::size_t d) : re(n / 2 + 1, d), im(n / 2 + 1, d), original_n(n) {}

  std::size_t bins() const { return re.rows(); }
  std::size_t dims() const { return re.cols(); }
  std::complex<T> at(std::size_t k, std::size_t c) const { return {re(k, c), im(k, c)}; }
  void set(std::size_t k, std::size_t c, std::complex<T> v) {
    re(k, c) = v.real();
    im(k, c) = v.imag();
  }
};

template <class T>
Spectrum<T> rfft(const FftPlan<T>& plan, MatrixView<const T> x) {
  if (x.rows != plan.size()) throw InvalidArgument("rfft: plan length does not match sequence length");
  const std::size_t n = x.rows;
  Spectrum<T> s(n, x.cols);
  std::vector<T> col(n);
  std::vector<std::complex<T>> out(plan.bins());
  for (std::size_t c = 0; c < x.cols; ++c) {
    for (std::size_t j = 0; j < n; ++j) col[j] = x(j, c);
    plan.forward(col, out);
    for (std::size_t k = 0; k < out.size(); ++k) s.set(k, c, out[k]);
  }
  return s;
}

template <class T>
Spectrum<T> rfft(MatrixView<const T> x) {
  if (x.rows == 0 || x.cols == 0) throw InvalidArgument("rfft: empty matrix");
  return rfft(FftPlan<T>(x.rows), x);
}

template <class T>
Spectrum<T> rfft(const Matrix<T>& x) {
  return rfft<T>(x.view());
}

template <class T>
Matrix<T> irfft(const FftPlan<T>& plan, const Spectrum<T>& s) {
  const std::size_t n = s.original_n;
  if (n == 0 || s.bins() != n / 2 + 1 || s.im.rows() != s.bins() || s.im.cols() != s.dims()) {
    throw InvalidArgument("irfft: original_n " + std::to_string(n) + " inconsistent with " +
                          std::to_string(s.bins()) + " bins");
  }
  if (plan.size() != n) throw InvalidArgument("irfft: plan length does not match original_n");
  Matrix<T> x(n, s.dims());
  std::vector<std::complex<T>> in(s.bins());
  std::vector<T> col(n);
  for (std::size_t c = 0; c < s.dims(); ++c) {
    for (std::size_t k = 0; k < in.size(); ++k) in[k] = s.at(k, c);
    plan.inverse(in, col);
    for (std::size_t j = 0; j < n; ++j) x(j, c) = col[j];
  }
  return x;
}

template <class T>
Matrix<T> irfft(const Spectrum<T>& s) {
  if (s.original_n == 0) throw InvalidArgument("irfft: original_n must be positive");
  if (s.bins() != s.original_n / 2 + 1) {
    throw InvalidArgument("irfft: original_n " + std::to_string(s.original_n) + " inconsistent with " +
                          std::to_string(s.bins()) + " bins");
  }
  return irfft(FftPlan<T>(s.original_n), s);
}

// Complex Hadamard product per bin and per dimension.
template <class T>
Spectrum<T> hadamard(const Spectrum<T>& a, const Spectrum<T>& b) {
  if (a.bins() != b.bins() || a.dims() != b.dims() || a.original_n != b.original_n) {
    throw InvalidArgument("hadamard: spectrum shape mismatch");
  }
  Spectrum<T> out(a.original_n, a.dims());
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    const T ar = a.re.data()[i], ai = a.im.data()[i];
    const T br = b.re.data()[i], bi = b.im.data()[i];
    out.re.data()[i] = ar * br - ai * bi;
    out.im.data()[i] = ar * bi + ai * br;
  }
  return out;
}

// conj(a) * b elementwise.
template <class T>
Spectrum<T> conj_hadamard(const Spectrum<T>& a, const Spectrum<T>& b) {
  Spectrum<T> out(a.original_n, a.dims());
  for (std::size_t i = 0; i < a.re.size(); ++i) {
    const T ar = a.re.data()[i], ai = a.im.data()[i];
    const T br = b.re.data()[i], bi = b.im.data()[i];
    out.re.data()[i] = ar * br + ai * bi;
    out.im.data()[i] = ar * bi - ai * br;
  }
  return out;
}

// Weight of bin k when the half spectrum stands in for the full one.
inline double half_spectrum_multiplicity(std::size_t k, std::size_t n) {
  if (k == 0) return 1.0;
  if (n % 2 == 0 && k == n / 2) return 1.0;
  return 2.0;
}

// Adjoint of irfft, treating real and imaginary parts as independent real
// coordinates: given dL/dx, returns dL/d(re) and dL/d(im) of the spectrum.
template <class T>
Spectrum<T> irfft_adjoint(const FftPlan<T>& plan, MatrixView<const T> grad_x) {
  Spectrum<T> g = rfft(plan, grad_x);
  const std::size_t n = plan.size();
  for (std::size_t k = 0; k < g.bins(); ++k) {
    const T w = static_cast<T>(half_spectrum_multiplicity(k, n) / static_cast<double>(n));
    for (std::size_t c = 0; c < g.dims(); ++c) {
      g.re(k, c) *= w;
      g.im(k, c) *= w;
    }
  }
  return g;
}

// Adjoint of rfft: given dL/d(re), dL/d(im) of the half spectrum, returns dL/dx.
template <class T>
Matrix<T> rfft_adjoint(const FftPlan<T>& plan, Spectrum<T> grad_s) {
  const std::size_t n = plan.size();
  for (std::size_t k = 0; k < grad_s.bins(); ++k) {
    const T w = static_cast<T>(static_cast<double>(n) / half_spectrum_multiplicity(k, n));
    for (std::size_t c = 0; c < grad_s.dims(); ++c) {
      grad_s.re(k, c) *= w;
      grad_s.im(k, c) *= w;
    }
  }
  return irfft(plan, grad_s);
}

// ---------------------------------------------------------------------------
// Reference evaluations (O(n^2) and worse). Used by tests and `verify`.

inline std::vector<std::complex<double>> dft_naive(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) throw InvalidArgument("dft_naive: empty input");
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc{};
    for (std::size_t j = 0; j < n; ++j) {
      acc += x[j] * detail::unit_root<double>(static_cast<long long>(j * k % n), static_cast<long long>(n), -1);
    }
    out[k] = acc;
  }
  return out;
}

// Inverse DFT, scaled by 1/n.
inline std::vector<std::complex<double>> idft_naive(std::span<const std::complex<double>> s) {
  const std::size_t n = s.size();
  if (n == 0) throw InvalidArgument("idft_naive: empty input");
  std::vector<std::complex<double>> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::complex<double> acc{};
    for (std::size_t k = 0; k < n; ++k) {
      acc += s[k] * detail::unit_root<double>(static_cast<long long>(j * k % n), static_cast<long long>(n), +1);
    }
    out[j] = acc / static_cast<double>(n);
  }
  return out;
}

// f_j = sum_k t_k (.) e_{(j - k) mod n}
inline Matrix<double> circular_convolve_naive(const Matrix<double>& t, const Matrix<double>& e) {
  require_same_shape<double>(t, e, "circular_convolve_naive");
  const std::size_t n = t.rows(), d = t.cols();
  Matrix<double> f(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t m = (j + n - k) % n;
      for (std::size_t c = 0; c < d; ++c) f(j, c) += t(k, c) * e(m, c);
    }
  }
  return f;
}

struct PastFuture {
  std::vector<double> past;
  std::vector<double> future;
};

// Splits the convolution output at position j into the contribution of
// positions k <= j (pairs t_k with e_{j-k}) and k > j (pairs t_k with e_{j+n-k}).
inline PastFuture past_future_decompose(const Matrix<double>& t, const Matrix<double>& e, std::size_t j) {
  require_same_shape<double>(t, e, "past_future_decompose");
  const std::size_t n = t.rows(), d = t.cols();
  if (j >= n) {
    throw InvalidArgument("past_future_decompose: position " + std::to_string(j) + " out of range [0, " +
                          std::to_string(n) + ")");
  }
  PastFuture r{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t k = 0; k <= j; ++k) {
    for (std::size_t c = 0; c < d; ++c) r.past[c] += t(k, c) * e(j - k, c);
  }
  for (std::size_t k = j + 1; k < n; ++k) {
    for (std::size_t c = 0; c < d; ++c) r.future[c] += t(k, c) * e(j + n - k, c);
  }
  return r;
}

}  // namespace tedrec
