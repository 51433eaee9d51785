#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "tedrec/fusion.hpp"

using namespace tedrec;

namespace {

void randn(Matrix<double>& m, std::mt19937_64& rng, double std = 1.0) {
  std::normal_distribution<double> nd(0.0, std);
  for (auto& v : m.flat()) v = nd(rng);
}

// Owns every matrix that a FusionLayer views.
struct OwnedFusion {
  std::size_t n, dt, d, g;
  Matrix<double> id_table, shift, proj, router, raw_w, raw_b, filt_re, filt_im, gfw, gfb, gew, geb;
  FusionLayer<double> layer;

  OwnedFusion(std::size_t n_, std::size_t items, std::size_t dt_, std::size_t d_, std::size_t g_)
      : n(n_), dt(dt_), d(d_), g(g_), id_table(items + 1, d), shift(g * n, dt), proj(g * dt, d), router(dt, g),
        raw_w(dt, d), raw_b(1, d), filt_re(n / 2 + 1, d, 1.0), filt_im(n / 2 + 1, d), gfw(1, d), gfb(1, 1),
        gew(1, d), geb(1, 1) {
    layer.id_table = id_table.view();
    layer.experts.experts = g;
    layer.experts.positions = n;
    layer.experts.modulation = shift.view();
    layer.experts.projections = proj.view();
    layer.experts.router = router.view();
    layer.raw_projection = {raw_w.view(), raw_b.view()};
    layer.fusion = {filt_re.view(), filt_im.view(), gfw.view(), gfb.view(), gew.view(), geb.view()};
  }

  void randomize(std::mt19937_64& rng) {
    for (std::size_t r = 1; r < id_table.rows(); ++r) {
      std::normal_distribution<double> nd;
      for (auto& v : id_table.row(r)) v = nd(rng);
    }
    for (auto* m : {&shift, &proj, &router, &raw_w, &raw_b, &filt_re, &filt_im, &gfw, &gfb, &gew, &geb}) {
      randn(*m, rng, 0.5);
    }
  }
};

TextEmbeddingStore random_store(std::size_t items, std::size_t dim, std::mt19937_64& rng) {
  Matrix<float> t(items + 1, dim);
  std::normal_distribution<float> nd;
  for (std::size_t r = 1; r <= items; ++r) {
    for (auto& v : t.row(r)) v = nd(rng);
  }
  return TextEmbeddingStore(std::move(t));
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Real signal whose half spectrum is `half` (DC and Nyquist imaginary parts
// dropped), evaluated by the inverse DFT sum.
std::vector<double> inverse_from_half(const std::vector<std::complex<double>>& half, std::size_t n) {
  std::vector<std::complex<double>> full(n);
  for (std::size_t k = 0; k < n; ++k) full[k] = k <= n / 2 ? half[k] : std::conj(half[n - k]);
  full[0].imag(0.0);
  if (n % 2 == 0) full[n / 2].imag(0.0);
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::complex<double> s;
    for (std::size_t k = 0; k < n; ++k) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>((j * k) % n) / static_cast<double>(n);
      s += full[k] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[j] = s.real() / static_cast<double>(n);
  }
  return out;
}

std::vector<std::complex<double>> dft_sum(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>((j * k) % n) / static_cast<double>(n);
      out[k] += x[j] * std::complex<double>(std::cos(a), std::sin(a));
    }
  }
  return out;
}

}  // namespace

TEST(Modulation, SingleIdentityExpertReturnsInput) {
  OwnedFusion f(4, 3, 3, 3, 1);
  for (std::size_t i = 0; i < 3; ++i) f.proj(i, i) = 1.0;
  Matrix<double> x{{0, 0, 0}, {1, 2, 3}, {-1, 0.5, 4}, {2, 2, -2}};
  const auto out = modulate_text<double>(x.view(), f.layer.experts, false);
  EXPECT_LT(max_abs_diff<double>(out, x), 1e-15);
}

TEST(Modulation, RouterWeightsSumToOne) {
  std::mt19937_64 rng(1);
  OwnedFusion f(6, 4, 5, 3, 4);
  f.randomize(rng);
  Matrix<double> x(6, 5);
  randn(x, rng);
  ModulationCache<double> cache;
  modulate_text<double>(x.view(), f.layer.experts, false, nullptr, {}, &cache);
  for (std::size_t j = 0; j < 6; ++j) {
    double s = 0;
    for (double v : cache.gates.row(j)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Modulation, TwoExpertHandCase) {
  OwnedFusion f(1, 1, 2, 2, 2);
  // shifts s_k for the single position
  f.shift(0, 0) = 0.5, f.shift(0, 1) = -1.0;
  f.shift(1, 0) = 0.0, f.shift(1, 1) = 2.0;
  // W^P_0 = [[1,2],[0,1]], W^P_1 = [[0,1],[1,0]]
  f.proj(0, 0) = 1, f.proj(0, 1) = 2, f.proj(1, 0) = 0, f.proj(1, 1) = 1;
  f.proj(2, 0) = 0, f.proj(2, 1) = 1, f.proj(3, 0) = 1, f.proj(3, 1) = 0;
  // W^G = [[1,-1],[0.5,0.25]]
  f.router(0, 0) = 1, f.router(0, 1) = -1, f.router(1, 0) = 0.5, f.router(1, 1) = 0.25;
  Matrix<double> x{{1.0, 2.0}};
  const auto out = modulate_text<double>(x.view(), f.layer.experts, false);

  const double z0 = 1.0 * 1 + 2.0 * 0.5, z1 = 1.0 * -1 + 2.0 * 0.25;
  const double g0 = std::exp(z0) / (std::exp(z0) + std::exp(z1)), g1 = 1.0 - g0;
  // expert 0: (x + s_0) W^P_0 = [1.5, 1] W^P_0 = [1.5, 4]
  // expert 1: (x + s_1) W^P_1 = [1, 4] W^P_1 = [4, 1]
  EXPECT_NEAR(out(0, 0), g0 * 1.5 + g1 * 4.0, 1e-12);
  EXPECT_NEAR(out(0, 1), g0 * 4.0 + g1 * 1.0, 1e-12);
}

TEST(Modulation, PadRowsStayZeroAndNoiseOnlyWhenTraining) {
  std::mt19937_64 rng(2);
  OwnedFusion f(4, 3, 3, 2, 3);
  f.randomize(rng);
  f.layer.experts.noise_std = 0.5;
  Matrix<double> x(4, 3);
  randn(x, rng);
  std::vector<std::uint8_t> valid{0, 1, 1, 1};
  const auto eval1 = modulate_text<double>(x.view(), f.layer.experts, false, &rng, valid);
  const auto eval2 = modulate_text<double>(x.view(), f.layer.experts, false, &rng, valid);
  EXPECT_EQ(eval1, eval2);
  for (double v : eval1.row(0)) EXPECT_EQ(v, 0.0);
  const auto train = modulate_text<double>(x.view(), f.layer.experts, true, &rng, valid);
  EXPECT_GT(max_abs_diff<double>(train, eval1), 1e-6);
  for (double v : train.row(0)) EXPECT_EQ(v, 0.0);
}

TEST(MutualFilter, MatchesNaiveConvolution16x8) {
  std::mt19937_64 rng(3);
  Matrix<double> t(16, 8), e(16, 8);
  randn(t, rng);
  randn(e, rng);
  EXPECT_LT(max_abs_diff<double>(mutual_filter(t, e), circular_convolve_naive(t, e)), 1e-6);
}

TEST(MutualFilter, TextAtOnePositionReachesEveryPosition) {
  // Convolution mixes across the sequence; the position-wise product does not.
  std::mt19937_64 rng(4);
  Matrix<double> t(8, 3), e(8, 3);
  randn(t, rng);
  randn(e, rng);
  const auto base = mutual_filter(t, e);
  t(2, 1) += 1.0;
  const auto moved = mutual_filter(t, e);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_GT(std::abs(moved(j, 1) - base(j, 1)), 1e-9) << "j=" << j;
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_NEAR(moved(j, 0), base(j, 0), 1e-12);
    EXPECT_NEAR(moved(j, 2), base(j, 2), 1e-12);
  }
}

TEST(MutualFilter, IsBilinear) {
  std::mt19937_64 rng(5);
  Matrix<double> t1(8, 2), t2(8, 2), e(8, 2);
  randn(t1, rng);
  randn(t2, rng);
  randn(e, rng);
  Matrix<double> mix(8, 2);
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = 2.0 * t1.data()[i] - 0.5 * t2.data()[i];
  const auto a = mutual_filter(t1, e), b = mutual_filter(t2, e), c = mutual_filter(mix, e);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c.data()[i], 2.0 * a.data()[i] - 0.5 * b.data()[i], 1e-12);
}

TEST(IdFilter, IdentityAndZeroFilters) {
  std::mt19937_64 rng(6);
  OwnedFusion f(8, 2, 3, 3, 1);
  Matrix<double> e(8, 3);
  randn(e, rng);
  FftPlan<double> plan(8);
  EXPECT_LT(max_abs_diff<double>(filter_ids<double>(plan, e.view(), f.layer.fusion), e), 1e-9);
  f.filt_re.set_zero();
  const auto zero = filter_ids<double>(plan, e.view(), f.layer.fusion);
  for (double v : zero.flat()) EXPECT_EQ(v, 0.0);
}

TEST(IdFilter, MatchesNaiveDftEvaluation) {
  std::mt19937_64 rng(7);
  const std::size_t n = 8, d = 3;
  OwnedFusion f(n, 2, d, d, 1);
  randn(f.filt_re, rng);
  randn(f.filt_im, rng);
  Matrix<double> e(n, d);
  randn(e, rng);
  FftPlan<double> plan(n);
  const auto got = filter_ids<double>(plan, e.view(), f.layer.fusion);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> col(n);
    for (std::size_t j = 0; j < n; ++j) col[j] = e(j, c);
    const auto spec = dft_sum(col);
    std::vector<std::complex<double>> half(n / 2 + 1);
    for (std::size_t k = 0; k <= n / 2; ++k) half[k] = std::complex<double>(f.filt_re(k, c), f.filt_im(k, c)) * spec[k];
    const auto ref = inverse_from_half(half, n);
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(got(j, c), ref[j], 1e-9);
  }
}

TEST(GatedCombine, ZeroGatesGiveSum) {
  std::mt19937_64 rng(8);
  OwnedFusion f(4, 2, 3, 3, 1);
  Matrix<double> a(4, 3), b(4, 3);
  randn(a, rng);
  randn(b, rng);
  const auto v = gated_combine<double>(a.view(), b.view(), f.layer.fusion);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(v.data()[i], a.data()[i] + b.data()[i], 1e-15);
}

TEST(GatedCombine, MultiplierBoundedByTwo) {
  OwnedFusion f(2, 2, 2, 2, 1);
  Matrix<double> x{{1, 1}, {-3, 2}};
  f.gfb(0, 0) = 1e3;
  for (double w : gate_multipliers<double>(x.view(), f.gfw.view(), f.gfb.view())) {
    EXPECT_LE(w, 2.0);
    EXPECT_NEAR(w, 2.0, 1e-12);
  }
}

TEST(GatedCombine, HandCase) {
  OwnedFusion f(1, 2, 2, 2, 1);
  f.gfw(0, 0) = 1.0;
  Matrix<double> fused{{1, 1}}, filtered{{0, 0}};
  const auto v = gated_combine<double>(fused.view(), filtered.view(), f.layer.fusion);
  EXPECT_NEAR(v(0, 0), 2.0 * sig(1.0), 1e-15);
  EXPECT_NEAR(v(0, 1), 1.4621, 1e-4);
}

TEST(FuseSequence, AllSwitchesOffIsProductPlusIds) {
  std::mt19937_64 rng(9);
  OwnedFusion f(4, 5, 3, 3, 2);
  f.randomize(rng);
  f.raw_w.set_zero();
  f.raw_b.set_zero();
  for (std::size_t i = 0; i < 3; ++i) f.raw_w(i, i) = 1.0;
  const auto store = random_store(5, 3, rng);
  FftPlan<double> plan(4);
  std::vector<std::size_t> ids{0, 2, 5, 1};
  const AblationSwitches off{false, false, false, false};
  const auto v = fuse_sequence<double>(ids, f.layer, store, off, plan, false);
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double t = ids[j] ? store.row(ids[j])[c] : 0.0;
      const double e = f.id_table(ids[j], c);
      EXPECT_NEAR(v(j, c), t * e + e, 1e-6);
    }
  }
}

TEST(FuseSequence, PadOnlySequenceIsZero) {
  std::mt19937_64 rng(10);
  OwnedFusion f(8, 5, 4, 3, 2);
  f.randomize(rng);
  const auto store = random_store(5, 4, rng);
  FftPlan<double> plan(8);
  std::vector<std::size_t> ids(8, 0);
  const auto v = fuse_sequence<double>(ids, f.layer, store, AblationSwitches{}, plan, false);
  for (double x : v.flat()) EXPECT_EQ(x, 0.0);
}

TEST(FuseSequence, RejectsUnknownIdAndWrongLength) {
  std::mt19937_64 rng(11);
  OwnedFusion f(4, 3, 2, 2, 1);
  const auto store = random_store(3, 2, rng);
  FftPlan<double> plan(4);
  std::vector<std::size_t> bad{0, 1, 2, 9};
  EXPECT_THROW(fuse_sequence<double>(bad, f.layer, store, AblationSwitches{}, plan, false), InvalidArgument);
  std::vector<std::size_t> shorter{1, 2};
  EXPECT_THROW(fuse_sequence<double>(shorter, f.layer, store, AblationSwitches{}, plan, false), InvalidArgument);
}

TEST(FuseSequence, MatchesStraightLineTranscription) {
  std::mt19937_64 rng(12);
  const std::size_t n = 8, dt = 3, d = 4, g = 2, items = 6;
  OwnedFusion f(n, items, dt, d, g);
  f.randomize(rng);
  const auto store = random_store(items, dt, rng);
  FftPlan<double> plan(n);
  std::vector<std::size_t> ids{0, 0, 3, 1, 6, 6, 2, 5};
  const auto got = fuse_sequence<double>(ids, f.layer, store, AblationSwitches{}, plan, false);

  // text modulation with softmax-routed experts
  std::vector<std::vector<double>> tm(n, std::vector<double>(d)), e(n, std::vector<double>(d));
  for (std::size_t j = 0; j < n; ++j) {
    if (ids[j] == 0) continue;
    for (std::size_t c = 0; c < d; ++c) e[j][c] = f.id_table(ids[j], c);
    const auto x = store.row(ids[j]);
    std::vector<double> z(g);
    double zs = 0;
    for (std::size_t k = 0; k < g; ++k) {
      for (std::size_t i = 0; i < dt; ++i) z[k] += x[i] * f.router(i, k);
    }
    const double zmax = *std::max_element(z.begin(), z.end());
    for (auto& v : z) zs += (v = std::exp(v - zmax));
    for (std::size_t k = 0; k < g; ++k) {
      for (std::size_t c = 0; c < d; ++c) {
        double u = 0;
        for (std::size_t i = 0; i < dt; ++i) u += (x[i] + f.shift(k * n + j, i)) * f.proj(k * dt + i, c);
        tm[j][c] += z[k] / zs * u;
      }
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    // circular convolution sum
    std::vector<double> fj(d), ej(d);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t c = 0; c < d; ++c) fj[c] += tm[k][c] * e[(j + n - k) % n][c];
    }
    // filtered ids via the DFT sums
    for (std::size_t c = 0; c < d; ++c) {
      std::vector<double> col(n);
      for (std::size_t r = 0; r < n; ++r) col[r] = e[r][c];
      const auto spec = dft_sum(col);
      std::vector<std::complex<double>> half(n / 2 + 1);
      for (std::size_t k = 0; k <= n / 2; ++k) half[k] = std::complex<double>(f.filt_re(k, c), f.filt_im(k, c)) * spec[k];
      ej[c] = inverse_from_half(half, n)[j];
    }
    double af = f.gfb(0, 0), ae = f.geb(0, 0);
    for (std::size_t c = 0; c < d; ++c) {
      af += f.gfw(0, c) * fj[c];
      ae += f.gew(0, c) * ej[c];
    }
    for (std::size_t c = 0; c < d; ++c) {
      EXPECT_NEAR(got(j, c), 2 * sig(af) * fj[c] + 2 * sig(ae) * ej[c], 1e-9) << "j=" << j << " c=" << c;
    }
  }
}

TEST(TextEmbeddingStore, EncodeDecodeAndValidation) {
  std::mt19937_64 rng(13);
  const auto store = random_store(4, 3, rng);
  const auto back = TextEmbeddingStore::decode(store.encode());
  EXPECT_EQ(back.table(), store.table());
  EXPECT_THROW(TextEmbeddingStore::decode("TEDEMBX" + store.encode().substr(7)), IoError);
  EXPECT_THROW(TextEmbeddingStore::decode(store.encode().substr(0, 20)), IoError);
  Matrix<float> bad(2, 2);
  bad(0, 0) = 1.0f;
  EXPECT_THROW(TextEmbeddingStore{bad}, InvalidArgument);
}
