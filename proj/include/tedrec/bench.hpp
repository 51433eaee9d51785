#pragma once

#include <chrono>
#include <cmath>
#include <random>
#include <vector>

#include "tedrec/fusion.hpp"
#include "tedrec/spectral.hpp"

namespace tedrec {

struct Timing {
  double mean_seconds = 0.0;
  double stddev_seconds = 0.0;
};

struct BenchRow {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t reps = 0;
  Timing rfft;
  Timing mutual_filter;
};

template <class F>
Timing time_repeated(std::size_t reps, F&& f) {
  f();  // warm-up
  std::vector<double> samples;
  samples.reserve(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    samples.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  Timing t;
  for (double s : samples) t.mean_seconds += s;
  t.mean_seconds /= static_cast<double>(std::max<std::size_t>(1, reps));
  for (double s : samples) t.stddev_seconds += (s - t.mean_seconds) * (s - t.mean_seconds);
  t.stddev_seconds = reps > 1 ? std::sqrt(t.stddev_seconds / static_cast<double>(reps - 1)) : 0.0;
  return t;
}

// Times rfft of an n x d matrix and the full mutual filter
// (two forward transforms, the product, one inverse) per n.
inline std::vector<BenchRow> bench_spectral(const std::vector<std::size_t>& ns, std::size_t d, std::size_t reps,
                                            std::uint64_t seed = 7) {
  if (d == 0) throw InvalidArgument("bench: d must be positive");
  std::vector<BenchRow> rows;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  for (auto n : ns) {
    FftPlan<double> plan(n);
    Matrix<double> a(n, d), b(n, d);
    for (auto& v : a.flat()) v = nd(rng);
    for (auto& v : b.flat()) v = nd(rng);
    BenchRow row{n, d, reps, {}, {}};
    double sink = 0.0;
    row.rfft = time_repeated(reps, [&] { sink += rfft<double>(plan, a).re(0, 0); });
    row.mutual_filter = time_repeated(reps, [&] { sink += mutual_filter<double>(plan, a.view(), b.view())(0, 0); });
    if (!std::isfinite(sink)) throw NumericError("bench: non-finite result");
    rows.push_back(row);
  }
  return rows;
}

}  // namespace tedrec
