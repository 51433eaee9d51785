#pragma once

// Randomised oracle suites: the convolution theorem against the brute-force
// circular convolution, the past/future split, FFT accuracy, and gradient
// contracts for every differentiable block.

#include <deque>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tedrec/encoder.hpp"
#include "tedrec/fusion.hpp"
#include "tedrec/gradcheck.hpp"
#include "tedrec/loss.hpp"
#include "tedrec/spectral.hpp"

namespace tedrec {

struct SuiteResult {
  std::string name;
  std::size_t trials = 0;
  double worst_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  std::string worst_case;  // description of the instance with the worst error
};

struct VerifyOptions {
  std::uint64_t seed = 1;
  std::size_t trials = 100;
  bool inject_fault = false;
};

struct VerifyReport {
  std::vector<SuiteResult> suites;
  bool passed = true;
  bool vacuous = false;  // zero trials requested

  const SuiteResult& suite(const std::string& name) const {
    for (const auto& s : suites) {
      if (s.name == name) return s;
    }
    throw InvalidArgument("no verification suite named " + name);
  }
};

namespace verify_detail {

inline Matrix<double> random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  Matrix<double> m(rows, cols);
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& v : m.flat()) v = nd(rng);
  return m;
}

inline std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline FftPlan<double> make_plan(std::size_t n, bool fault) {
  FftPlan<double> plan(n);
  if (fault) plan.inject_twiddle_fault();
  return plan;
}

// Parameter matrices with stable addresses, plus matching gradient buffers.
class Bag {
 public:
  MatrixView<double> add(const std::string& name, Matrix<double> init) {
    names_.push_back(name);
    values_.push_back(std::move(init));
    grads_.emplace_back(values_.back().rows(), values_.back().cols());
    return values_.back().view();
  }
  MatrixView<double> grad_of(const MatrixView<double>& v) {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (values_[i].data() == v.data) return grads_[i].view();
    }
    throw InvalidArgument("Bag: unknown view");
  }
  void zero_grads() {
    for (auto& g : grads_) g.set_zero();
  }
  std::vector<GradVariable> variables() {
    std::vector<GradVariable> out;
    for (std::size_t i = 0; i < values_.size(); ++i) out.push_back({names_[i], &values_[i]});
    return out;
  }
  std::vector<Matrix<double>> grads() const { return {grads_.begin(), grads_.end()}; }
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<std::string> names_;
  std::deque<Matrix<double>> values_;
  std::deque<Matrix<double>> grads_;
};

inline ModulationExperts<double> add_experts(Bag& bag, std::size_t g, std::size_t n, std::size_t dt, std::size_t d,
                                             std::mt19937_64& rng) {
  ModulationExperts<double> ex;
  ex.experts = g;
  ex.positions = n;
  ex.modulation = bag.add("modulation.shift", random_matrix(g * n, dt, rng, 0.5));
  ex.projections = bag.add("modulation.projection", random_matrix(g * dt, d, rng, 0.5));
  ex.router = bag.add("modulation.router", random_matrix(dt, g, rng, 0.5));
  return ex;
}

inline ModulationExperts<double> grad_experts(Bag& bag, const ModulationExperts<double>& ex) {
  ModulationExperts<double> g = ex;
  g.modulation = bag.grad_of(ex.modulation);
  g.projections = bag.grad_of(ex.projections);
  g.router = bag.grad_of(ex.router);
  return g;
}

inline FusionParams<double> add_fusion(Bag& bag, std::size_t n, std::size_t d, std::mt19937_64& rng) {
  FusionParams<double> p;
  p.filter_re = bag.add("fusion.filter_re", random_matrix(n / 2 + 1, d, rng));
  p.filter_im = bag.add("fusion.filter_im", random_matrix(n / 2 + 1, d, rng));
  p.gate_f_weight = bag.add("fusion.gate_f.weight", random_matrix(1, d, rng, 0.5));
  p.gate_f_bias = bag.add("fusion.gate_f.bias", random_matrix(1, 1, rng, 0.5));
  p.gate_e_weight = bag.add("fusion.gate_e.weight", random_matrix(1, d, rng, 0.5));
  p.gate_e_bias = bag.add("fusion.gate_e.bias", random_matrix(1, 1, rng, 0.5));
  return p;
}

inline FusionParams<double> grad_fusion(Bag& bag, const FusionParams<double>& p) {
  return {bag.grad_of(p.filter_re),     bag.grad_of(p.filter_im),   bag.grad_of(p.gate_f_weight),
          bag.grad_of(p.gate_f_bias),   bag.grad_of(p.gate_e_weight), bag.grad_of(p.gate_e_bias)};
}

inline EncoderLayerParams<double> add_layer(Bag& bag, std::size_t d, std::size_t dff, std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  EncoderLayerParams<double> p;
  p.wq = bag.add("attn.wq", random_matrix(d, d, rng, s));
  p.bq = bag.add("attn.bq", random_matrix(1, d, rng, 0.1));
  p.wk = bag.add("attn.wk", random_matrix(d, d, rng, s));
  p.bk = bag.add("attn.bk", random_matrix(1, d, rng, 0.1));
  p.wv = bag.add("attn.wv", random_matrix(d, d, rng, s));
  p.bv = bag.add("attn.bv", random_matrix(1, d, rng, 0.1));
  p.wo = bag.add("attn.wo", random_matrix(d, d, rng, s));
  p.bo = bag.add("attn.bo", random_matrix(1, d, rng, 0.1));
  Matrix<double> gain = random_matrix(1, d, rng, 0.1);
  for (auto& v : gain.flat()) v += 1.0;
  p.ln1_gain = bag.add("ln1.gain", gain);
  p.ln1_bias = bag.add("ln1.bias", random_matrix(1, d, rng, 0.1));
  p.w1 = bag.add("ffn.w1", random_matrix(d, dff, rng, s));
  p.b1 = bag.add("ffn.b1", random_matrix(1, dff, rng, 0.1));
  p.w2 = bag.add("ffn.w2", random_matrix(dff, d, rng, 1.0 / std::sqrt(static_cast<double>(dff))));
  p.b2 = bag.add("ffn.b2", random_matrix(1, d, rng, 0.1));
  p.ln2_gain = bag.add("ln2.gain", gain);
  p.ln2_bias = bag.add("ln2.bias", random_matrix(1, d, rng, 0.1));
  return p;
}

inline EncoderLayerParams<double> grad_layer(Bag& bag, const EncoderLayerParams<double>& p) {
  EncoderLayerParams<double> g;
  g.wq = bag.grad_of(p.wq);
  g.bq = bag.grad_of(p.bq);
  g.wk = bag.grad_of(p.wk);
  g.bk = bag.grad_of(p.bk);
  g.wv = bag.grad_of(p.wv);
  g.bv = bag.grad_of(p.bv);
  g.wo = bag.grad_of(p.wo);
  g.bo = bag.grad_of(p.bo);
  g.ln1_gain = bag.grad_of(p.ln1_gain);
  g.ln1_bias = bag.grad_of(p.ln1_bias);
  g.w1 = bag.grad_of(p.w1);
  g.b1 = bag.grad_of(p.b1);
  g.w2 = bag.grad_of(p.w2);
  g.b2 = bag.grad_of(p.b2);
  g.ln2_gain = bag.grad_of(p.ln2_gain);
  g.ln2_bias = bag.grad_of(p.ln2_bias);
  return g;
}

// Adds the returned input gradient into the gradient slot of `input`.
inline void add_input_grad(Bag& bag, const MatrixView<double>& input, const Matrix<double>& g) {
  auto dst = bag.grad_of(input);
  for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data()[i];
}

}  // namespace verify_detail

// ---------------------------------------------------------------------------
// Gradient contracts for individual blocks on random instances (n <= 8, d <= 8).

inline GradCheckReport gradcheck_modulation(std::mt19937_64& rng) {
  using namespace verify_detail;
  const std::size_t n = uniform(rng, 1, 8), d = uniform(rng, 1, 8), dt = uniform(rng, 1, 6), g = uniform(rng, 1, 4);
  Bag bag;
  auto x = bag.add("text", random_matrix(n, dt, rng));
  auto ex = add_experts(bag, g, n, dt, d, rng);
  std::vector<std::uint8_t> valid(n, 1);
  const std::size_t pads = uniform(rng, 0, n - 1);
  for (std::size_t j = 0; j < pads; ++j) valid[j] = 0;
  ModulationCache<double> cache;
  auto forward = [&] { return modulate_text<double>(x, ex, false, nullptr, valid, &cache); };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    add_input_grad(bag, x, modulate_text_backward<double>(cache, ex, up.view(), grad_experts(bag, ex)));
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

inline GradCheckReport gradcheck_mutual_filter(std::mt19937_64& rng, bool fault = false) {
  using namespace verify_detail;
  const std::size_t n = uniform(rng, 1, 8), d = uniform(rng, 1, 8);
  const auto plan = make_plan(n, fault);
  Bag bag;
  auto t = bag.add("text", random_matrix(n, d, rng));
  auto e = bag.add("ids", random_matrix(n, d, rng));
  MutualFilterCache<double> cache;
  auto forward = [&] { return mutual_filter<double>(plan, t, e, &cache); };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    auto [dt, de] = mutual_filter_backward<double>(plan, cache, up.view());
    add_input_grad(bag, t, dt);
    add_input_grad(bag, e, de);
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

inline GradCheckReport gradcheck_filter_ids(std::mt19937_64& rng, bool fault = false) {
  using namespace verify_detail;
  const std::size_t n = uniform(rng, 1, 8), d = uniform(rng, 1, 8);
  const auto plan = make_plan(n, fault);
  Bag bag;
  auto e = bag.add("ids", random_matrix(n, d, rng));
  auto p = add_fusion(bag, n, d, rng);
  IdFilterCache<double> cache;
  auto forward = [&] { return filter_ids<double>(plan, e, p, &cache); };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    add_input_grad(bag, e, filter_ids_backward<double>(plan, cache, p, up.view(), grad_fusion(bag, p)));
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

inline GradCheckReport gradcheck_gated_combine(std::mt19937_64& rng) {
  using namespace verify_detail;
  const std::size_t n = uniform(rng, 1, 8), d = uniform(rng, 1, 8);
  Bag bag;
  auto f = bag.add("fused", random_matrix(n, d, rng));
  auto e = bag.add("filtered", random_matrix(n, d, rng));
  auto p = add_fusion(bag, n, d, rng);
  GateCache<double> cache;
  auto forward = [&] { return gated_combine<double>(f, e, p, &cache); };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    auto [df, de] = gated_combine_backward<double>(cache, p, up.view(), grad_fusion(bag, p));
    add_input_grad(bag, f, df);
    add_input_grad(bag, e, de);
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

inline GradCheckReport gradcheck_attention(std::mt19937_64& rng) {
  using namespace verify_detail;
  const std::size_t heads = uniform(rng, 1, 2), n = uniform(rng, 1, 8), d = heads * uniform(rng, 1, 4);
  const std::size_t first_valid = uniform(rng, 0, n - 1);
  Bag bag;
  auto x = bag.add("input", random_matrix(n, d, rng));
  auto p = add_layer(bag, d, 2, rng);
  AttentionCache<double> cache;
  auto forward = [&] { return attention_block<double>(x, first_valid, p, heads, 0.0, false, nullptr, &cache); };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    add_input_grad(bag, x, attention_block_backward<double>(cache, p, heads, up.view(), grad_layer(bag, p)));
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

inline GradCheckReport gradcheck_ffn(std::mt19937_64& rng) {
  using namespace verify_detail;
  const std::size_t n = uniform(rng, 1, 8), d = uniform(rng, 1, 8), dff = uniform(rng, 1, 8);
  Bag bag;
  auto x = bag.add("input", random_matrix(n, d, rng));
  auto p = add_layer(bag, d, dff, rng);
  FfnCache<double> cache;
  auto forward = [&] { return ffn_block<double>(x, p, 0.0, false, nullptr, &cache); };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    add_input_grad(bag, x, ffn_block_backward<double>(cache, p, up.view(), grad_layer(bag, p)));
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

inline GradCheckReport gradcheck_layer_norm(std::mt19937_64& rng) {
  using namespace verify_detail;
  const std::size_t n = uniform(rng, 1, 8), d = uniform(rng, 2, 8);
  Bag bag;
  auto x = bag.add("input", random_matrix(n, d, rng));
  auto gain = bag.add("gain", random_matrix(1, d, rng));
  auto bias = bag.add("bias", random_matrix(1, d, rng));
  LayerNormCache<double> cache;
  auto forward = [&] { return layer_norm<double>(x, gain, bias, 1e-12, &cache); };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    add_input_grad(bag, x, layer_norm_backward<double>(cache, gain, up.view(), bag.grad_of(gain), bag.grad_of(bias)));
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

inline GradCheckReport gradcheck_cross_entropy(std::mt19937_64& rng) {
  using namespace verify_detail;
  const std::size_t items = uniform(rng, 1, 12), d = uniform(rng, 1, 8);
  const std::size_t target = uniform(rng, 1, items);
  const LossConfig cfg{std::uniform_real_distribution<double>(0.5, 2.0)(rng)};
  Bag bag;
  auto repr = bag.add("seq_repr", random_matrix(1, d, rng));
  auto table = bag.add("items", random_matrix(items, d, rng));
  auto forward = [&] {
    Matrix<double> y(1, 1);
    std::vector<double> gr(d);
    Matrix<double> gi(items, d);
    y(0, 0) = cross_entropy_accumulate<double>(repr.row(0), table, target, cfg, gr, gi.view());
    return y;
  };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    cross_entropy_accumulate<double>(repr.row(0), table, target, cfg, bag.grad_of(repr).row(0), bag.grad_of(table), up(0, 0));
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

// modulate -> mutual_filter -> filter_ids -> gate on a padded id sequence.
inline GradCheckReport gradcheck_fusion(std::mt19937_64& rng, bool fault = false) {
  using namespace verify_detail;
  const std::size_t n = std::size_t{1} << uniform(rng, 0, 3), d = uniform(rng, 1, 4), dt = uniform(rng, 1, 5);
  const std::size_t items = uniform(rng, 1, 6), g = uniform(rng, 1, 3);
  const auto plan = make_plan(n, fault);
  Matrix<float> text(items + 1, dt);
  std::normal_distribution<float> nd;
  for (std::size_t r = 1; r <= items; ++r) {
    for (auto& v : text.row(r)) v = nd(rng);
  }
  const TextEmbeddingStore store(std::move(text));
  std::vector<std::size_t> ids(n, 0);
  const std::size_t length = uniform(rng, 1, n);
  for (std::size_t j = n - length; j < n; ++j) ids[j] = uniform(rng, 1, items);

  Bag bag;
  FusionLayer<double> layer;
  layer.id_table = bag.add("item_embedding", random_matrix(items + 1, d, rng));
  layer.experts = add_experts(bag, g, n, dt, d, rng);
  layer.fusion = add_fusion(bag, n, d, rng);
  FusionLayer<double> grads;
  grads.id_table = bag.grad_of(layer.id_table);
  grads.experts = grad_experts(bag, layer.experts);
  grads.fusion = grad_fusion(bag, layer.fusion);
  const AblationSwitches sw;
  FusionCache<double> cache;
  auto forward = [&] { return fuse_sequence<double>(ids, layer, store, sw, plan, false, nullptr, &cache); };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    fuse_sequence_backward<double>(cache, layer, sw, plan, up.view(), grads);
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

inline GradCheckReport gradcheck_encoder(std::mt19937_64& rng) {
  using namespace verify_detail;
  const std::size_t n = uniform(rng, 1, 8), heads = uniform(rng, 1, 2), d = heads * uniform(rng, 1, 4);
  const std::size_t layers = uniform(rng, 1, 2), length = uniform(rng, 1, n);
  Bag bag;
  auto v = bag.add("input", random_matrix(n, d, rng));
  EncoderParams<double> p;
  p.positional = bag.add("positional", random_matrix(n, d, rng, 0.5));
  p.heads = heads;
  p.ln_eps = 1e-12;
  p.pre_norm = uniform(rng, 0, 1) == 1;
  for (std::size_t l = 0; l < layers; ++l) p.layers.push_back(add_layer(bag, d, uniform(rng, 1, 8), rng));
  EncoderParams<double> g = p;
  g.positional = bag.grad_of(p.positional);
  for (std::size_t l = 0; l < layers; ++l) g.layers[l] = grad_layer(bag, p.layers[l]);
  EncoderCache<double> cache;
  auto forward = [&] {
    auto h = encode_sequence<double>(v, length, p, false, nullptr, &cache);
    return Matrix<double>(1, d, h);
  };
  auto backward = [&](const Matrix<double>& up) {
    bag.zero_grads();
    add_input_grad(bag, v, encode_sequence_backward<double>(cache, p, up.row(0), g));
    return bag.grads();
  };
  return gradient_contract(bag.variables(), forward, backward, rng());
}

// ---------------------------------------------------------------------------
// Oracle suites.

inline SuiteResult suite_convolution(std::mt19937_64& rng, std::size_t trials, bool fault) {
  using namespace verify_detail;
  SuiteResult r{"spectral_convolution", trials, 0.0, 1e-8, true, ""};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = uniform(rng, 1, 64), d = uniform(rng, 1, 16);
    const auto plan = make_plan(n, fault);
    const auto a = random_matrix(n, d, rng), b = random_matrix(n, d, rng);
    const auto spectral = irfft(plan, hadamard(rfft<double>(plan, a), rfft<double>(plan, b)));
    const double err = max_abs_diff<double>(spectral, circular_convolve_naive(a, b));
    if (!(err <= r.worst_error)) {
      r.worst_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      r.worst_case = "n=" + std::to_string(n) + " d=" + std::to_string(d);
    }
  }
  r.passed = r.worst_error < r.tolerance;
  return r;
}

// past(j) + future(j) against both the brute-force convolution (tight) and
// the spectral mutual filter (FFT rounding).
inline std::vector<SuiteResult> suite_past_future(std::mt19937_64& rng, std::size_t trials, bool fault) {
  using namespace verify_detail;
  SuiteResult exact{"past_future_split", trials, 0.0, 1e-10, true, ""};
  SuiteResult spectral{"past_future_vs_mutual_filter", trials, 0.0, 1e-8, true, ""};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = uniform(rng, 1, 32), d = uniform(rng, 1, 8);
    const auto plan = make_plan(n, fault);
    const auto a = random_matrix(n, d, rng), b = random_matrix(n, d, rng);
    const auto conv = circular_convolve_naive(a, b);
    const auto fused = mutual_filter<double>(plan, a, b);
    for (std::size_t j = 0; j < n; ++j) {
      const auto pf = past_future_decompose(a, b, j);
      for (std::size_t c = 0; c < d; ++c) {
        const double sum = pf.past[c] + pf.future[c];
        const double e1 = std::abs(sum - conv(j, c)), e2 = std::abs(sum - fused(j, c));
        if (!(e1 <= exact.worst_error)) {
          exact.worst_error = std::isfinite(e1) ? e1 : std::numeric_limits<double>::infinity();
          exact.worst_case = "n=" + std::to_string(n) + " j=" + std::to_string(j);
        }
        if (!(e2 <= spectral.worst_error)) {
          spectral.worst_error = std::isfinite(e2) ? e2 : std::numeric_limits<double>::infinity();
          spectral.worst_case = "n=" + std::to_string(n) + " j=" + std::to_string(j);
        }
      }
    }
  }
  exact.passed = exact.worst_error < exact.tolerance;
  spectral.passed = spectral.worst_error < spectral.tolerance;
  return {exact, spectral};
}

inline std::vector<SuiteResult> suite_fft(std::mt19937_64& rng, std::size_t trials, bool fault) {
  using namespace verify_detail;
  SuiteResult vs_naive{"fft_vs_naive_dft", trials, 0.0, 1e-9, true, ""};
  SuiteResult round_trip{"fft_round_trip", trials, 0.0, 1e-9, true, ""};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = uniform(rng, 1, 64), d = uniform(rng, 1, 8);
    const auto plan = make_plan(n, fault);
    const auto x = random_matrix(n, d, rng);
    const auto s = rfft<double>(plan, x);
    std::vector<double> column(n);
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t j = 0; j < n; ++j) column[j] = x(j, c);
      const auto ref = dft_naive(column);
      for (std::size_t k = 0; k < s.bins(); ++k) {
        const double err = std::abs(s.at(k, c) - ref[k]);
        if (!(err <= vs_naive.worst_error)) {
          vs_naive.worst_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
          vs_naive.worst_case = "n=" + std::to_string(n) + " bin=" + std::to_string(k);
        }
      }
    }
    const double rt = max_abs_diff<double>(irfft(plan, s), x);
    if (!(rt <= round_trip.worst_error)) {
      round_trip.worst_error = std::isfinite(rt) ? rt : std::numeric_limits<double>::infinity();
      round_trip.worst_case = "n=" + std::to_string(n);
    }
  }
  vs_naive.passed = vs_naive.worst_error < vs_naive.tolerance;
  round_trip.passed = round_trip.worst_error < round_trip.tolerance;
  return {vs_naive, round_trip};
}

inline SuiteResult suite_gradient(const std::string& name, std::size_t trials,
                                  const std::function<GradCheckReport()>& check) {
  SuiteResult r{"gradient_" + name, trials, 0.0, 1e-6, true, ""};
  for (std::size_t t = 0; t < trials; ++t) {
    GradCheckReport rep;
    try {
      rep = check();
    } catch (const NumericError& e) {
      rep.max_relative_error = std::numeric_limits<double>::infinity();
      rep.worst_variable = e.what();
    }
    if (!(rep.max_relative_error <= r.worst_error)) {
      r.worst_error = rep.max_relative_error;
      r.worst_case = rep.worst_variable + "[" + std::to_string(rep.worst_index) + "]";
    }
  }
  r.passed = r.worst_error < r.tolerance;
  return r;
}

// Names of the gradient suites, in report order.
inline const std::vector<std::string>& gradient_suite_names() {
  static const std::vector<std::string> names{"modulation", "mutual_filter", "filter_ids",    "gated_combine",
                                              "attention",  "ffn",           "layer_norm",    "cross_entropy",
                                              "fusion",     "encoder"};
  return names;
}

inline VerifyReport run_verification(const VerifyOptions& opt) {
  VerifyReport report;
  report.vacuous = opt.trials == 0;
  std::mt19937_64 rng(opt.seed);
  const bool f = opt.inject_fault;
  report.suites.push_back(suite_convolution(rng, opt.trials, f));
  for (auto& s : suite_past_future(rng, opt.trials, f)) report.suites.push_back(s);
  for (auto& s : suite_fft(rng, opt.trials, f)) report.suites.push_back(s);
  const std::vector<std::function<GradCheckReport()>> checks{
      [&] { return gradcheck_modulation(rng); },     [&] { return gradcheck_mutual_filter(rng, f); },
      [&] { return gradcheck_filter_ids(rng, f); },  [&] { return gradcheck_gated_combine(rng); },
      [&] { return gradcheck_attention(rng); },      [&] { return gradcheck_ffn(rng); },
      [&] { return gradcheck_layer_norm(rng); },     [&] { return gradcheck_cross_entropy(rng); },
      [&] { return gradcheck_fusion(rng, f); },      [&] { return gradcheck_encoder(rng); }};
  for (std::size_t i = 0; i < checks.size(); ++i) {
    report.suites.push_back(suite_gradient(gradient_suite_names()[i], opt.trials, checks[i]));
  }
  for (const auto& s : report.suites) report.passed = report.passed && s.passed;
  return report;
}

}  // namespace tedrec
