#pragma once

// Causal Transformer behaviour encoder over right-aligned sequences.
// Positions [first_valid, n) are real; earlier positions are padding and are
// never attended to.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "tedrec/loss.hpp"
#include "tedrec/tensor.hpp"

namespace tedrec {

template <class T>
struct EncoderLayerParams {
  MatrixView<T> wq, bq, wk, bk, wv, bv, wo, bo;  // d x d and 1 x d
  MatrixView<T> ln1_gain, ln1_bias;              // 1 x d
  MatrixView<T> w1, b1;                          // d x d_ff, 1 x d_ff
  MatrixView<T> w2, b2;                          // d_ff x d, 1 x d
  MatrixView<T> ln2_gain, ln2_bias;              // 1 x d
};

template <class T>
struct EncoderParams {
  MatrixView<T> positional;  // n x d
  std::vector<EncoderLayerParams<T>> layers;
  std::size_t heads = 1;
  double ln_eps = 1e-12;
  double dropout = 0.0;
  bool pre_norm = false;
};

// Inverted dropout on a whole matrix; returns the scale mask (empty when inactive).
template <class T>
std::vector<T> apply_dropout(MatrixView<T> m, double rate, bool training, std::mt19937_64* rng) {
  if (!training || rate <= 0.0 || rng == nullptr) return {};
  std::vector<T> mask(m.size());
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < m.size(); ++i) {
    mask[i] = keep(*rng) ? scale : T{};
    m.data[i] *= mask[i];
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Layer norm, per row.

template <class T>
struct LayerNormCache {
  Matrix<T> normalized;
  std::vector<T> inv_std;
};

template <class T>
Matrix<T> layer_norm(MatrixView<const T> x, MatrixView<const T> gain, MatrixView<const T> bias, double eps,
                     LayerNormCache<T>* cache = nullptr) {
  const std::size_t n = x.rows, d = x.cols;
  Matrix<T> y(n, d), xhat(n, d);
  std::vector<T> inv_std(n);
  for (std::size_t j = 0; j < n; ++j) {
    auto r = x.row(j);
    T mean{};
    for (T v : r) mean += v;
    mean /= static_cast<T>(d);
    T var{};
    for (T v : r) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    inv_std[j] = T{1} / std::sqrt(var + static_cast<T>(eps));
    for (std::size_t c = 0; c < d; ++c) {
      xhat(j, c) = (r[c] - mean) * inv_std[j];
      y(j, c) = xhat(j, c) * gain(0, c) + bias(0, c);
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <class T>
Matrix<T> layer_norm_backward(const LayerNormCache<T>& c, MatrixView<const T> gain, MatrixView<const T> grad_out,
                              MatrixView<T> grad_gain, MatrixView<T> grad_bias) {
  const std::size_t n = grad_out.rows, d = grad_out.cols;
  Matrix<T> dx(n, d);
  std::vector<T> dxhat(d);
  for (std::size_t j = 0; j < n; ++j) {
    auto dy = grad_out.row(j);
    auto xh = c.normalized.row(j);
    T mean_dxhat{}, mean_dxhat_xhat{};
    for (std::size_t i = 0; i < d; ++i) {
      grad_gain(0, i) += dy[i] * xh[i];
      grad_bias(0, i) += dy[i];
      dxhat[i] = dy[i] * gain(0, i);
      mean_dxhat += dxhat[i];
      mean_dxhat_xhat += dxhat[i] * xh[i];
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    for (std::size_t i = 0; i < d; ++i) dx(j, i) = c.inv_std[j] * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Causal multi-head self-attention (pre-residual output).

template <class T>
struct AttentionCache {
  Matrix<T> input;
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> probs;         // per head, n x n, after softmax
  std::vector<std::vector<T>> dropped;  // per head dropout scale (empty if none)
  Matrix<T> context;                    // n x d, concatenated heads
  std::size_t first_valid = 0;
};

template <class T>
Matrix<T> attention_block(MatrixView<const T> x, std::size_t first_valid, const EncoderLayerParams<T>& p,
                          std::size_t heads, double dropout, bool training, std::mt19937_64* rng = nullptr,
                          AttentionCache<T>* cache = nullptr) {
  const std::size_t n = x.rows, d = x.cols;
  if (heads == 0 || d % heads != 0) throw InvalidArgument("attention_block: model width must be divisible by head count");
  const std::size_t dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Matrix<T> q(n, d), k(n, d), v(n, d);
  gemm_acc<T>(x, p.wq, q.view());
  add_row_bias<T>(q.view(), p.bq.row(0));
  gemm_acc<T>(x, p.wk, k.view());
  add_row_bias<T>(k.view(), p.bk.row(0));
  gemm_acc<T>(x, p.wv, v.view());
  add_row_bias<T>(v.view(), p.bv.row(0));

  Matrix<T> context(n, d);
  std::vector<Matrix<T>> probs;
  std::vector<std::vector<T>> dropped;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Matrix<T> prob(n, n);
    for (std::size_t i = first_valid; i < n; ++i) {
      auto row = prob.row(i);
      for (std::size_t j = first_valid; j <= i; ++j) {
        T s{};
        for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * k(j, off + c);
        row[j] = s * scale;
      }
      softmax_inplace<T>(row.subspan(first_valid, i - first_valid + 1));
    }
    Matrix<T> used = prob;
    auto mask = apply_dropout<T>(used.view(), dropout, training, rng);
    for (std::size_t i = first_valid; i < n; ++i) {
      for (std::size_t j = first_valid; j <= i; ++j) {
        const T w = used(i, j);
        if (w == T{}) continue;
        for (std::size_t c = 0; c < dh; ++c) context(i, off + c) += w * v(j, off + c);
      }
    }
    probs.push_back(std::move(prob));
    dropped.push_back(std::move(mask));
  }

  Matrix<T> out(n, d);
  gemm_acc<T>(context.view(), p.wo, out.view());
  add_row_bias<T>(out.view(), p.bo.row(0));
  if (cache) {
    cache->input = Matrix<T>(n, d, std::vector<T>(x.data, x.data + n * d));
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->dropped = std::move(dropped);
    cache->context = std::move(context);
    cache->first_valid = first_valid;
  }
  return out;
}

template <class T>
Matrix<T> attention_block_backward(const AttentionCache<T>& c, const EncoderLayerParams<T>& p, std::size_t heads,
                                   MatrixView<const T> grad_out, const EncoderLayerParams<T>& g) {
  const std::size_t n = c.input.rows(), d = c.input.cols(), dh = d / heads, fv = c.first_valid;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  gemm_tn_acc<T>(c.context.view(), grad_out, g.wo);
  column_sums_acc<T>(grad_out, g.bo.row(0));
  Matrix<T> dcontext(n, d);
  gemm_nt_acc<T>(grad_out, p.wo, dcontext.view());

  Matrix<T> dq(n, d), dk(n, d), dv(n, d);
  std::vector<T> dp(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    const auto& prob = c.probs[h];
    const auto& mask = c.dropped[h];
    for (std::size_t i = fv; i < n; ++i) {
      // dP' = dO V^T, dV += P'^T dO
      for (std::size_t j = fv; j <= i; ++j) {
        const T used = mask.empty() ? prob(i, j) : prob(i, j) * mask[i * n + j];
        T s{};
        for (std::size_t cc = 0; cc < dh; ++cc) {
          s += dcontext(i, off + cc) * c.v(j, off + cc);
          dv(j, off + cc) += used * dcontext(i, off + cc);
        }
        dp[j] = mask.empty() ? s : s * mask[i * n + j];
      }
      T inner{};
      for (std::size_t j = fv; j <= i; ++j) inner += dp[j] * prob(i, j);
      for (std::size_t j = fv; j <= i; ++j) {
        const T ds = prob(i, j) * (dp[j] - inner) * scale;
        if (ds == T{}) continue;
        for (std::size_t cc = 0; cc < dh; ++cc) {
          dq(i, off + cc) += ds * c.k(j, off + cc);
          dk(j, off + cc) += ds * c.q(i, off + cc);
        }
      }
    }
  }

  Matrix<T> dx(n, d);
  const MatrixView<const T> x = c.input.view();
  gemm_tn_acc<T>(x, dq.view(), g.wq);
  gemm_tn_acc<T>(x, dk.view(), g.wk);
  gemm_tn_acc<T>(x, dv.view(), g.wv);
  column_sums_acc<T>(dq.view(), g.bq.row(0));
  column_sums_acc<T>(dk.view(), g.bk.row(0));
  column_sums_acc<T>(dv.view(), g.bv.row(0));
  gemm_nt_acc<T>(dq.view(), p.wq, dx.view());
  gemm_nt_acc<T>(dk.view(), p.wk, dx.view());
  gemm_nt_acc<T>(dv.view(), p.wv, dx.view());
  return dx;
}

// ---------------------------------------------------------------------------
// Position-wise feed-forward: GELU(X W1 + b1) W2 + b2, dropout on the activations.

template <class T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (T{1} + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <class T>
T gelu_derivative(T x) {
  const T cdf = static_cast<T>(0.5) * (T{1} + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <class T>
struct FfnCache {
  Matrix<T> input;
  Matrix<T> pre;  // X W1 + b1
  Matrix<T> act;  // after GELU and dropout
  std::vector<T> dropped;
};

template <class T>
Matrix<T> ffn_block(MatrixView<const T> x, const EncoderLayerParams<T>& p, double dropout, bool training,
                    std::mt19937_64* rng = nullptr, FfnCache<T>* cache = nullptr) {
  const std::size_t n = x.rows, dff = p.w1.cols;
  Matrix<T> pre(n, dff);
  gemm_acc<T>(x, p.w1, pre.view());
  add_row_bias<T>(pre.view(), p.b1.row(0));
  Matrix<T> act(n, dff);
  for (std::size_t i = 0; i < pre.size(); ++i) act.data()[i] = gelu(pre.data()[i]);
  auto mask = apply_dropout<T>(act.view(), dropout, training, rng);
  Matrix<T> out(n, p.w2.cols);
  gemm_acc<T>(act.view(), p.w2, out.view());
  add_row_bias<T>(out.view(), p.b2.row(0));
  if (cache) {
    cache->input = Matrix<T>(n, x.cols, std::vector<T>(x.data, x.data + x.size()));
    cache->pre = std::move(pre);
    cache->act = std::move(act);
    cache->dropped = std::move(mask);
  }
  return out;
}

template <class T>
Matrix<T> ffn_block_backward(const FfnCache<T>& c, const EncoderLayerParams<T>& p, MatrixView<const T> grad_out,
                             const EncoderLayerParams<T>& g) {
  const std::size_t n = c.input.rows(), d = c.input.cols(), dff = c.pre.cols();
  gemm_tn_acc<T>(c.act.view(), grad_out, g.w2);
  column_sums_acc<T>(grad_out, g.b2.row(0));
  Matrix<T> dact(n, dff);
  gemm_nt_acc<T>(grad_out, p.w2, dact.view());
  for (std::size_t i = 0; i < dact.size(); ++i) {
    T v = dact.data()[i] * gelu_derivative(c.pre.data()[i]);
    if (!c.dropped.empty()) v *= c.dropped[i];
    dact.data()[i] = v;
  }
  gemm_tn_acc<T>(c.input.view(), dact.view(), g.w1);
  column_sums_acc<T>(dact.view(), g.b1.row(0));
  Matrix<T> dx(n, d);
  gemm_nt_acc<T>(dact.view(), p.w1, dx.view());
  return dx;
}

// ---------------------------------------------------------------------------
// One encoder layer. Post-norm: X1 = LN1(X + Att(X)), Y = LN2(X1 + FFN(X1)).
// Pre-norm:  X1 = X + Att(LN1(X)), Y = X1 + FFN(LN2(X1)).

template <class T>
struct EncoderLayerCache {
  AttentionCache<T> attention;
  FfnCache<T> ffn;
  LayerNormCache<T> ln1, ln2;
};

template <class T>
Matrix<T> encoder_layer(MatrixView<const T> x, std::size_t first_valid, const EncoderLayerParams<T>& p,
                        const EncoderParams<T>& cfg, bool training, std::mt19937_64* rng,
                        EncoderLayerCache<T>* cache) {
  auto* ac = cache ? &cache->attention : nullptr;
  auto* fc = cache ? &cache->ffn : nullptr;
  auto* l1 = cache ? &cache->ln1 : nullptr;
  auto* l2 = cache ? &cache->ln2 : nullptr;
  if (!cfg.pre_norm) {
    Matrix<T> a = attention_block<T>(x, first_valid, p, cfg.heads, cfg.dropout, training, rng, ac);
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += x.data[i];
    Matrix<T> x1 = layer_norm<T>(a.view(), p.ln1_gain, p.ln1_bias, cfg.ln_eps, l1);
    Matrix<T> f = ffn_block<T>(x1.view(), p, cfg.dropout, training, rng, fc);
    for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] += x1.data()[i];
    return layer_norm<T>(f.view(), p.ln2_gain, p.ln2_bias, cfg.ln_eps, l2);
  }
  Matrix<T> h = layer_norm<T>(x, p.ln1_gain, p.ln1_bias, cfg.ln_eps, l1);
  Matrix<T> x1 = attention_block<T>(h.view(), first_valid, p, cfg.heads, cfg.dropout, training, rng, ac);
  for (std::size_t i = 0; i < x1.size(); ++i) x1.data()[i] += x.data[i];
  Matrix<T> h2 = layer_norm<T>(x1.view(), p.ln2_gain, p.ln2_bias, cfg.ln_eps, l2);
  Matrix<T> y = ffn_block<T>(h2.view(), p, cfg.dropout, training, rng, fc);
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += x1.data()[i];
  return y;
}

template <class T>
Matrix<T> encoder_layer_backward(const EncoderLayerCache<T>& c, const EncoderLayerParams<T>& p,
                                 const EncoderParams<T>& cfg, MatrixView<const T> grad_out,
                                 const EncoderLayerParams<T>& g) {
  if (!cfg.pre_norm) {
    Matrix<T> d2 = layer_norm_backward<T>(c.ln2, p.ln2_gain, grad_out, g.ln2_gain, g.ln2_bias);
    Matrix<T> dx1 = ffn_block_backward<T>(c.ffn, p, d2.view(), g);
    for (std::size_t i = 0; i < dx1.size(); ++i) dx1.data()[i] += d2.data()[i];
    Matrix<T> d1 = layer_norm_backward<T>(c.ln1, p.ln1_gain, dx1.view(), g.ln1_gain, g.ln1_bias);
    Matrix<T> dx = attention_block_backward<T>(c.attention, p, cfg.heads, d1.view(), g);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += d1.data()[i];
    return dx;
  }
  Matrix<T> dh2 = ffn_block_backward<T>(c.ffn, p, grad_out, g);
  Matrix<T> dx1 = layer_norm_backward<T>(c.ln2, p.ln2_gain, dh2.view(), g.ln2_gain, g.ln2_bias);
  for (std::size_t i = 0; i < dx1.size(); ++i) dx1.data()[i] += grad_out.data[i];
  Matrix<T> dh = attention_block_backward<T>(c.attention, p, cfg.heads, dx1.view(), g);
  Matrix<T> dx = layer_norm_backward<T>(c.ln1, p.ln1_gain, dh.view(), g.ln1_gain, g.ln1_bias);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dx1.data()[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Full encoder.

template <class T>
struct EncoderCache {
  std::vector<EncoderLayerCache<T>> layers;
  std::size_t first_valid = 0;
  std::size_t positions = 0;
};

// Hidden states of the last layer for every position.
template <class T>
Matrix<T> encode_all(MatrixView<const T> v, std::size_t length, const EncoderParams<T>& p, bool training,
                     std::mt19937_64* rng = nullptr, EncoderCache<T>* cache = nullptr) {
  const std::size_t n = v.rows;
  if (length == 0 || length > n) {
    throw InvalidArgument("encode_sequence: valid length " + std::to_string(length) + " outside [1, " +
                          std::to_string(n) + "]");
  }
  if (p.positional.rows < n) throw InvalidArgument("encode_sequence: positional table shorter than sequence");
  const std::size_t first_valid = n - length;
  Matrix<T> x(n, v.cols, std::vector<T>(v.data, v.data + v.size()));
  for (std::size_t j = 0; j < n; ++j) axpy<T>(T{1}, p.positional.row(j), x.row(j));
  if (cache) {
    cache->layers.assign(p.layers.size(), {});
    cache->first_valid = first_valid;
    cache->positions = n;
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    x = encoder_layer<T>(x.view(), first_valid, p.layers[l], p, training, rng, cache ? &cache->layers[l] : nullptr);
  }
  return x;
}

// Sequence representation: the last layer's hidden state at position n - 1
// (the most recent item of a right-aligned sequence).
template <class T>
std::vector<T> encode_sequence(MatrixView<const T> v, std::size_t length, const EncoderParams<T>& p, bool training,
                               std::mt19937_64* rng = nullptr, EncoderCache<T>* cache = nullptr) {
  Matrix<T> h = encode_all<T>(v, length, p, training, rng, cache);
  auto last = h.row(h.rows() - 1);
  return {last.begin(), last.end()};
}

// Backward from a full upstream matrix over the last layer's outputs.
// Returns dL/dV; positional gradients are accumulated into g.positional.
template <class T>
Matrix<T> encode_all_backward(const EncoderCache<T>& c, const EncoderParams<T>& p, MatrixView<const T> grad_out,
                              const EncoderParams<T>& g) {
  Matrix<T> dx(grad_out.rows, grad_out.cols, std::vector<T>(grad_out.data, grad_out.data + grad_out.size()));
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    dx = encoder_layer_backward<T>(c.layers[l], p.layers[l], p, dx.view(), g.layers[l]);
  }
  for (std::size_t j = 0; j < dx.rows(); ++j) axpy<T>(T{1}, dx.row(j), g.positional.row(j));
  return dx;
}

template <class T>
Matrix<T> encode_sequence_backward(const EncoderCache<T>& c, const EncoderParams<T>& p, std::span<const T> grad_repr,
                                   const EncoderParams<T>& g) {
  const std::size_t n = c.positions;
  Matrix<T> up(n, grad_repr.size());
  std::copy(grad_repr.begin(), grad_repr.end(), up.row(n - 1).begin());
  return encode_all_backward<T>(c, p, up.view(), g);
}

}  // namespace tedrec
