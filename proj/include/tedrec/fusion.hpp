#pragma once

// Text-ID fusion stage: MoE-modulated text rows, spectral mutual filtering of
// text and ID sequences, a learnable spectral filter on the ID sequence, and
// the dual sigmoid gate that recombines both branches. Each block has a
// forward that can record a cache and a backward that accumulates parameter
// gradients into a view of the same layout.

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <tuple>
#include <vector>

#include "tedrec/error.hpp"
#include "tedrec/loss.hpp"
#include "tedrec/params.hpp"
#include "tedrec/spectral.hpp"
#include "tedrec/tensor.hpp"

namespace tedrec {

// ---------------------------------------------------------------------------
// Frozen text embeddings.
//
// File layout: "TEDEMB1", u32 row_count, u32 d_text, then row_count * d_text
// little-endian f32 values, row-major. Row 0 is the padding row and must be 0.

inline constexpr char kEmbeddingMagic[7] = {'T', 'E', 'D', 'E', 'M', 'B', '1'};

class TextEmbeddingStore {
 public:
  TextEmbeddingStore() = default;
  explicit TextEmbeddingStore(Matrix<float> table) : table_(std::move(table)) { validate(); }

  std::size_t rows() const { return table_.rows(); }
  std::size_t dim() const { return table_.cols(); }
  std::span<const float> row(std::size_t id) const { return table_.row(id); }
  const Matrix<float>& table() const { return table_; }

  static TextEmbeddingStore decode(const std::string& bytes, const std::string& source = "embeddings") {
    detail::ByteReader r(bytes, source);
    if (r.str(sizeof kEmbeddingMagic) != std::string(kEmbeddingMagic, sizeof kEmbeddingMagic)) {
      throw IoError(source + ": bad magic (expected TEDEMB1)");
    }
    const auto rows = static_cast<std::size_t>(r.u(4));
    const auto cols = static_cast<std::size_t>(r.u(4));
    if (rows == 0 || cols == 0) throw DataError(source + ": empty embedding table");
    Matrix<float> table(rows, cols);
    for (auto& v : table.flat()) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.u(4)));
    if (!r.at_end()) throw IoError(source + ": trailing bytes after embedding table");
    try {
      return TextEmbeddingStore(std::move(table));
    } catch (const InvalidArgument& e) {
      throw DataError(source + ": " + e.what());
    }
  }

  std::string encode() const {
    std::string out(kEmbeddingMagic, sizeof kEmbeddingMagic);
    detail::put_u32(out, static_cast<std::uint32_t>(rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(dim()));
    for (float v : table_.flat()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
  }

  static TextEmbeddingStore load(const std::string& path) { return decode(detail::read_file_bytes(path), path); }
  void save(const std::string& path) const { detail::write_file_bytes(path, encode()); }

  // Reorders rows so that row i holds the embedding for internal item id i.
  // `source_row[i]` is the row of this store for id i (source_row[0] ignored).
  TextEmbeddingStore remapped(const std::vector<std::size_t>& source_row) const {
    Matrix<float> out(source_row.size(), dim());
    for (std::size_t i = 1; i < source_row.size(); ++i) {
      if (source_row[i] == 0 || source_row[i] >= rows()) {
        throw DataError("embedding row " + std::to_string(source_row[i]) + " for item id " + std::to_string(i) +
                        " outside table of " + std::to_string(rows()) + " rows");
      }
      std::copy_n(row(source_row[i]).begin(), dim(), out.row(i).begin());
    }
    return TextEmbeddingStore(std::move(out));
  }

 private:
  void validate() const {
    if (!all_finite<float>(table_.flat())) throw InvalidArgument("text embeddings contain non-finite values");
    for (float v : table_.row(0)) {
      if (v != 0.0f) throw InvalidArgument("text embedding row 0 (padding) must be all zeros");
    }
  }

  Matrix<float> table_;
};

// Companion TSV: "item_token<TAB>row" per line, optional header "item_id<TAB>row".
inline std::unordered_map<std::string, std::size_t> load_embedding_item_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::unordered_map<std::string, std::size_t> map;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": expected token<TAB>row");
    const std::string token = line.substr(0, tab);
    const std::string idx = line.substr(tab + 1);
    if (lineno == 1 && (idx == "row" || idx == "id")) continue;
    try {
      std::size_t pos = 0;
      const auto row = std::stoull(idx, &pos);
      if (pos != idx.size()) throw std::invalid_argument("trailing");
      map[token] = static_cast<std::size_t>(row);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": bad row index '" + idx + "'");
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// Parameter views.

template <class T>
struct ModulationExperts {
  std::size_t experts = 0;
  std::size_t positions = 0;
  double noise_std = 0.0;
  MatrixView<T> modulation;   // (experts * positions) x text_dim; row k * positions + j
  MatrixView<T> projections;  // (experts * text_dim) x model_dim; block k is W^P_k
  MatrixView<T> router;       // text_dim x experts

  std::size_t text_dim() const { return router.rows; }
  std::size_t model_dim() const { return projections.cols; }
  MatrixView<T> projection(std::size_t k) const { return projections.row_range(k * text_dim(), text_dim()); }
  std::span<T> shift(std::size_t k, std::size_t j) const { return modulation.row(k * positions + j); }
};

// Single shared affine map used when MoE modulation is switched off.
template <class T>
struct TextProjection {
  MatrixView<T> weight;  // text_dim x model_dim
  MatrixView<T> bias;    // 1 x model_dim
};

template <class T>
struct FusionParams {
  MatrixView<T> filter_re;  // bins x d
  MatrixView<T> filter_im;  // bins x d
  MatrixView<T> gate_f_weight;  // 1 x d
  MatrixView<T> gate_f_bias;    // 1 x 1
  MatrixView<T> gate_e_weight;  // 1 x d
  MatrixView<T> gate_e_bias;    // 1 x 1
};

struct AblationSwitches {
  bool use_moe_modulation = true;
  bool use_adaptive_gate = true;
  bool use_id_filter = true;
  bool use_text_fusion = true;
};

// ---------------------------------------------------------------------------
// MoE text modulation: t'_j = sum_k g_k (t_j + s_{j,k}) W^P_k,
// g = softmax(t_j W^G + delta), delta ~ N(0, noise_std^2) only in training.

template <class T>
struct ModulationCache {
  Matrix<T> input;
  std::vector<std::uint8_t> valid;
  Matrix<T> gates;       // n x G
  Matrix<T> expert_out;  // (G * n) x d
};

template <class T>
std::vector<std::uint8_t> nonzero_rows(MatrixView<const T> m) {
  std::vector<std::uint8_t> valid(m.rows);
  for (std::size_t j = 0; j < m.rows; ++j) {
    for (T v : m.row(j)) valid[j] |= (v != T{});
  }
  return valid;
}

// `valid` marks real positions; when empty, all-zero rows are taken as padding.
// Padding rows of the output are zero.
template <class T>
Matrix<T> modulate_text(MatrixView<const T> text_rows, const ModulationExperts<T>& ex, bool training,
                        std::mt19937_64* rng = nullptr, std::span<const std::uint8_t> valid = {},
                        ModulationCache<T>* cache = nullptr) {
  const std::size_t n = text_rows.rows, dt = ex.text_dim(), d = ex.model_dim(), g_count = ex.experts;
  if (text_rows.cols != dt) {
    throw InvalidArgument("modulate_text: text width " + std::to_string(text_rows.cols) + " != expert width " +
                          std::to_string(dt));
  }
  if (n != ex.positions) {
    throw InvalidArgument("modulate_text: sequence length " + std::to_string(n) + " != modulation extent " +
                          std::to_string(ex.positions));
  }
  std::vector<std::uint8_t> mask = valid.empty() ? nonzero_rows<T>(text_rows)
                                                 : std::vector<std::uint8_t>(valid.begin(), valid.end());
  Matrix<T> out(n, d);
  Matrix<T> gates(n, g_count);
  Matrix<T> expert_out(g_count * n, d);
  std::normal_distribution<double> noise(0.0, ex.noise_std > 0 ? ex.noise_std : 1.0);
  const bool add_noise = training && ex.noise_std > 0 && rng != nullptr;
  std::vector<T> shifted(dt);

  for (std::size_t j = 0; j < n; ++j) {
    if (!mask[j]) continue;
    auto x = text_rows.row(j);
    auto g = gates.row(j);
    for (std::size_t k = 0; k < g_count; ++k) {
      T z{};
      for (std::size_t i = 0; i < dt; ++i) z += x[i] * ex.router(i, k);
      if (add_noise) z += static_cast<T>(noise(*rng));
      g[k] = z;
    }
    softmax_inplace<T>(g);
    for (std::size_t k = 0; k < g_count; ++k) {
      auto s = ex.shift(k, j);
      for (std::size_t i = 0; i < dt; ++i) shifted[i] = x[i] + s[i];
      auto u = expert_out.row(k * n + j);
      auto proj = ex.projection(k);
      for (std::size_t i = 0; i < dt; ++i) {
        if (shifted[i] == T{}) continue;
        axpy<T>(shifted[i], proj.row(i), u);
      }
      axpy<T>(g[k], u, out.row(j));
    }
  }
  if (cache) {
    cache->input = Matrix<T>(n, dt, std::vector<T>(text_rows.data, text_rows.data + n * dt));
    cache->valid = std::move(mask);
    cache->gates = std::move(gates);
    cache->expert_out = std::move(expert_out);
  }
  return out;
}

// Returns dL/d(text_rows); accumulates parameter gradients into `grads`.
template <class T>
Matrix<T> modulate_text_backward(const ModulationCache<T>& c, const ModulationExperts<T>& ex,
                                 MatrixView<const T> grad_out, const ModulationExperts<T>& grads) {
  const std::size_t n = c.input.rows(), dt = ex.text_dim(), d = ex.model_dim(), g_count = ex.experts;
  Matrix<T> grad_in(n, dt);
  std::vector<T> dg(g_count), du(d), shifted(dt), dshift(dt);
  for (std::size_t j = 0; j < n; ++j) {
    if (!c.valid[j]) continue;
    auto dy = grad_out.row(j);
    auto x = c.input.row(j);
    auto g = c.gates.row(j);
    auto dx = grad_in.row(j);
    T weighted{};
    for (std::size_t k = 0; k < g_count; ++k) {
      dg[k] = dot<T>(dy, c.expert_out.row(k * n + j));
      weighted += g[k] * dg[k];
    }
    for (std::size_t k = 0; k < g_count; ++k) {
      // through u_k = (x + s_k) W^P_k
      for (std::size_t i = 0; i < d; ++i) du[i] = g[k] * dy[i];
      auto s = ex.shift(k, j);
      auto proj = ex.projection(k);
      auto gproj = grads.projection(k);
      for (std::size_t i = 0; i < dt; ++i) {
        shifted[i] = x[i] + s[i];
        axpy<T>(shifted[i], std::span<const T>(du), gproj.row(i));
        dshift[i] = dot<T>(proj.row(i), du);
      }
      auto gs = grads.shift(k, j);
      for (std::size_t i = 0; i < dt; ++i) {
        gs[i] += dshift[i];
        dx[i] += dshift[i];
      }
      // through the router softmax
      const T dz = g[k] * (dg[k] - weighted);
      for (std::size_t i = 0; i < dt; ++i) {
        grads.router(i, k) += x[i] * dz;
        dx[i] += ex.router(i, k) * dz;
      }
    }
  }
  return grad_in;
}

// w/o MM variant: T = X W + b on real positions, zero on padding.
template <class T>
Matrix<T> project_text(MatrixView<const T> text_rows, const TextProjection<T>& p, std::span<const std::uint8_t> valid) {
  if (text_rows.cols != p.weight.rows) throw InvalidArgument("project_text: text width mismatch");
  Matrix<T> out(text_rows.rows, p.weight.cols);
  gemm_acc<T>(text_rows, MatrixView<const T>(p.weight), out.view());
  add_row_bias<T>(out.view(), p.bias.row(0));
  for (std::size_t j = 0; j < out.rows(); ++j) {
    if (!valid[j]) std::fill(out.row(j).begin(), out.row(j).end(), T{});
  }
  return out;
}

template <class T>
Matrix<T> project_text_backward(MatrixView<const T> text_rows, const TextProjection<T>& p,
                                std::span<const std::uint8_t> valid, MatrixView<const T> grad_out,
                                const TextProjection<T>& grads) {
  Matrix<T> masked(grad_out.rows, grad_out.cols);
  for (std::size_t j = 0; j < grad_out.rows; ++j) {
    if (valid[j]) std::copy_n(grad_out.row(j).begin(), grad_out.cols, masked.row(j).begin());
  }
  gemm_tn_acc<T>(text_rows, masked.view(), grads.weight);
  column_sums_acc<T>(masked.view(), grads.bias.row(0));
  Matrix<T> grad_in(text_rows.rows, text_rows.cols);
  gemm_nt_acc<T>(masked.view(), MatrixView<const T>(p.weight), grad_in.view());
  return grad_in;
}

// ---------------------------------------------------------------------------
// Spectral mutual filtering: F = irfft(rfft(T) (.) rfft(E)), i.e. the circular
// convolution f_j = sum_k t_k (.) e_{(j-k) mod n}.

template <class T>
struct MutualFilterCache {
  Spectrum<T> text_spec;
  Spectrum<T> id_spec;
};

template <class T>
Matrix<T> mutual_filter(const FftPlan<T>& plan, MatrixView<const T> text, MatrixView<const T> ids,
                        MutualFilterCache<T>* cache = nullptr) {
  require_same_shape<T>(text, ids, "mutual_filter");
  if (text.rows != plan.size()) throw InvalidArgument("mutual_filter: sequence length does not match the FFT plan");
  auto ts = rfft(plan, text);
  auto es = rfft(plan, ids);
  auto f = irfft(plan, hadamard(ts, es));
  if (cache) {
    cache->text_spec = std::move(ts);
    cache->id_spec = std::move(es);
  }
  return f;
}

template <class T>
Matrix<T> mutual_filter(const Matrix<T>& text, const Matrix<T>& ids) {
  require_same_shape<T>(text, ids, "mutual_filter");
  return mutual_filter(FftPlan<T>(text.rows()), text.view(), ids.view());
}

// Returns {dL/dT, dL/dE}.
template <class T>
std::pair<Matrix<T>, Matrix<T>> mutual_filter_backward(const FftPlan<T>& plan, const MutualFilterCache<T>& c,
                                                       MatrixView<const T> grad_out) {
  const auto gs = irfft_adjoint(plan, grad_out);
  auto grad_text = rfft_adjoint(plan, conj_hadamard(c.id_spec, gs));
  auto grad_ids = rfft_adjoint(plan, conj_hadamard(c.text_spec, gs));
  return {std::move(grad_text), std::move(grad_ids)};
}

// ---------------------------------------------------------------------------
// Learnable ID filter: E' = irfft(W (.) rfft(E)).

template <class T>
Spectrum<T> filter_spectrum(const FusionParams<T>& p, std::size_t n) {
  Spectrum<T> w(n, p.filter_re.cols);
  std::copy_n(p.filter_re.data, p.filter_re.size(), w.re.data());
  std::copy_n(p.filter_im.data, p.filter_im.size(), w.im.data());
  return w;
}

template <class T>
struct IdFilterCache {
  Spectrum<T> id_spec;
};

template <class T>
Matrix<T> filter_ids(const FftPlan<T>& plan, MatrixView<const T> ids, const FusionParams<T>& p,
                     IdFilterCache<T>* cache = nullptr) {
  const std::size_t bins = ids.rows / 2 + 1;
  if (p.filter_re.rows != bins || p.filter_re.cols != ids.cols || p.filter_im.rows != bins ||
      p.filter_im.cols != ids.cols) {
    throw InvalidArgument("filter_ids: filter shape " + std::to_string(p.filter_re.rows) + "x" +
                          std::to_string(p.filter_re.cols) + " does not match " + std::to_string(bins) + "x" +
                          std::to_string(ids.cols));
  }
  if (ids.rows != plan.size()) throw InvalidArgument("filter_ids: sequence length does not match the FFT plan");
  auto es = rfft(plan, ids);
  auto out = irfft(plan, hadamard(filter_spectrum(p, ids.rows), es));
  if (cache) cache->id_spec = std::move(es);
  return out;
}

// Returns dL/dE; accumulates filter gradients into grads.filter_re/im.
template <class T>
Matrix<T> filter_ids_backward(const FftPlan<T>& plan, const IdFilterCache<T>& c, const FusionParams<T>& p,
                              MatrixView<const T> grad_out, const FusionParams<T>& grads) {
  const auto gs = irfft_adjoint(plan, grad_out);
  const auto gw = conj_hadamard(c.id_spec, gs);
  for (std::size_t i = 0; i < gw.re.size(); ++i) {
    grads.filter_re.data[i] += gw.re.data()[i];
    grads.filter_im.data[i] += gw.im.data()[i];
  }
  return rfft_adjoint(plan, conj_hadamard(filter_spectrum(p, plan.size()), gs));
}

// ---------------------------------------------------------------------------
// Dual gate: v_j = 2 sigma(gF(f_j)) f_j + 2 sigma(gE(e'_j)) e'_j, one scalar
// weight per position and branch.

template <class T>
struct GateCache {
  Matrix<T> fused;
  Matrix<T> filtered;
  std::vector<T> sig_f;
  std::vector<T> sig_e;
};

template <class T>
T sigmoid(T x) {
  return x >= T{} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

template <class T>
Matrix<T> gated_combine(MatrixView<const T> fused, MatrixView<const T> filtered, const FusionParams<T>& p,
                        GateCache<T>* cache = nullptr) {
  require_same_shape<T>(fused, filtered, "gated_combine");
  const std::size_t n = fused.rows, d = fused.cols;
  Matrix<T> v(n, d);
  std::vector<T> sf(n), se(n);
  for (std::size_t j = 0; j < n; ++j) {
    sf[j] = sigmoid<T>(dot<T>(p.gate_f_weight.row(0), fused.row(j)) + p.gate_f_bias(0, 0));
    se[j] = sigmoid<T>(dot<T>(p.gate_e_weight.row(0), filtered.row(j)) + p.gate_e_bias(0, 0));
    const T wf = 2 * sf[j], we = 2 * se[j];
    for (std::size_t c = 0; c < d; ++c) v(j, c) = wf * fused(j, c) + we * filtered(j, c);
  }
  if (cache) {
    cache->fused = Matrix<T>(n, d, std::vector<T>(fused.data, fused.data + n * d));
    cache->filtered = Matrix<T>(n, d, std::vector<T>(filtered.data, filtered.data + n * d));
    cache->sig_f = std::move(sf);
    cache->sig_e = std::move(se);
  }
  return v;
}

// Per-position gate multipliers 2 sigma(.) for the fused branch.
template <class T>
std::vector<T> gate_multipliers(MatrixView<const T> x, MatrixView<const T> weight, MatrixView<const T> bias) {
  std::vector<T> w(x.rows);
  for (std::size_t j = 0; j < x.rows; ++j) w[j] = 2 * sigmoid<T>(dot<T>(weight.row(0), x.row(j)) + bias(0, 0));
  return w;
}

// Returns {dL/dF, dL/dE'}.
template <class T>
std::pair<Matrix<T>, Matrix<T>> gated_combine_backward(const GateCache<T>& c, const FusionParams<T>& p,
                                                       MatrixView<const T> grad_out, const FusionParams<T>& grads) {
  const std::size_t n = c.fused.rows(), d = c.fused.cols();
  Matrix<T> df(n, d), de(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    auto dv = grad_out.row(j);
    const T wf = 2 * c.sig_f[j], we = 2 * c.sig_e[j];
    const T a_f = dot<T>(dv, c.fused.row(j)) * 2 * c.sig_f[j] * (T{1} - c.sig_f[j]);
    const T a_e = dot<T>(dv, c.filtered.row(j)) * 2 * c.sig_e[j] * (T{1} - c.sig_e[j]);
    for (std::size_t i = 0; i < d; ++i) {
      df(j, i) = wf * dv[i] + a_f * p.gate_f_weight(0, i);
      de(j, i) = we * dv[i] + a_e * p.gate_e_weight(0, i);
    }
    axpy<T>(a_f, c.fused.row(j), grads.gate_f_weight.row(0));
    axpy<T>(a_e, c.filtered.row(j), grads.gate_e_weight.row(0));
    grads.gate_f_bias(0, 0) += a_f;
    grads.gate_e_bias(0, 0) += a_e;
  }
  return {std::move(df), std::move(de)};
}

// ---------------------------------------------------------------------------
// Whole fusion stage for one right-aligned id sequence.

template <class T>
struct FusionLayer {
  MatrixView<T> id_table;  // (|V| + 1) x d, row 0 = padding
  ModulationExperts<T> experts;
  TextProjection<T> raw_projection;  // used only when MoE modulation is off
  FusionParams<T> fusion;
};

template <class T>
struct FusionCache {
  std::vector<std::size_t> ids;
  std::vector<std::uint8_t> valid;
  Matrix<T> text_rows;
  Matrix<T> text;     // T (modulated)
  Matrix<T> id_rows;  // E
  ModulationCache<T> modulation;
  MutualFilterCache<T> mutual;
  IdFilterCache<T> id_filter;
  GateCache<T> gate;
  Matrix<T> fused;     // F
  Matrix<T> filtered;  // E'
};

template <class T>
Matrix<T> gather_text_rows(const TextEmbeddingStore& store, std::span<const std::size_t> ids) {
  Matrix<T> rows(ids.size(), store.dim());
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (ids[j] == 0) continue;
    auto src = store.row(ids[j]);
    auto dst = rows.row(j);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] = static_cast<T>(src[c]);
  }
  return rows;
}

template <class T>
Matrix<T> fuse_sequence(std::span<const std::size_t> ids, const FusionLayer<T>& layer, const TextEmbeddingStore& text_store,
                        const AblationSwitches& sw, const FftPlan<T>& plan, bool training,
                        std::mt19937_64* rng = nullptr, FusionCache<T>* cache = nullptr) {
  const std::size_t n = ids.size(), d = layer.id_table.cols;
  if (n != plan.size()) throw InvalidArgument("fuse_sequence: sequence length does not match the FFT plan");
  std::vector<std::uint8_t> valid(n);
  Matrix<T> id_rows(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t id = ids[j];
    if (id >= layer.id_table.rows || id >= text_store.rows()) {
      throw InvalidArgument("fuse_sequence: unknown item id " + std::to_string(id));
    }
    if (id == 0) continue;
    valid[j] = 1;
    std::copy_n(layer.id_table.row(id).begin(), d, id_rows.row(j).begin());
  }
  Matrix<T> text_rows = gather_text_rows<T>(text_store, ids);

  FusionCache<T> local;
  FusionCache<T>& c = cache ? *cache : local;
  Matrix<T> text = sw.use_moe_modulation
                       ? modulate_text<T>(text_rows.view(), layer.experts, training, rng, valid, cache ? &c.modulation : nullptr)
                       : project_text<T>(text_rows.view(), layer.raw_projection, valid);

  Matrix<T> fused;
  if (sw.use_text_fusion) {
    fused = mutual_filter<T>(plan, text.view(), id_rows.view(), cache ? &c.mutual : nullptr);
  } else {
    fused = Matrix<T>(n, d);
    for (std::size_t i = 0; i < fused.size(); ++i) fused.data()[i] = text.data()[i] * id_rows.data()[i];
  }

  Matrix<T> filtered = sw.use_id_filter
                           ? filter_ids<T>(plan, id_rows.view(), layer.fusion, cache ? &c.id_filter : nullptr)
                           : id_rows;

  Matrix<T> v;
  if (sw.use_adaptive_gate) {
    v = gated_combine<T>(fused.view(), filtered.view(), layer.fusion, cache ? &c.gate : nullptr);
  } else {
    v = fused;
    for (std::size_t i = 0; i < v.size(); ++i) v.data()[i] += filtered.data()[i];
  }

  if (cache) {
    c.ids.assign(ids.begin(), ids.end());
    c.valid = std::move(valid);
    c.text_rows = std::move(text_rows);
    c.text = std::move(text);
    c.id_rows = std::move(id_rows);
    c.fused = std::move(fused);
    c.filtered = std::move(filtered);
  }
  return v;
}

// Accumulates gradients of every fusion parameter (including the id table
// rows that were looked up) into `grads`.
template <class T>
void fuse_sequence_backward(const FusionCache<T>& c, const FusionLayer<T>& layer, const AblationSwitches& sw,
                            const FftPlan<T>& plan, MatrixView<const T> grad_v, const FusionLayer<T>& grads) {
  const std::size_t n = c.ids.size(), d = layer.id_table.cols;
  Matrix<T> d_fused, d_filtered;
  if (sw.use_adaptive_gate) {
    std::tie(d_fused, d_filtered) = gated_combine_backward<T>(c.gate, layer.fusion, grad_v, grads.fusion);
  } else {
    d_fused = Matrix<T>(n, d, std::vector<T>(grad_v.data, grad_v.data + n * d));
    d_filtered = d_fused;
  }

  Matrix<T> d_ids = sw.use_id_filter ? filter_ids_backward<T>(plan, c.id_filter, layer.fusion, d_filtered.view(), grads.fusion)
                                     : d_filtered;
  Matrix<T> d_text;
  if (sw.use_text_fusion) {
    auto [dt, de] = mutual_filter_backward<T>(plan, c.mutual, d_fused.view());
    d_text = std::move(dt);
    for (std::size_t i = 0; i < d_ids.size(); ++i) d_ids.data()[i] += de.data()[i];
  } else {
    d_text = Matrix<T>(n, d);
    for (std::size_t i = 0; i < d_text.size(); ++i) {
      d_text.data()[i] = d_fused.data()[i] * c.id_rows.data()[i];
      d_ids.data()[i] += d_fused.data()[i] * c.text.data()[i];
    }
  }

  if (sw.use_moe_modulation) {
    modulate_text_backward<T>(c.modulation, layer.experts, d_text.view(), grads.experts);
  } else {
    project_text_backward<T>(c.text_rows.view(), layer.raw_projection, c.valid, d_text.view(), grads.raw_projection);
  }

  for (std::size_t j = 0; j < n; ++j) {
    if (!c.valid[j]) continue;
    axpy<T>(T{1}, d_ids.row(j), grads.id_table.row(c.ids[j]));
  }
}

}  // namespace tedrec
