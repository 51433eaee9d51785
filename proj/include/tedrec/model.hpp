#pragma once

#include <bit>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tedrec/encoder.hpp"
#include "tedrec/fusion.hpp"
#include "tedrec/loss.hpp"
#include "tedrec/params.hpp"
#include "tedrec/spectral.hpp"

namespace tedrec {

struct ModelConfig {
  std::size_t num_items = 0;  // |V|; ids 1..|V|, 0 = padding
  std::size_t text_dim = 0;
  std::size_t max_len = 50;  // logical sequence length used for truncation
  std::size_t d = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t d_ff = 256;
  std::size_t experts = 8;
  double temperature = 1.0;
  double dropout = 0.2;
  double noise_std = 0.01;
  double init_std = 0.02;
  double modulation_std = 0.02;
  double ln_eps = 1e-12;
  std::string filter_init = "identity";  // or "random"
  bool pre_norm = false;
  AblationSwitches switches;

  // Internal length: max_len rounded up to a power of two for the radix-2 FFT.
  std::size_t padded_len() const { return std::bit_ceil(std::max<std::size_t>(max_len, 1)); }
  std::size_t bins() const { return padded_len() / 2 + 1; }

  void validate() const {
    if (num_items == 0) throw InvalidArgument("model: item count must be positive");
    if (text_dim == 0) throw InvalidArgument("model: text width must be positive");
    if (max_len < 1) throw InvalidArgument("model: max_len must be at least 1");
    if (d == 0 || heads == 0 || d % heads != 0) throw InvalidArgument("model: d must be a positive multiple of heads");
    if (d_ff == 0 || experts == 0) throw InvalidArgument("model: d_ff and experts must be positive");
    if (!(temperature > 0)) throw InvalidArgument("model: temperature must be positive");
    if (dropout < 0 || dropout >= 1) throw InvalidArgument("model: dropout must lie in [0, 1)");
    if (noise_std < 0) throw InvalidArgument("model: noise_std must be non-negative");
    if (filter_init != "identity" && filter_init != "random") {
      throw InvalidArgument("model: filter_init must be 'identity' or 'random'");
    }
  }
};

// Parameters plus the forward/backward wiring of fusion -> encoder -> CE head.
// All const member functions are safe to call concurrently.
template <class T>
class TedRecModel {
 public:
  TedRecModel(ModelConfig cfg, std::shared_ptr<const TextEmbeddingStore> text)
      : cfg_(std::move(cfg)), text_(std::move(text)), plan_(cfg_.padded_len()), params_(std::make_unique<ParamStore<T>>()) {
    cfg_.validate();
    if (!text_) throw InvalidArgument("model: text embeddings required");
    if (text_->dim() != cfg_.text_dim) {
      throw DataError("model: embedding width " + std::to_string(text_->dim()) + " != configured text width " +
                      std::to_string(cfg_.text_dim));
    }
    if (text_->rows() < cfg_.num_items + 1) {
      throw DataError("embedding rows (" + std::to_string(text_->rows()) + ") < item count + 1 (" +
                      std::to_string(cfg_.num_items + 1) + ")");
    }
    register_parameters();
    fusion_ = bind_fusion([this](const std::string& n) { return (*params_)[n].view(); });
    encoder_ = bind_encoder([this](const std::string& n) { return (*params_)[n].view(); });
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return *params_; }
  const ParamStore<T>& params() const { return *params_; }
  const TextEmbeddingStore& text() const { return *text_; }
  const FftPlan<T>& plan() const { return plan_; }
  const FusionLayer<T>& fusion_layer() const { return fusion_; }
  const EncoderParams<T>& encoder_params() const { return encoder_; }

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    params_->initialize(rng);
  }

  GradStore<T> make_grads() const { return GradStore<T>(*params_); }

  FusionLayer<T> fusion_grads(GradStore<T>& g) const {
    return bind_fusion([&](const std::string& n) { return g[params_->index_of(n)].view(); });
  }
  EncoderParams<T> encoder_grads(GradStore<T>& g) const {
    return bind_encoder([&](const std::string& n) { return g[params_->index_of(n)].view(); });
  }

  // Most recent max_len items of `context`, right-aligned in the padded length.
  std::vector<std::size_t> right_align(std::span<const std::size_t> context) const {
    const std::size_t n = cfg_.padded_len();
    const std::size_t keep = std::min(context.size(), cfg_.max_len);
    std::vector<std::size_t> ids(n, 0);
    std::copy(context.end() - static_cast<std::ptrdiff_t>(keep), context.end(), ids.end() - static_cast<std::ptrdiff_t>(keep));
    return ids;
  }

  struct Trace {
    std::vector<std::size_t> ids;
    std::size_t length = 0;
    FusionCache<T> fusion;
    EncoderCache<T> encoder;
    std::vector<T> repr;
  };

  // Sequence representation for a chronological context (oldest first).
  std::vector<T> represent(std::span<const std::size_t> context, bool training = false, std::mt19937_64* rng = nullptr,
                           Trace* trace = nullptr) const {
    if (context.empty()) throw InvalidArgument("model: empty context");
    for (auto id : context) {
      if (id == 0 || id > cfg_.num_items) throw InvalidArgument("model: unknown item id " + std::to_string(id));
    }
    auto ids = right_align(context);
    const std::size_t length = std::min(context.size(), cfg_.max_len);
    Matrix<T> v = fuse_sequence<T>(ids, fusion_, *text_, cfg_.switches, plan_, training, rng,
                                   trace ? &trace->fusion : nullptr);
    auto repr = encode_sequence<T>(v.view(), length, encoder_, training, rng, trace ? &trace->encoder : nullptr);
    if (trace) {
      trace->ids = std::move(ids);
      trace->length = length;
      trace->repr = repr;
    }
    return repr;
  }

  // Rows 1..|V| of the item table, i.e. the candidates scored by the head.
  MatrixView<const T> item_table() const { return MatrixView<const T>(fusion_.id_table).row_range(1, cfg_.num_items); }

  // Raw scores x . e_i for items 1..|V| (index i - 1).
  std::vector<T> logits(std::span<const std::size_t> context) const {
    auto repr = represent(context);
    return item_logits<T>(repr, item_table());
  }

  std::vector<T> probabilities(std::span<const std::size_t> context) const {
    auto repr = represent(context);
    return score_items<T>(repr, item_table());
  }

  // Forward + backward for one (context, target) sample. Gradients are
  // scaled by `scale` and accumulated into `grads`. Returns the unscaled loss.
  T accumulate_gradients(std::span<const std::size_t> context, std::size_t target, GradStore<T>& grads, T scale,
                         bool training, std::mt19937_64* rng) const {
    Trace tr;
    represent(context, training, rng, &tr);
    auto g_fusion = fusion_grads(grads);
    auto g_encoder = encoder_grads(grads);
    std::vector<T> grad_repr(cfg_.d);
    const LossConfig lc{cfg_.temperature};
    const T loss = cross_entropy_accumulate<T>(tr.repr, item_table(), target, lc, grad_repr,
                                               g_fusion.id_table.row_range(1, cfg_.num_items), scale);
    if (!std::isfinite(static_cast<double>(loss))) throw NumericError("non-finite loss");
    Matrix<T> dv = encode_sequence_backward<T>(tr.encoder, encoder_, grad_repr, g_encoder);
    fuse_sequence_backward<T>(tr.fusion, fusion_, cfg_.switches, plan_, dv.view(), g_fusion);
    return loss;
  }

  T loss(std::span<const std::size_t> context, std::size_t target) const {
    auto repr = represent(context);
    std::vector<T> grad_repr(cfg_.d);
    Matrix<T> grad_items(cfg_.num_items, cfg_.d);
    return cross_entropy_accumulate<T>(repr, item_table(), target, LossConfig{cfg_.temperature}, grad_repr,
                                       grad_items.view());
  }

 private:
  void register_parameters() {
    auto& p = *params_;
    const std::size_t n = cfg_.padded_len(), d = cfg_.d, dt = cfg_.text_dim, g = cfg_.experts;
    const auto w = InitSpec::normal(cfg_.init_std);
    p.add("item_embedding", {cfg_.num_items + 1, d}, w);
    if (cfg_.switches.use_moe_modulation) {
      p.add("modulation.shift", {g, n, dt}, InitSpec::normal(cfg_.modulation_std));
      p.add("modulation.projection", {g, dt, d}, w);
      p.add("modulation.router", {dt, g}, w);
    } else {
      p.add("text_projection.weight", {dt, d}, w);
      p.add("text_projection.bias", {d}, InitSpec::zeros());
    }
    const bool identity = cfg_.filter_init == "identity";
    p.add("fusion.filter_re", {cfg_.bins(), d}, identity ? InitSpec::ones() : w);
    p.add("fusion.filter_im", {cfg_.bins(), d}, identity ? InitSpec::zeros() : w);
    p.add("fusion.gate_f.weight", {d}, InitSpec::zeros());
    p.add("fusion.gate_f.bias", {1}, InitSpec::zeros());
    p.add("fusion.gate_e.weight", {d}, InitSpec::zeros());
    p.add("fusion.gate_e.bias", {1}, InitSpec::zeros());
    p.add("encoder.positional", {n, d}, w);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string pre = "encoder.layer" + std::to_string(l) + ".";
      for (const char* m : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) p.add(pre + m, {d, d}, w);
      for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) p.add(pre + b, {d}, InitSpec::zeros());
      p.add(pre + "ln1.gain", {d}, InitSpec::ones());
      p.add(pre + "ln1.bias", {d}, InitSpec::zeros());
      p.add(pre + "ffn.w1", {d, cfg_.d_ff}, w);
      p.add(pre + "ffn.b1", {cfg_.d_ff}, InitSpec::zeros());
      p.add(pre + "ffn.w2", {cfg_.d_ff, d}, w);
      p.add(pre + "ffn.b2", {d}, InitSpec::zeros());
      p.add(pre + "ln2.gain", {d}, InitSpec::ones());
      p.add(pre + "ln2.bias", {d}, InitSpec::zeros());
    }
  }

  template <class Resolve>
  FusionLayer<T> bind_fusion(Resolve r) const {
    FusionLayer<T> f;
    f.id_table = r("item_embedding");
    if (cfg_.switches.use_moe_modulation) {
      f.experts.experts = cfg_.experts;
      f.experts.positions = cfg_.padded_len();
      f.experts.noise_std = cfg_.noise_std;
      f.experts.modulation = r("modulation.shift");
      f.experts.projections = r("modulation.projection");
      f.experts.router = r("modulation.router");
    } else {
      f.raw_projection.weight = r("text_projection.weight");
      f.raw_projection.bias = r("text_projection.bias");
    }
    f.fusion.filter_re = r("fusion.filter_re");
    f.fusion.filter_im = r("fusion.filter_im");
    f.fusion.gate_f_weight = r("fusion.gate_f.weight");
    f.fusion.gate_f_bias = r("fusion.gate_f.bias");
    f.fusion.gate_e_weight = r("fusion.gate_e.weight");
    f.fusion.gate_e_bias = r("fusion.gate_e.bias");
    return f;
  }

  template <class Resolve>
  EncoderParams<T> bind_encoder(Resolve r) const {
    EncoderParams<T> e;
    e.positional = r("encoder.positional");
    e.heads = cfg_.heads;
    e.ln_eps = cfg_.ln_eps;
    e.dropout = cfg_.dropout;
    e.pre_norm = cfg_.pre_norm;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string pre = "encoder.layer" + std::to_string(l) + ".";
      EncoderLayerParams<T> lp;
      lp.wq = r(pre + "attn.wq");
      lp.wk = r(pre + "attn.wk");
      lp.wv = r(pre + "attn.wv");
      lp.wo = r(pre + "attn.wo");
      lp.bq = r(pre + "attn.bq");
      lp.bk = r(pre + "attn.bk");
      lp.bv = r(pre + "attn.bv");
      lp.bo = r(pre + "attn.bo");
      lp.ln1_gain = r(pre + "ln1.gain");
      lp.ln1_bias = r(pre + "ln1.bias");
      lp.w1 = r(pre + "ffn.w1");
      lp.b1 = r(pre + "ffn.b1");
      lp.w2 = r(pre + "ffn.w2");
      lp.b2 = r(pre + "ffn.b2");
      lp.ln2_gain = r(pre + "ln2.gain");
      lp.ln2_bias = r(pre + "ln2.bias");
      e.layers.push_back(lp);
    }
    return e;
  }

  ModelConfig cfg_;
  std::shared_ptr<const TextEmbeddingStore> text_;
  FftPlan<T> plan_;
  std::unique_ptr<ParamStore<T>> params_;
  FusionLayer<T> fusion_;
  EncoderParams<T> encoder_;
};

}  // namespace tedrec
