#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <thread>
#include <vector>

#include "tedrec/adam.hpp"
#include "tedrec/data.hpp"
#include "tedrec/eval.hpp"
#include "tedrec/model.hpp"

namespace tedrec {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

struct TrainConfig {
  std::size_t batch_size = 2048;
  std::size_t max_epochs = 300;
  std::size_t patience = 10;
  AdamConfig adam;
  std::uint64_t seed = 42;
  std::size_t workers = 1;
  EvalConfig eval;
  std::size_t select_k = 10;  // early stopping watches validation NDCG@select_k
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean per-sample training loss
  std::size_t steps = 0;
  std::vector<MetricAtK> valid;
  double valid_ndcg = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_valid_ndcg = -1.0;
  bool early_stopped = false;
  double seconds = 0.0;
};

// Mean loss over one batch; gradients (already divided by the batch size) are
// left in `grads`. Each sample draws dropout/noise from its own stream, so the
// worker count does not change which random numbers a sample sees.
template <class T>
double batch_gradients(const TedRecModel<T>& model, const SequenceBatch& batch, GradStore<T>& grads, std::uint64_t seed,
                       std::size_t workers, bool training = true) {
  const std::size_t count = batch.size();
  const T scale = T{1} / static_cast<T>(count);
  std::vector<double> losses(count, 0.0);
  auto run = [&](std::size_t lo, std::size_t hi, GradStore<T>& g) {
    for (std::size_t b = lo; b < hi; ++b) {
      std::mt19937_64 rng(mix_seed(seed, b));
      losses[b] = static_cast<double>(model.accumulate_gradients(batch.context(b), batch.targets[b], g, scale, training, &rng));
    }
  };
  grads.zero();
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    run(0, count, grads);
  } else {
    std::vector<GradStore<T>> local;
    for (std::size_t w = 0; w < workers; ++w) local.push_back(model.make_grads());
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          run(std::min(count, w * chunk), std::min(count, (w + 1) * chunk), local[w]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (auto& g : local) grads.add(g);
  }
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(count);
}

template <class T>
EvalResult evaluate_model(const TedRecModel<T>& model, const DatasetSplit& split, Phase phase, const EvalConfig& cfg) {
  return full_sort_evaluate(split, phase, [&](std::span<const std::size_t> ctx) { return model.logits(ctx); }, cfg);
}

// Trains with Adam and early stopping on validation NDCG@select_k. On return
// the model holds the parameters of the best epoch.
template <class T>
TrainResult train_model(TedRecModel<T>& model, const DatasetSplit& split, const TrainConfig& cfg,
                        const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (split.num_items() != model.config().num_items) {
    throw DataError("dataset has " + std::to_string(split.num_items()) + " items but the model was built for " +
                    std::to_string(model.config().num_items));
  }
  EvalConfig eval_cfg = cfg.eval;
  if (std::find(eval_cfg.ks.begin(), eval_cfg.ks.end(), cfg.select_k) == eval_cfg.ks.end()) {
    eval_cfg.ks.push_back(cfg.select_k);
  }
  eval_cfg.workers = cfg.workers;

  const auto start = std::chrono::steady_clock::now();
  AdamState<T> adam(model.params(), cfg.adam);
  GradStore<T> grads = model.make_grads();
  TrainResult result;
  auto best = model.params().snapshot();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const auto batches = make_training_batches(split, model.config().max_len, cfg.batch_size, mix_seed(cfg.seed, epoch, 1));
    double loss_sum = 0.0;
    std::size_t samples = 0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& batch = batches[step];
      const double loss = batch_gradients(model, batch, grads, mix_seed(cfg.seed, epoch, 1000 + step), cfg.workers);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step + 1));
      }
      adam_step(model.params(), grads, adam);
      loss_sum += loss * static_cast<double>(batch.size());
      samples += batch.size();
    }

    EpochLog log;
    log.epoch = epoch;
    log.steps = batches.size();
    log.loss = samples ? loss_sum / static_cast<double>(samples) : 0.0;
    const auto ev = evaluate_model(model, split, Phase::Valid, eval_cfg);
    log.valid = ev.metrics;
    log.valid_ndcg = ev.at(cfg.select_k).ndcg;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);

    if (log.valid_ndcg > result.best_valid_ndcg) {
      result.best_valid_ndcg = log.valid_ndcg;
      result.best_epoch = epoch;
      best = model.params().snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  model.params().restore(best);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

inline nlohmann::ordered_json to_json(const TrainResult& r, std::size_t select_k = 10) {
  nlohmann::ordered_json j;
  auto epochs = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"loss", e.loss},
                      {"steps", e.steps},
                      {"valid", metrics_json(e.valid)},
                      {"seconds", e.seconds}});
  }
  j["epochs"] = std::move(epochs);
  j["best_epoch"] = r.best_epoch;
  j["best_valid_ndcg@" + std::to_string(select_k)] = r.best_valid_ndcg;
  j["early_stopped"] = r.early_stopped;
  j["seconds"] = r.seconds;
  return j;
}

}  // namespace tedrec
