#pragma once

#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "sngp/model.hpp"

namespace sngp {

struct TrainLogEntry {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;

  friend bool operator==(const TrainLogEntry&, const TrainLogEntry&) = default;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

inline void write_train_log_csv(std::ostream& os, const TrainLog& log) {
  os << "epoch,train_loss,val_loss,val_acc,lr\n";
  for (const auto& e : log.entries)
    os << e.epoch << ',' << detail::format_double(e.train_loss) << ',' << detail::format_double(e.val_loss) << ','
       << detail::format_double(e.val_acc) << ',' << detail::format_double(e.lr) << '\n';
}

/// One power-iteration round per hidden weight followed by projection onto
/// the spectral ball. No-op when the encoder has spectral norm disabled.
inline void apply_spectral_projection(ModelBundle& m, int iterations) {
  if (!m.encoder.config.spectral_norm) return;
  for (std::size_t b = 0; b < m.encoder.blocks.size(); ++b) {
    auto& w = m.encoder.blocks[b].inner.weight;
    auto& st = m.spectral[b];
    const double sigma = power_iteration(w, st, iterations);
    project_in_place(w, sigma, st.bound);
  }
}

/// Final projection with the long iteration count; records the post-projection
/// estimate in each state's last_sigma.
inline void finalize_spectral(ModelBundle& m) {
  if (!m.encoder.config.spectral_norm) return;
  apply_spectral_projection(m, m.encoder.config.final_power_iterations);
  for (std::size_t b = 0; b < m.encoder.blocks.size(); ++b)
    power_iteration(m.encoder.blocks[b].inner.weight, m.spectral[b], m.encoder.config.final_power_iterations);
}

struct EvalLoss {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline EvalLoss evaluate_loss(const ModelBundle& m, const Dataset& ds) {
  if (ds.size() == 0) return {};
  const Matrix logits = raw_logits(m, ds.features);
  const auto ce = cross_entropy(logits, ds.labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto r = logits.row(i);
    const auto top = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    if (static_cast<int>(top) == ds.labels[i]) ++correct;
  }
  return {ce.loss, static_cast<double>(correct) / static_cast<double>(ds.size())};
}

struct TrainResult {
  ModelBundle model;
  TrainLog log;
};

/// Minibatch AdamW training with per-seed shuffling, the spectral hook after
/// every step, and early stopping that restores the best-validation weights.
inline TrainResult train(ModelBundle model, const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  if (train_ds.num_features() != model.encoder.config.input_dim)
    throw InvalidArgument("train: dataset has " + std::to_string(train_ds.num_features()) + " features, model expects " +
                          std::to_string(model.encoder.config.input_dim));
  TrainResult result;
  if (cfg.max_epochs == 0 || train_ds.size() == 0) {
    model.trained = true;
    result.model = std::move(model);
    return result;
  }

  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  Rng dropout_rng(derive_seed(cfg.seed, 2));
  OptimizerState opt;
  opt.weight_decay = cfg.weight_decay;

  const bool use_dropout = model.encoder.config.dropout_rate > 0.0;
  const bool has_val = val_ds.size() > 0;
  const bool minimize = cfg.early_stop_metric == EarlyStopMetric::val_loss;

  std::vector<std::size_t> order(train_ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  ModelBundle best = model;
  double best_score = 0.0;
  bool have_best = false;
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    opt.lr = lr_at_epoch(cfg, epoch);
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = select_rows(train_ds.features, idx);
      std::vector<int> yb;
      yb.reserve(idx.size());
      for (std::size_t i : idx) yb.push_back(train_ds.labels[i]);

      auto lg = loss_and_grad(model, xb, yb, use_dropout, &dropout_rng);
      if (!std::isfinite(lg.loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index));
      loss_sum += lg.loss * static_cast<double>(idx.size());
      const auto params = parameter_views(model);
      const auto grads = gradient_views(lg.grad, model.is_gp());
      try {
        optimizer_step(params, grads, opt);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      apply_spectral_projection(model, model.encoder.config.power_iterations);
    }

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(order.size());
    entry.lr = opt.lr;
    if (has_val) {
      const auto ev = evaluate_loss(model, val_ds);
      entry.val_loss = ev.loss;
      entry.val_acc = ev.accuracy;
    }
    result.log.entries.push_back(entry);

    if (!has_val) continue;
    const double score = minimize ? entry.val_loss : entry.val_acc;
    const bool improved = !have_best || (minimize ? score < best_score - 1e-12 : score > best_score + 1e-12);
    if (improved) {
      best = model;
      best_score = score;
      have_best = true;
      result.log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      result.log.stopped_early = true;
      break;
    }
  }

  if (has_val) model = std::move(best);
  else result.log.best_epoch = result.log.entries.back().epoch;
  finalize_spectral(model);
  model.trained = true;
  result.model = std::move(model);
  return result;
}

}  // namespace sngp
